//! Conversion of the MovieLens-1M `::`-separated files into the loader's TSV
//! layout: `ratings.dat` (UserID::MovieID::Rating::Timestamp) and
//! `movies.dat` (MovieID::Title (Year)::Genre|Genre).

use std::fmt::Write as _;
use std::path::Path;

use super::SideInfoSchema;
use crate::error::{Error, Result};

pub const SCHEMA: &str = "\
year.kind = item
year.encoding = categorical
genres.kind = item
genres.encoding = multi
rating.kind = behavior
rating.encoding = categorical
";

pub fn schema() -> SideInfoSchema {
    SideInfoSchema::parse(SCHEMA, Path::new("<movielens>")).expect("built-in schema parses")
}

/// `movies.dat` ships as Latin-1; every byte maps to the same code point.
fn read_latin1(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

/// Release year from a title such as `Toy Story (1995)`.
pub fn title_year(title: &str) -> Option<&str> {
    let t = title.trim_end();
    let inner = t.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    let year = &inner[open + 1..];
    (year.len() == 4 && year.bytes().all(|b| b.is_ascii_digit())).then_some(year)
}

fn fields<'a>(path: &Path, line_no: usize, line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split("::").collect();
    if f.len() != n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("expected {n} `::`-separated fields, found {}", f.len()),
        });
    }
    Ok(f)
}

/// Converts the raw files into the TSV text of (interactions, items).
pub fn convert(ratings: &Path, movies: &Path) -> Result<(String, String)> {
    let mut inter = String::from("user_id\titem_id\ttimestamp\trating\n");
    let text = read_latin1(ratings)?;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(ratings, n + 1, line, 4)?;
        let _ = writeln!(inter, "{}\t{}\t{}\t{}", f[0], f[1], f[3].trim(), f[2]);
    }
    let mut items = String::from("item_id\tyear\tgenres\n");
    let text = read_latin1(movies)?;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(movies, n + 1, line, 3)?;
        let year = title_year(f[1]).unwrap_or("");
        let _ = writeln!(items, "{}\t{}\t{}", f[0], year, f[2].trim());
    }
    Ok((inter, items))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_from_title() {
        assert_eq!(title_year("Toy Story (1995)"), Some("1995"));
        assert_eq!(title_year("City of Lost Children, The (1995) "), Some("1995"));
        assert_eq!(title_year("Untitled"), None);
    }

    #[test]
    fn converts_small_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path().join("ratings.dat");
        let m = dir.path().join("movies.dat");
        std::fs::write(&r, "1::10::5::978300760\n1::20::3::978302109\n").unwrap();
        std::fs::write(&m, b"10::Caf\xe9 (1999)::Drama|Comedy\n20::X (2000)::Action\n").unwrap();
        let (inter, items) = convert(&r, &m).unwrap();
        assert_eq!(inter.lines().nth(1), Some("1\t10\t978300760\t5"));
        assert_eq!(items.lines().nth(1), Some("10\t1999\tDrama|Comedy"));
    }
}
