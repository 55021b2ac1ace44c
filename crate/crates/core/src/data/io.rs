use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, FeatureKind, RawInteraction, SideInfoSchema};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 3] = ["user_id", "item_id", "timestamp"];

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Maps each expected column name to its position in the header.
fn header_columns(path: &Path, header: &str, expected: &[&str]) -> Result<Vec<usize>> {
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols.len() != expected.len() {
        return Err(parse_err(
            path,
            1,
            format!("header has {} columns, expected {:?}", cols.len(), expected),
        ));
    }
    expected
        .iter()
        .map(|name| {
            cols.iter()
                .position(|c| c == name)
                .ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))
        })
        .collect()
}

/// Loads an interaction TSV (`user_id, item_id, timestamp, <behavior features>`)
/// and an optional items TSV (`item_id, <item features>`).
pub fn load_interactions(
    interactions: &Path,
    items: Option<&Path>,
    schema: &SideInfoSchema,
) -> Result<Dataset> {
    let behavior: Vec<&str> = schema
        .indices_of_kind(FeatureKind::Behavior)
        .into_iter()
        .map(|i| schema.features()[i].name.as_str())
        .collect();
    let item_cols: Vec<&str> = schema
        .indices_of_kind(FeatureKind::Item)
        .into_iter()
        .map(|i| schema.features()[i].name.as_str())
        .collect();

    let text = read(interactions)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(interactions, 1, "empty file"))?;
    let mut expected: Vec<&str> = FIXED_COLUMNS.to_vec();
    expected.extend(&behavior);
    let cols = header_columns(interactions, header, &expected)?;

    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != expected.len() {
            return Err(parse_err(
                interactions,
                line_no,
                format!("expected {} fields, found {}", expected.len(), fields.len()),
            ));
        }
        let timestamp = fields[cols[2]]
            .trim()
            .parse::<i64>()
            .map_err(|e| parse_err(interactions, line_no, format!("bad timestamp: {e}")))?;
        records.push(RawInteraction {
            user: fields[cols[0]].trim().to_string(),
            item: fields[cols[1]].trim().to_string(),
            timestamp,
            behavior: cols[3..].iter().map(|&c| fields[c].trim().to_string()).collect(),
            line: line_no,
        });
    }

    let item_map = match items {
        Some(path) => Some(load_items(path, &item_cols)?),
        None => None,
    };
    Dataset::build(schema.clone(), records, item_map.as_ref(), interactions)
}

fn load_items(path: &Path, features: &[&str]) -> Result<HashMap<String, Vec<String>>> {
    let text = read(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let mut expected = vec!["item_id"];
    expected.extend(features);
    let cols = header_columns(path, header, &expected)?;
    let mut out = HashMap::new();
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != expected.len() {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} fields, found {}", expected.len(), fields.len()),
            ));
        }
        let id = fields[cols[0]].trim().to_string();
        let values = cols[1..].iter().map(|&c| fields[c].trim().to_string()).collect();
        if out.insert(id.clone(), values).is_some() {
            return Err(parse_err(path, line_no, format!("duplicate item `{id}`")));
        }
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the dataset's interactions back out in the loader's TSV format.
pub fn write_interactions(dataset: &Dataset, path: &Path) -> Result<()> {
    let behavior = dataset.schema.indices_of_kind(FeatureKind::Behavior);
    let mut out = String::from("user_id\titem_id\ttimestamp");
    for &fi in &behavior {
        out.push('\t');
        out.push_str(&dataset.schema.features()[fi].name);
    }
    out.push('\n');
    for seq in &dataset.sequences {
        for it in &seq.interactions {
            let _ = write!(out, "{}\t{}\t{}", seq.user, dataset.catalog.raw_id(it.item), it.timestamp);
            for (col, &fi) in behavior.iter().enumerate() {
                out.push('\t');
                out.push_str(&dataset.decode_value(fi, &it.behavior[col]));
            }
            out.push('\n');
        }
    }
    write(path, &out)
}

/// Writes the catalog's item features in the loader's TSV format.
pub fn write_items(dataset: &Dataset, path: &Path) -> Result<()> {
    let item_feats = dataset.schema.indices_of_kind(FeatureKind::Item);
    let mut out = String::from("item_id");
    for &fi in &item_feats {
        out.push('\t');
        out.push_str(&dataset.schema.features()[fi].name);
    }
    out.push('\n');
    for item in 1..=dataset.num_items() {
        out.push_str(dataset.catalog.raw_id(item));
        for (col, &fi) in item_feats.iter().enumerate() {
            out.push('\t');
            out.push_str(&dataset.decode_value(fi, &dataset.catalog.item_features(item)[col]));
        }
        out.push('\n');
    }
    write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn schema() -> SideInfoSchema {
        SideInfoSchema::parse(
            "genre.kind = item\ngenre.encoding = multi\nrating.kind = behavior\nrating.encoding = categorical\n",
            Path::new("s"),
        )
        .unwrap()
    }

    fn write_tmp(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_tmp(
            dir.path(),
            "i.tsv",
            "user_id\titem_id\ttimestamp\trating\nu\ta\t1\t5\nu\ta\tnot-a-time\t5\n",
        );
        let items = write_tmp(dir.path(), "m.tsv", "item_id\tgenre\na\tx|y\n");
        match load_interactions(&inter, Some(&items), &schema()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_item_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_tmp(
            dir.path(),
            "i.tsv",
            "user_id\titem_id\ttimestamp\trating\nu\ta\t1\t5\nu\tzz\t2\t5\n",
        );
        let items = write_tmp(dir.path(), "m.tsv", "item_id\tgenre\na\tx\n");
        match load_interactions(&inter, Some(&items), &schema()).unwrap_err() {
            Error::UnknownItem { item, line, .. } => {
                assert_eq!(item, "zz");
                assert_eq!(line, 3);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn header_must_match_schema() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_tmp(dir.path(), "i.tsv", "user_id\titem_id\ttimestamp\n");
        assert!(load_interactions(&inter, None, &schema()).is_err());
    }
}
