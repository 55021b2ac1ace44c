//! Converts MovieLens-1M `ratings.dat` / `movies.dat` into the interaction
//! TSV, items TSV and schema used everywhere else, then loads and splits it.
//! Without arguments a few inline records are converted instead.
//!
//! cargo run --release --example movielens_prepare -- [ml-1m-dir] [out-dir]

use std::path::PathBuf;

use nova_rec::data::leave_one_out_split;
use nova_rec::tools::commands::{prepare_data, DataPaths};

const RATINGS: &str = "1::1193::5::978300760\n1::661::3::978302109\n1::914::3::978301968\n1::3408::4::978300275\n1::2355::5::978824291\n1::1197::3::978302268\n";
const MOVIES: &str = "1193::One Flew Over the Cuckoo's Nest (1975)::Drama\n661::James and the Giant Peach (1996)::Animation|Children's|Musical\n914::My Fair Lady (1964)::Musical|Romance\n3408::Erin Brockovich (2000)::Drama\n2355::Bug's Life, A (1998)::Animation|Children's|Comedy\n1197::Princess Bride, The (1987)::Action|Adventure|Comedy|Romance\n";

fn main() -> nova_rec::Result<()> {
    let mut args = std::env::args().skip(1);
    let src = args.next().map(PathBuf::from);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "ml-1m-prepared".into()));
    let tmp = tempdir();
    let (ratings, movies) = match &src {
        Some(dir) => (dir.join("ratings.dat"), dir.join("movies.dat")),
        None => {
            std::fs::write(tmp.join("ratings.dat"), RATINGS).expect("write sample");
            std::fs::write(tmp.join("movies.dat"), MOVIES).expect("write sample");
            (tmp.join("ratings.dat"), tmp.join("movies.dat"))
        }
    };
    prepare_data(&ratings, &movies, &out)?;
    let ds = DataPaths {
        data: out.join("interactions.tsv"),
        items: Some(out.join("items.tsv")),
        schema: Some(out.join("schema.txt")),
    }
    .load()?;
    println!("{}", std::fs::read_to_string(out.join("stats.json")).unwrap_or_default());
    for (decl, vocab) in ds.schema.features().iter().zip(&ds.vocabs) {
        println!("{:<8} {:?} vocabulary {}", decl.name, decl.kind, vocab.size());
    }
    let split = leave_one_out_split(&ds.sequences)?;
    println!("{} users; first test target item {}", split.test.len(), ds.catalog.raw_id(split.test[0].target));
    Ok(())
}

fn tempdir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nova-ml1m-sample-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("create temp dir");
    dir
}
