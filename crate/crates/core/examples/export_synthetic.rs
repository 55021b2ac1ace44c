//! Writes a generated dataset in the loader's file formats, ready for the
//! `nova` binary.
//!
//! cargo run --example export_synthetic -- <out-dir> [features|branch|walk]

use std::path::PathBuf;

use nova_rec::data::{load_interactions, synthetic, write_interactions, write_items};

fn main() -> nova_rec::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let ds = match args.next().as_deref() {
        Some("branch") => synthetic::rating_branch(100, 500, 20, 11),
        Some("walk") => synthetic::successor_walk(100, 500, 20, 1),
        _ => synthetic::random_with_features(40, 200, 12, 7),
    };
    std::fs::create_dir_all(&out).expect("create output directory");
    let (inter, items, schema) = (out.join("interactions.tsv"), out.join("items.tsv"), out.join("schema.txt"));
    write_interactions(&ds, &inter)?;
    write_items(&ds, &items)?;
    std::fs::write(&schema, ds.schema.to_text()).expect("write schema");
    let back = load_interactions(&inter, Some(&items), &ds.schema)?;
    assert_eq!(back.stats(), ds.stats());
    println!("{}", serde_json::to_string(&ds.stats())?);
    Ok(())
}
