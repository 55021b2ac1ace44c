//! Generated datasets with known structure, used for sanity checks and demos.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Encoding, FeatureDecl, FeatureKind, RawInteraction, SideInfoSchema};

/// Rating values of [`rating_branch`]: the first selects the `+1` successor.
pub const BRANCH_RATINGS: [&str; 2] = ["1", "5"];
/// Offset of the second successor branch of [`rating_branch`].
pub const BRANCH_JUMP: usize = 7;

fn build(schema: SideInfoSchema, records: Vec<RawInteraction>) -> Dataset {
    Dataset::build(schema, records, None, Path::new("<synthetic>"))
        .expect("synthetic records are well formed")
}

fn successor(item: usize, step: usize, num_items: usize) -> usize {
    (item - 1 + step) % num_items + 1
}

/// Every sequence walks the item ring: `next = current + 1 (mod m)`, starting
/// from a uniformly random item. No side information.
pub fn successor_walk(num_items: usize, num_seqs: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(num_seqs * len);
    for u in 0..num_seqs {
        let mut item = rng.gen_range(1..=num_items);
        for t in 0..len {
            records.push(RawInteraction {
                user: u.to_string(),
                item: item.to_string(),
                timestamp: t as i64,
                behavior: vec![],
                line: 0,
            });
            item = successor(item, 1, num_items);
        }
    }
    build(SideInfoSchema::empty(), records)
}

/// Schema of [`rating_branch`]: a single binary behavior feature.
pub fn rating_schema() -> SideInfoSchema {
    SideInfoSchema::new(vec![FeatureDecl {
        name: "rating".into(),
        kind: FeatureKind::Behavior,
        encoding: Encoding::Categorical,
    }])
    .expect("valid schema")
}

/// The next item depends on the previous interaction's rating: a low rating
/// steps to `current + 1`, a high one jumps to `current + BRANCH_JUMP`
/// (mod m). Ratings are fair coin flips, so the branch cannot be inferred from
/// item IDs alone.
pub fn rating_branch(num_items: usize, num_seqs: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(num_seqs * len);
    for u in 0..num_seqs {
        let mut item = rng.gen_range(1..=num_items);
        for t in 0..len {
            let high = rng.gen_bool(0.5);
            records.push(RawInteraction {
                user: u.to_string(),
                item: item.to_string(),
                timestamp: t as i64,
                behavior: vec![BRANCH_RATINGS[high as usize].to_string()],
                line: 0,
            });
            let step = if high { BRANCH_JUMP } else { 1 };
            item = successor(item, step, num_items);
        }
    }
    build(rating_schema(), records)
}

/// Random interactions over a small catalog with one item feature (multi-valued
/// genre) and one behavior feature (rating). Useful for exercising every code
/// path on tiny models.
pub fn random_with_features(num_items: usize, num_seqs: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = SideInfoSchema::new(vec![
        FeatureDecl {
            name: "year".into(),
            kind: FeatureKind::Item,
            encoding: Encoding::Categorical,
        },
        FeatureDecl {
            name: "genre".into(),
            kind: FeatureKind::Item,
            encoding: Encoding::MultiCategorical,
        },
        FeatureDecl {
            name: "rating".into(),
            kind: FeatureKind::Behavior,
            encoding: Encoding::Categorical,
        },
    ])
    .expect("valid schema");
    let genres = ["a", "b", "c", "d"];
    let mut items = HashMap::new();
    for i in 1..=num_items {
        let year = 1990 + rng.gen_range(0..4);
        let g1 = genres[rng.gen_range(0..genres.len())];
        let g2 = genres[rng.gen_range(0..genres.len())];
        items.insert(i.to_string(), vec![year.to_string(), format!("{g1}|{g2}")]);
    }
    let mut records = Vec::new();
    for u in 0..num_seqs {
        for t in 0..len {
            records.push(RawInteraction {
                user: u.to_string(),
                item: rng.gen_range(1..=num_items).to_string(),
                timestamp: t as i64,
                behavior: vec![rng.gen_range(1..=5).to_string()],
                line: 0,
            });
        }
    }
    Dataset::build(schema, records, Some(&items), Path::new("<synthetic>"))
        .expect("synthetic records are well formed")
}
