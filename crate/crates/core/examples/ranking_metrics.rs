//! Ranks, hit rate and NDCG, including the tie rule, plus the popularity
//! baseline on a generated dataset.
//!
//! cargo run --example ranking_metrics

use nova_rec::data::{leave_one_out_split, synthetic};
use nova_rec::train::{popularity_baseline, popularity_ranks, rank_of, MetricsReport};

fn main() -> nova_rec::Result<()> {
    let scores = [0.3, 0.9, 0.3, 0.1, 0.3];
    for target in 0..scores.len() {
        println!("item {} score {:.1} -> rank {}", target + 1, scores[target], rank_of(&scores, target));
    }

    let ds = synthetic::random_with_features(30, 300, 12, 2);
    let split = leave_one_out_split(&ds.sequences)?;
    let top: Vec<usize> = popularity_baseline(&split.train, ds.num_items()).into_iter().take(10).collect();
    println!("\nmost popular items: {top:?}");
    let ranks = popularity_ranks(&split.train, ds.num_items(), &split.test);
    println!("popularity baseline on the test targets:\n{}", MetricsReport::from_ranks(&ranks, "popularity"));
    Ok(())
}
