//! Trains one model per side-information subset (none, item, behavior, all)
//! and prints the ablation table as CSV.
//!
//! cargo run --release --example ablation -- [epochs]

use nova_rec::data::{leave_one_out_split, synthetic};
use nova_rec::model::ModelConfig;
use nova_rec::train::{ablate, ablation_csv, SideSubset, TrainConfig};

fn main() -> nova_rec::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let ds = synthetic::random_with_features(40, 200, 12, 9);
    let split = leave_one_out_split(&ds.sequences)?;
    let cfg = ModelConfig { hidden_size: 32, heads: 2, layers: 2, max_len: 12, ..ModelConfig::default() };
    let tc = TrainConfig { lr: 1e-3, epochs, batch_size: 32, ..TrainConfig::default() };
    let rows = ablate(&ds, &split, &cfg, &tc, &SideSubset::ALL)?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
