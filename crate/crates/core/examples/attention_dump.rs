//! Trains a small model for a few epochs and writes per-head attention
//! matrices (CSV and PGM) for six sampled sequences.
//!
//! cargo run --release --example attention_dump -- [out-dir]

use std::path::PathBuf;

use nova_rec::data::{leave_one_out_split, synthetic};
use nova_rec::embed::FeatureLayout;
use nova_rec::model::{Model, ModelConfig};
use nova_rec::tools::{dump_attention, DumpOptions};
use nova_rec::train::{train, TrainConfig};

fn main() -> nova_rec::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "attention".into()));
    let ds = synthetic::rating_branch(60, 200, 12, 4);
    let split = leave_one_out_split(&ds.sequences)?;
    let cfg = ModelConfig { hidden_size: 32, heads: 4, layers: 2, max_len: 12, ..ModelConfig::default() };
    let model = Model::<f64>::new(cfg, FeatureLayout::from_dataset(&ds, None)?, 0)?;
    let tc = TrainConfig { lr: 3e-3, epochs: 10, batch_size: 32, ..TrainConfig::default() };
    let model = train(model, &ds, &split, &tc, |_| {})?.best;

    let mats = dump_attention(&model, &ds, &DumpOptions::default(), &out)?;
    for m in mats.iter().filter(|m| m.head == 0) {
        let last = m.weights.last().unwrap();
        let peak = last.iter().cloned().fold(0.0, f64::max);
        println!("sample {} (user {}): {}x{}; last query's largest weight {peak:.3}", m.sample, m.user, last.len(), last.len());
    }
    println!("wrote {} matrices to {}", mats.len(), out.display());
    Ok(())
}
