//! Trains a small NOVA model on a generated successor-rule dataset and
//! reports held-out hit rates.
//!
//! cargo run --release --example synthetic_training -- [epochs] [f32|f64]

use std::time::Instant;

use nova_rec::data::{leave_one_out_split, synthetic};
use nova_rec::embed::{FeatureLayout, FusionKind};
use nova_rec::model::{AttentionKind, Model, ModelConfig};
use nova_rec::tensor::Scalar;
use nova_rec::train::{hit_rate, rank_all, train, TrainConfig};

fn run<T: Scalar>(epochs: usize) -> nova_rec::Result<()> {
    let ds = synthetic::successor_walk(100, 500, 20, 1);
    let split = leave_one_out_split(&ds.sequences)?;
    let cfg = ModelConfig {
        hidden_size: 64,
        heads: 2,
        layers: 2,
        max_len: 20,
        fusion: FusionKind::Add,
        attention: AttentionKind::Nova,
        ..ModelConfig::default()
    };
    let layout = FeatureLayout::from_dataset(&ds, None)?;
    let model = Model::<T>::new(cfg, layout, 1)?;
    let tc = TrainConfig {
        lr: 1e-3,
        epochs,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(model, &ds, &split, &tc, |log| {
        println!(
            "epoch {:3}  loss {:.4}  val HR@10 {:.3}  {:.2}s",
            log.epoch,
            log.mean_loss,
            log.validation_hr10.unwrap_or(f64::NAN),
            log.seconds
        );
    })?;
    let ranks = rank_all(&out.best, &ds, &split.test, 256)?;
    println!(
        "best epoch {}  test HR@1 {:.3}  HR@10 {:.3}  ({:.1}s, {})",
        out.best_epoch,
        hit_rate(&ranks, 1),
        hit_rate(&ranks, 10),
        start.elapsed().as_secs_f64(),
        T::NAME
    );
    Ok(())
}

fn main() -> nova_rec::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    match args.get(2).map(String::as_str) {
        Some("f32") => run::<f32>(epochs),
        _ => run::<f64>(epochs),
    }
}
