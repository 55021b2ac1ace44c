//! The next item depends only on the previous interaction's rating. NOVA is
//! trained once with the rating feature and once without it.
//!
//! cargo run --release --example side_info_utility -- [epochs] [seed] [lr]

use nova_rec::data::{leave_one_out_split, synthetic};
use nova_rec::embed::{FeatureLayout, FusionKind};
use nova_rec::model::{AttentionKind, Model, ModelConfig};
use nova_rec::train::{hit_rate, rank_all, train, TrainConfig};

fn main() -> nova_rec::Result<()> {
    let arg = |i: usize| std::env::args().nth(i);
    let epochs = arg(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let seed: u64 = arg(2).and_then(|a| a.parse().ok()).unwrap_or(42);
    let lr: f64 = arg(3).and_then(|a| a.parse().ok()).unwrap_or(3e-3);
    let ds = synthetic::rating_branch(100, 500, 20, 11);
    let split = leave_one_out_split(&ds.sequences)?;
    for features in [vec!["rating".to_string()], vec![]] {
        let cfg = ModelConfig {
            hidden_size: 64,
            heads: 4,
            layers: 2,
            max_len: 20,
            fusion: FusionKind::Add,
            attention: AttentionKind::Nova,
            features: Some(features.clone()),
            ..ModelConfig::default()
        };
        let layout = FeatureLayout::from_dataset(&ds, Some(&features))?;
        let model = Model::<f64>::new(cfg, layout, seed)?;
        let tc = TrainConfig {
            lr,
            epochs,
            batch_size: 32,
            seed,
            ..TrainConfig::default()
        };
        let out = train(model, &ds, &split, &tc, |log| {
            if log.epoch % 10 == 0 {
                println!(
                    "  epoch {:3}  loss {:.4}  val HR@10 {:.3}",
                    log.epoch,
                    log.mean_loss,
                    log.validation_hr10.unwrap_or(f64::NAN)
                );
            }
        })?;
        let ranks = rank_all(&out.best, &ds, &split.test, 256)?;
        println!(
            "features {:?}: test HR@1 {:.3}  HR@10 {:.3}",
            features,
            hit_rate(&ranks, 1),
            hit_rate(&ranks, 10)
        );
    }
    Ok(())
}
