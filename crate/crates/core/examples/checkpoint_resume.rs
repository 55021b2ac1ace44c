//! Saves a model with its optimizer state, reloads it, and checks that the
//! reloaded model scores identically and the file round-trips byte for byte.
//!
//! cargo run --example checkpoint_resume

use nova_rec::data::{leave_one_out_split, synthetic};
use nova_rec::embed::FeatureLayout;
use nova_rec::model::{Model, ModelConfig};
use nova_rec::tools::{Checkpoint, CheckpointMeta};
use nova_rec::train::{evaluate, train, TrainConfig};

fn main() -> nova_rec::Result<()> {
    let ds = synthetic::random_with_features(25, 80, 10, 1);
    let split = leave_one_out_split(&ds.sequences)?;
    let cfg = ModelConfig { hidden_size: 16, heads: 2, layers: 1, max_len: 10, ..ModelConfig::default() };
    let tc = TrainConfig { lr: 1e-3, epochs: 3, batch_size: 16, ..TrainConfig::default() };
    let model = Model::<f64>::new(cfg, FeatureLayout::from_dataset(&ds, None)?, tc.seed)?;
    let out = train(model, &ds, &split, &tc, |l| println!("epoch {} loss {:.4}", l.epoch, l.mean_loss))?;

    let meta = CheckpointMeta { epoch: out.best_epoch, seed: tc.seed, best_metric: Some(out.best_hr10), train: Some(tc.clone()) };
    let path = std::env::temp_dir().join("nova-example-checkpoint.bin");
    let ckpt = Checkpoint::from_model(&out.best, meta, Some(&out.optimizer));
    ckpt.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    assert_eq!(loaded.to_bytes(), ckpt.to_bytes());

    let restored: Model<f64> = loaded.to_model()?;
    let a = evaluate(&out.best, &ds, &split.test, 64, "original")?;
    let b = evaluate(&restored, &ds, &split.test, 64, "restored")?;
    println!("original {}\nrestored {}", a.to_json_line(), b.to_json_line());
    println!("optimizer step restored: {:?}", loaded.to_adam::<f64>().map(|o| o.step));
    std::fs::remove_file(&path).ok();
    Ok(())
}
