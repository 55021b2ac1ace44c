//! End-to-end runs of the `nova` binary on small generated datasets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nova_rec::data::{synthetic, write_interactions, write_items, Dataset};
use nova_rec::embed::FeatureLayout;
use nova_rec::model::{Model, ModelConfig};
use nova_rec::tools::{read_matrix_csv, Checkpoint, CheckpointMeta};
use nova_rec::train::MetricsReport;

fn nova(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nova"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn nova")
}

fn export(ds: &Dataset, dir: &Path) -> [PathBuf; 3] {
    let paths = [dir.join("interactions.tsv"), dir.join("items.tsv"), dir.join("schema.txt")];
    write_interactions(ds, &paths[0]).unwrap();
    write_items(ds, &paths[1]).unwrap();
    std::fs::write(&paths[2], ds.schema.to_text()).unwrap();
    paths
}

fn data_args(p: &[PathBuf; 3]) -> Vec<String> {
    vec![
        "--data".into(),
        p[0].display().to_string(),
        "--items".into(),
        p[1].display().to_string(),
        "--schema".into(),
        p[2].display().to_string(),
    ]
}

fn run(args: Vec<String>) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    nova(&refs)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn random_checkpoint(ds: &Dataset, cfg: ModelConfig, path: &Path) {
    let layout = FeatureLayout::from_dataset(ds, cfg.features.as_deref()).unwrap();
    let model = Model::<f64>::new(cfg, layout, 5).unwrap();
    Checkpoint::from_model(&model, CheckpointMeta::default(), None).save(path).unwrap();
}

#[test]
fn missing_hidden_size_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let paths = export(&synthetic::random_with_features(10, 20, 6, 1), dir.path());
    let cfg = dir.path().join("run.ini");
    std::fs::write(&cfg, "heads = 2\nlayers = 1\n").unwrap();
    let mut args = vec!["train".into(), "--config".into(), cfg.display().to_string()];
    args.extend(data_args(&paths));
    args.extend(["--out".into(), dir.path().join("out").display().to_string()]);
    let o = run(args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("hidden_size"), "{}", stderr(&o));
}

#[test]
fn unknown_item_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let paths = export(&synthetic::random_with_features(10, 20, 6, 1), dir.path());
    let mut items = std::fs::read_to_string(&paths[1]).unwrap();
    let first = items.lines().nth(1).unwrap().to_string();
    items = items.replacen(&format!("{first}\n"), "", 1);
    std::fs::write(&paths[1], items).unwrap();
    let cfg = dir.path().join("run.ini");
    std::fs::write(&cfg, "hidden_size = 8\nheads = 2\n").unwrap();
    let mut args = vec!["profile".into(), "--config".into(), cfg.display().to_string()];
    args.extend(data_args(&paths));
    args.extend(["--out".into(), dir.path().join("out").display().to_string()]);
    let o = run(args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("unknown item"), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let paths = export(&synthetic::random_with_features(10, 20, 6, 1), dir.path());
    let ckpt = dir.path().join("bad.bin");
    std::fs::write(&ckpt, b"NOVA-CHECKPOINT\nversion 1\nheader 3\n{}").unwrap();
    let mut args = vec!["evaluate".into(), "--checkpoint".into(), ckpt.display().to_string()];
    args.extend(data_args(&paths));
    let o = run(args);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn random_model_evaluates_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic::random_with_features(20, 400, 8, 2);
    let paths = export(&ds, dir.path());
    let ckpt = dir.path().join("init.bin");
    random_checkpoint(
        &ds,
        ModelConfig { hidden_size: 16, heads: 2, layers: 2, max_len: 10, ..ModelConfig::default() },
        &ckpt,
    );
    let mut args = vec!["evaluate".into(), "--checkpoint".into(), ckpt.display().to_string()];
    args.extend(data_args(&paths));
    let o = run(args);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = String::from_utf8_lossy(&o.stdout).lines().next().unwrap().to_string();
    let m: MetricsReport = serde_json::from_str(&line).unwrap();
    assert_eq!(m.users, 400);
    // 10 of 20 items are in the top 10; sd of the mean is 0.025 at n = 400
    assert!((m.hr10 - 0.5).abs() < 0.1, "HR@10 {}", m.hr10);
}

#[test]
fn train_then_evaluate_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let paths = export(&synthetic::random_with_features(15, 40, 8, 3), dir.path());
    let cfg = dir.path().join("run.ini");
    std::fs::write(
        &cfg,
        "hidden_size = 8\nheads = 2\nlayers = 1\nmax_len = 8\nepochs = 2\nbatch_size = 16\nlr = 1e-3\nfusion = gating\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train".into(), "--config".into(), cfg.display().to_string()];
    args.extend(data_args(&paths));
    args.extend(["--out".into(), out.display().to_string()]);
    let o = run(args);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.ini", "train_log.jsonl", "checkpoint.bin", "metrics.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join(".lock").exists());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let saved: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();

    let mut args = vec!["evaluate".into(), "--checkpoint".into(), out.join("checkpoint.bin").display().to_string()];
    args.extend(data_args(&paths));
    let o = run(args);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = String::from_utf8_lossy(&o.stdout).lines().next().unwrap().to_string();
    let again: MetricsReport = serde_json::from_str(&line).unwrap();
    assert_eq!(saved, again);
}

#[test]
fn dump_attention_default_layout() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic::random_with_features(20, 30, 7, 4);
    let paths = export(&ds, dir.path());
    let ckpt = dir.path().join("init.bin");
    random_checkpoint(
        &ds,
        ModelConfig { hidden_size: 16, heads: 4, layers: 2, max_len: 10, ..ModelConfig::default() },
        &ckpt,
    );
    let out = dir.path().join("dump");
    let mut args = vec!["dump-attention".into(), "--checkpoint".into(), ckpt.display().to_string()];
    args.extend(data_args(&paths));
    args.extend(["--out".into(), out.display().to_string()]);
    let o = run(args);
    assert!(o.status.success(), "{}", stderr(&o));
    let att = out.join("attention");
    for s in 0..6 {
        for h in 0..4 {
            let w = read_matrix_csv(&att.join(format!("{s}_{h}.csv"))).unwrap();
            assert_eq!(w.len(), 7);
            for row in &w {
                assert_eq!(row.len(), 7);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            let pgm = std::fs::read(att.join(format!("{s}_{h}.pgm"))).unwrap();
            assert!(pgm.starts_with(b"P5\n7 7\n255\n"));
        }
    }
    assert!(!att.join("6_0.csv").exists());
    assert!(!att.join("0_4.csv").exists());
    assert_eq!(std::fs::read_to_string(att.join("samples.tsv")).unwrap().lines().count(), 7);
}

#[test]
fn profile_writes_consistent_totals() {
    let dir = tempfile::tempdir().unwrap();
    let paths = export(&synthetic::random_with_features(12, 20, 6, 1), dir.path());
    let cfg = dir.path().join("run.ini");
    std::fs::write(&cfg, "hidden_size = 8\nheads = 2\nlayers = 2\nmax_len = 6\n").unwrap();
    let out = dir.path().join("p");
    let mut args = vec!["profile".into(), "--config".into(), cfg.display().to_string()];
    args.extend(data_args(&paths));
    args.extend(["--out".into(), out.display().to_string()]);
    let o = run(args);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("profile.json")).unwrap()).unwrap();
    let parts: u64 = v["flops"].as_object().unwrap().values().map(|x| x.as_u64().unwrap()).sum();
    assert_eq!(parts, v["total_flops"].as_u64().unwrap());
    assert_eq!(v["param_bytes"].as_u64().unwrap(), 4 * v["params"].as_u64().unwrap());
}
