//! The command-line workflows as library calls. Each writes its outputs into
//! an output directory guarded by a `.lock` marker.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::RunConfig;
use super::dump::{dump_attention, DumpOptions};
use super::profile::{profile_cost, CostProfile, EmbeddingCost};
use crate::data::{leave_one_out_split, load_interactions, movielens, Dataset, SideInfoSchema, SplitDataset};
use crate::embed::FeatureLayout;
use crate::error::{Error, Result};
use crate::model::{AttentionKind, Model, ModelConfig};
use crate::tensor::Scalar;
use crate::train::{ablate, ablation_csv, evaluate, fingerprint, train, MetricsReport, SideSubset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(format!("unknown precision `{other}` (f32|f64)")),
        }
    }
}

/// Interaction log, optional items file and optional schema file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub data: PathBuf,
    pub items: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

impl DataPaths {
    pub fn load(&self) -> Result<Dataset> {
        let schema = match &self.schema {
            Some(p) => SideInfoSchema::load(p)?,
            None => SideInfoSchema::empty(),
        };
        load_interactions(&self.data, self.items.as_deref(), &schema)
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    marker: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let marker = dir.join(".lock");
        std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&marker)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Config(format!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    dir.display(),
                    marker.display()
                )),
                _ => Error::io(&marker, e),
            })?;
        Ok(Self { marker })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.marker);
    }
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn split(dataset: &Dataset) -> Result<SplitDataset> {
    let s = dataset.stats();
    log::info!(
        "{} users, {} items, {} records, mean length {:.1}",
        s.users,
        s.items,
        s.records,
        s.mean_len
    );
    leave_one_out_split(&dataset.sequences)
}

fn run_fingerprint(cfg: &RunConfig) -> Result<String> {
    Ok(fingerprint(&serde_json::to_string(&(&cfg.model, &cfg.train))?))
}

/// Converts MovieLens-1M `ratings.dat` / `movies.dat` into
/// `interactions.tsv`, `items.tsv` and `schema.txt`.
pub fn prepare_data(ratings: &Path, movies: &Path, out: &Path) -> Result<()> {
    let _lock = OutputLock::acquire(out)?;
    let (inter, items) = movielens::convert(ratings, movies)?;
    write(out.join("interactions.tsv"), &inter)?;
    write(out.join("items.tsv"), &items)?;
    write(out.join("schema.txt"), movielens::SCHEMA)?;
    let ds = load_interactions(
        &out.join("interactions.tsv"),
        Some(&out.join("items.tsv")),
        &movielens::schema(),
    )?;
    write(out.join("stats.json"), &serde_json::to_string(&ds.stats())?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub validation_hr10: Option<f64>,
    pub test: MetricsReport,
}

fn train_typed<T: Scalar>(cfg: &RunConfig, ds: &Dataset, split: &SplitDataset, out: &Path) -> Result<TrainSummary> {
    let layout = FeatureLayout::from_dataset(ds, cfg.model.features.as_deref())?;
    let model = Model::<T>::new(cfg.model.clone(), layout, cfg.train.seed)?;
    let mut log_lines = String::new();
    let outcome = train(model, ds, split, &cfg.train, |e| {
        let _ = writeln!(log_lines, "{}", serde_json::to_string(e).expect("log serializes"));
    })?;
    write(out.join("train_log.jsonl"), &log_lines)?;
    let best_metric = outcome.best_hr10.is_finite().then_some(outcome.best_hr10);
    let meta = CheckpointMeta {
        epoch: outcome.best_epoch,
        seed: cfg.train.seed,
        best_metric,
        train: Some(cfg.train.clone()),
    };
    Checkpoint::from_model(&outcome.best, meta, Some(&outcome.optimizer)).save(&out.join("checkpoint.bin"))?;
    let test = evaluate(&outcome.best, ds, &split.test, cfg.train.eval_batch_size, &run_fingerprint(cfg)?)?;
    write(out.join("metrics.json"), &format!("{}\n", test.to_json_line()))?;
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        validation_hr10: best_metric,
        test,
    })
}

/// Trains, keeps the best validation checkpoint and reports test metrics.
/// Writes `checkpoint.bin`, `metrics.json`, `train_log.jsonl`, `config.ini`.
pub fn train_run(cfg: &RunConfig, data: &DataPaths, out: &Path, precision: Precision) -> Result<TrainSummary> {
    let _lock = OutputLock::acquire(out)?;
    write(out.join("config.ini"), &cfg.to_text())?;
    let ds = data.load()?;
    let split = split(&ds)?;
    match precision {
        Precision::F32 => train_typed::<f32>(cfg, &ds, &split, out),
        Precision::F64 => train_typed::<f64>(cfg, &ds, &split, out),
    }
}

fn evaluate_typed<T: Scalar>(ck: &Checkpoint, ds: &Dataset, split: &SplitDataset) -> Result<MetricsReport> {
    let model: Model<T> = ck.to_model()?;
    let layout = FeatureLayout::from_dataset(ds, ck.model.features.as_deref())?;
    if layout != ck.layout {
        return Err(Error::Config(
            "dataset vocabularies do not match the checkpoint (different data or schema?)".into(),
        ));
    }
    let fp = fingerprint(&serde_json::to_string(&(&ck.model, &ck.meta.train))?);
    let batch = ck.meta.train.as_ref().map_or(256, |t| t.eval_batch_size);
    evaluate(&model, ds, &split.test, batch, &fp)
}

/// Test-split metrics of a saved checkpoint; writes `metrics.json` when
/// `out` is given.
pub fn evaluate_checkpoint(checkpoint: &Path, data: &DataPaths, out: Option<&Path>, precision: Precision) -> Result<MetricsReport> {
    let _lock = out.map(OutputLock::acquire).transpose()?;
    let ck = Checkpoint::load(checkpoint)?;
    let ds = data.load()?;
    let split = split(&ds)?;
    let report = match precision {
        Precision::F32 => evaluate_typed::<f32>(&ck, &ds, &split)?,
        Precision::F64 => evaluate_typed::<f64>(&ck, &ds, &split)?,
    };
    if let Some(dir) = out {
        write(dir.join("metrics.json"), &format!("{}\n", report.to_json_line()))?;
    }
    Ok(report)
}

/// One run per side-information subset; writes `ablation.csv`.
pub fn ablate_run(cfg: &RunConfig, data: &DataPaths, out: &Path) -> Result<String> {
    let _lock = OutputLock::acquire(out)?;
    let ds = data.load()?;
    let split = split(&ds)?;
    let rows = ablate(&ds, &split, &cfg.model, &cfg.train, &SideSubset::ALL)?;
    let csv = ablation_csv(&rows);
    write(out.join("ablation.csv"), &csv)?;
    Ok(csv)
}

/// Attention maps of a checkpoint into `out/attention/`.
pub fn dump_attention_run(checkpoint: &Path, data: &DataPaths, opts: &DumpOptions, out: &Path) -> Result<usize> {
    let _lock = OutputLock::acquire(out)?;
    let ck = Checkpoint::load(checkpoint)?;
    let ds = data.load()?;
    let model: Model<f64> = ck.to_model()?;
    let mats = dump_attention(&model, &ds, opts, &out.join("attention"))?;
    Ok(mats.len())
}

/// Cost profile of the configured model on the dataset's vocabularies;
/// writes `profile.json`.
pub fn profile_run(model: &ModelConfig, data: &DataPaths, out: &Path, cost: EmbeddingCost) -> Result<CostProfile> {
    let _lock = OutputLock::acquire(out)?;
    model.validate()?;
    let ds = data.load()?;
    let layout = FeatureLayout::from_dataset(&ds, model.features.as_deref())?;
    let profile = profile_cost(model, &layout, cost);
    write(out.join("profile.json"), &serde_json::to_string_pretty(&profile)?)?;
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub attention: AttentionKind,
    pub summary: TrainSummary,
    pub flops: u64,
    pub params: u64,
}

/// Invasive and NOVA trained from the same seed; writes `compare.csv` and
/// returns the rows.
pub fn compare_run(cfg: &RunConfig, data: &DataPaths, out: &Path, precision: Precision) -> Result<Vec<CompareRow>> {
    let _lock = OutputLock::acquire(out)?;
    let ds = data.load()?;
    let split = split(&ds)?;
    let mut rows = Vec::new();
    for attention in [AttentionKind::Invasive, AttentionKind::Nova] {
        let mut c = cfg.clone();
        c.model.attention = attention;
        let dir = out.join(attention.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(dir.join("config.ini"), &c.to_text())?;
        let summary = match precision {
            Precision::F32 => train_typed::<f32>(&c, &ds, &split, &dir)?,
            Precision::F64 => train_typed::<f64>(&c, &ds, &split, &dir)?,
        };
        let layout = FeatureLayout::from_dataset(&ds, c.model.features.as_deref())?;
        let p = profile_cost(&c.model, &layout, EmbeddingCost::Lookup);
        rows.push(CompareRow {
            attention,
            summary,
            flops: p.total_flops,
            params: p.params,
        });
    }
    write(out.join("compare.csv"), &compare_table(&rows))?;
    Ok(rows)
}

/// One CSV row per model plus a `diff` row (NOVA minus invasive).
pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::from("model,hr5,hr10,ndcg5,ndcg10,flops,params\n");
    let line = |name: &str, m: [f64; 4], flops: i128, params: i128| {
        format!("{name},{:.6},{:.6},{:.6},{:.6},{flops},{params}\n", m[0], m[1], m[2], m[3])
    };
    let metrics = |r: &CompareRow| {
        let t = &r.summary.test;
        [t.hr5, t.hr10, t.ndcg5, t.ndcg10]
    };
    for r in rows {
        s.push_str(&line(&r.attention.to_string(), metrics(r), r.flops as i128, r.params as i128));
    }
    if let [a, b] = rows {
        let (ma, mb) = (metrics(a), metrics(b));
        let d = [mb[0] - ma[0], mb[1] - ma[1], mb[2] - ma[2], mb[3] - ma[3]];
        s.push_str(&line("diff", d, b.flops as i128 - a.flops as i128, b.params as i128 - a.params as i128));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(Error::Config(_))));
        drop(a);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }
}
