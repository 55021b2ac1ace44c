use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::metrics::{evaluate, fingerprint, MetricsReport};
use super::trainer::{train, TrainConfig};
use crate::data::{Dataset, FeatureKind, SplitDataset};
use crate::embed::FeatureLayout;
use crate::error::Result;
use crate::model::{Model, ModelConfig};

/// Side-information subsets compared by [`ablate`]. Position is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SideSubset {
    None,
    Item,
    Behavior,
    All,
}

impl SideSubset {
    pub const ALL: [SideSubset; 4] = [Self::None, Self::Item, Self::Behavior, Self::All];

    /// Schema features selected by this subset.
    pub fn features(self, dataset: &Dataset) -> Vec<String> {
        let keep = |kind: FeatureKind| match self {
            Self::None => false,
            Self::Item => kind == FeatureKind::Item,
            Self::Behavior => kind == FeatureKind::Behavior,
            Self::All => true,
        };
        dataset
            .schema
            .features()
            .iter()
            .filter(|d| keep(d.kind))
            .map(|d| d.name.clone())
            .collect()
    }
}

impl fmt::Display for SideSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "None",
            Self::Item => "Item",
            Self::Behavior => "Behavior",
            Self::All => "All",
        })
    }
}

impl FromStr for SideSubset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "item" => Ok(Self::Item),
            "behavior" => Ok(Self::Behavior),
            "all" => Ok(Self::All),
            other => Err(format!("unknown subset `{other}` (none|item|behavior|all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub subset: SideSubset,
    pub features: Vec<String>,
    pub metrics: MetricsReport,
}

/// Trains and tests one model per subset, all from the same seeds.
pub fn ablate(
    dataset: &Dataset,
    split: &SplitDataset,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    subsets: &[SideSubset],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(subsets.len());
    for &subset in subsets {
        let features = subset.features(dataset);
        let mut cfg = base.clone();
        cfg.use_position = true;
        cfg.features = Some(features.clone());
        let layout = FeatureLayout::from_dataset(dataset, Some(&features))?;
        let model = Model::<f64>::new(cfg.clone(), layout, train_cfg.seed)?;
        log::info!("ablation {subset}: features {features:?}");
        let out = train(model, dataset, split, train_cfg, |_| {})?;
        let fp = fingerprint(&serde_json::to_string(&(&cfg, train_cfg))?);
        let metrics = evaluate(&out.best, dataset, &split.test, train_cfg.eval_batch_size, &fp)?;
        rows.push(AblationRow {
            subset,
            features,
            metrics,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("subset,features,hr5,hr10,ndcg5,ndcg10,users\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.subset,
            r.features.join("+"),
            m.hr5,
            m.hr10,
            m.ndcg5,
            m.ndcg10,
            m.users
        ));
    }
    out
}
