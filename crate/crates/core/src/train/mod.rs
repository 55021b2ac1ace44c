//! Optimization, training loop, ranking evaluation and ablation.

mod ablation;
mod metrics;
mod optim;
mod trainer;

pub use ablation::{ablate, ablation_csv, AblationRow, SideSubset};
pub use metrics::{
    evaluate, fingerprint, hit_rate, ndcg, popularity_baseline, popularity_counts,
    popularity_ranks, rank_all, rank_of, MetricsReport,
};
pub use optim::{clip_global_norm, lr_schedule, Adam};
pub use trainer::{train, EpochLog, TrainConfig, TrainOutcome};
