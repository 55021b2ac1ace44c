//! Run configuration, checkpoints, attention dumps and cost profiling.

mod checkpoint;
pub mod commands;
mod config;
mod dump;
mod profile;

pub use checkpoint::{AdamMeta, Checkpoint, CheckpointMeta, MAGIC, VERSION};
pub use config::{RunConfig, REQUIRED_KEYS};
pub use dump::{attention_matrices, dump_attention, matrix_csv, matrix_pgm, read_matrix_csv, AttentionMatrix, DumpOptions};
pub use profile::{profile_cost, Breakdown, CostProfile, EmbeddingCost, GELU_FLOPS, LAYER_NORM_FLOPS, SOFTMAX_FLOPS};
