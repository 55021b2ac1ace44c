//! Full-vocabulary ranking metrics and the popularity baseline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{BatchContext, Dataset, EvalCase, InteractionSequence};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub users: usize,
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[usize], fingerprint: impl Into<String>) -> Self {
        Self {
            hr5: hit_rate(ranks, 5),
            hr10: hit_rate(ranks, 10),
            ndcg5: ndcg(ranks, 5),
            ndcg10: ndcg(ranks, 10),
            users: ranks.len(),
            fingerprint: fingerprint.into(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users    {}", self.users)?;
        writeln!(f, "HR@5     {:.4}", self.hr5)?;
        writeln!(f, "HR@10    {:.4}", self.hr10)?;
        writeln!(f, "NDCG@5   {:.4}", self.ndcg5)?;
        write!(f, "NDCG@10  {:.4}", self.ndcg10)
    }
}

/// 1-based rank of column `target` among `scores`. Items scoring strictly
/// higher, and items with equal score and a smaller ID, rank ahead.
pub fn rank_of<T: PartialOrd + Copy>(scores: &[T], target: usize) -> usize {
    let t = scores[target];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count();
    ahead + 1
}

pub fn hit_rate(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn ndcg(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let gain: f64 = ranks
        .iter()
        .filter(|&&r| r <= k)
        .map(|&r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    gain / ranks.len() as f64
}

/// Rank of every case's target when the model scores all items at the
/// appended query slot.
pub fn rank_all<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    cases: &[EvalCase],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let ctx = BatchContext::new(&dataset.schema, &dataset.catalog, model.config.max_len)?;
    let mut ranks = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(batch_size.max(1)) {
        let pairs: Vec<(&[_], usize)> = chunk.iter().map(|c| (&c.prefix[..], c.target)).collect();
        let batch = ctx.eval_batch(&pairs)?;
        let scores = model.score_last(&batch)?;
        let m = model.num_items();
        for (row, case) in chunk.iter().enumerate() {
            ranks.push(rank_of(&scores.data()[row * m..(row + 1) * m], case.target - 1));
        }
    }
    Ok(ranks)
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    cases: &[EvalCase],
    batch_size: usize,
    fingerprint: &str,
) -> Result<MetricsReport> {
    let ranks = rank_all(model, dataset, cases, batch_size)?;
    Ok(MetricsReport::from_ranks(&ranks, fingerprint))
}

/// Training-set frequency of each item; index `j` holds item `j + 1`.
pub fn popularity_counts(train: &[InteractionSequence], num_items: usize) -> Vec<usize> {
    let mut counts = vec![0; num_items];
    for s in train {
        for it in &s.interactions {
            counts[it.item - 1] += 1;
        }
    }
    counts
}

/// Items by descending training frequency, ties by smaller ID.
pub fn popularity_baseline(train: &[InteractionSequence], num_items: usize) -> Vec<usize> {
    let counts = popularity_counts(train, num_items);
    let mut items: Vec<usize> = (1..=num_items).collect();
    items.sort_by(|&a, &b| counts[b - 1].cmp(&counts[a - 1]).then(a.cmp(&b)));
    items
}

/// Ranks of the targets under the popularity ranking.
pub fn popularity_ranks(train: &[InteractionSequence], num_items: usize, cases: &[EvalCase]) -> Vec<usize> {
    let counts = popularity_counts(train, num_items);
    cases.iter().map(|c| rank_of(&counts, c.target - 1)).collect()
}

/// Stable 64-bit FNV-1a hash, rendered as hex.
pub fn fingerprint(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
