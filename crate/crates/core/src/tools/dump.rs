//! Attention-matrix export: one CSV and one grayscale PGM per sample and head.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BatchContext, Dataset, Interaction};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DumpOptions {
    pub samples: usize,
    pub layer: usize,
    pub seed: u64,
}

impl Default for DumpOptions {
    fn default() -> Self {
        Self {
            samples: 6,
            layer: 0,
            seed: 0,
        }
    }
}

/// Attention of one head over the non-padding part of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub sample: usize,
    pub user: String,
    pub head: usize,
    /// Row-major `n × n`; row `i` is the distribution of query `i`.
    pub weights: Vec<Vec<f64>>,
}

/// Attention maps of `layer` for each sequence (most recent `L` items, no
/// masking), cropped to the non-padding slots.
pub fn attention_matrices<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    users: &[usize],
    layer: usize,
) -> Result<Vec<AttentionMatrix>> {
    let l = model.config.max_len;
    let ctx = BatchContext::new(&dataset.schema, &dataset.catalog, l)?;
    let seqs: Vec<&[Interaction]> = users
        .iter()
        .map(|&u| &dataset.sequences[u].interactions[..])
        .collect();
    let batch = ctx.plain_batch(&seqs)?;
    let maps = model.attention_maps(&batch, layer)?;
    let heads = model.config.heads;
    let data = maps.data();
    let mut out = Vec::with_capacity(users.len() * heads);
    for (s, &u) in users.iter().enumerate() {
        let n = batch.row_len(s);
        let first = l - n;
        for head in 0..heads {
            let base = (s * heads + head) * l * l;
            let weights = (first..l)
                .map(|q| {
                    (first..l)
                        .map(|k| data[base + q * l + k].as_f64())
                        .collect()
                })
                .collect();
            out.push(AttentionMatrix {
                sample: s,
                user: dataset.sequences[u].user.clone(),
                head,
                weights,
            });
        }
    }
    Ok(out)
}

pub fn matrix_csv(weights: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in weights {
        let cells: Vec<String> = row.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            line.split(',')
                .map(|c| {
                    c.trim().parse().map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        msg: format!("`{c}`: {e}"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Binary PGM, one pixel per cell, `255 · (1 − w)`: darker is higher.
pub fn matrix_pgm(weights: &[Vec<f64>]) -> Vec<u8> {
    let n = weights.len();
    let w = weights.first().map_or(0, Vec::len);
    let mut out = format!("P5\n{w} {n}\n255\n").into_bytes();
    for row in weights {
        out.extend(
            row.iter()
                .map(|&x| (255.0 * (1.0 - x.clamp(0.0, 1.0))).round() as u8),
        );
    }
    out
}

/// Samples users (seeded), writes `{sample}_{head}.csv` and `.pgm` into
/// `dir`, plus `samples.tsv` mapping sample numbers to users. A request for
/// more samples than users is clamped.
pub fn dump_attention<T: Scalar>(
    model: &Model<T>,
    dataset: &Dataset,
    opts: &DumpOptions,
    dir: &Path,
) -> Result<Vec<AttentionMatrix>> {
    let total = dataset.sequences.len();
    let mut n = opts.samples;
    if n > total {
        log::warn!("{n} samples requested but only {total} sequences; dumping {total}");
        n = total;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut users = sample(&mut rng, total, n).into_vec();
    users.sort_unstable();
    let mats = attention_matrices(model, dataset, &users, opts.layer)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |p: PathBuf, bytes: &[u8]| std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e));
    let mut index = String::from("sample\tuser\tlength\n");
    for m in &mats {
        if m.head == 0 {
            let _ = writeln!(index, "{}\t{}\t{}", m.sample, m.user, m.weights.len());
        }
        let stem = format!("{}_{}", m.sample, m.head);
        write(dir.join(format!("{stem}.csv")), matrix_csv(&m.weights).as_bytes())?;
        write(dir.join(format!("{stem}.pgm")), &matrix_pgm(&m.weights))?;
    }
    write(dir.join("samples.tsv"), index.as_bytes())?;
    Ok(mats)
}
