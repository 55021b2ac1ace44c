//! Embedding tables for item IDs and side features, and the fusion functions
//! that merge several width-`h` feature vectors into one.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset, FeatureColumn, FeatureKind};
use crate::error::{Error, Result};
use crate::params::{uniform, xavier, BoundParams, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Half-width of the uniform embedding initializer.
pub const EMBED_INIT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Add,
    Concat,
    Gating,
}

impl FromStr for FusionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "add" => Ok(Self::Add),
            "concat" => Ok(Self::Concat),
            "gating" => Ok(Self::Gating),
            other => Err(format!("unknown fusion `{other}` (add|concat|gating)")),
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Add => "add",
            Self::Concat => "concat",
            Self::Gating => "gating",
        })
    }
}

/// Normalization of the gating logits `F·W^F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateActivation {
    /// Softmax across the fused features: gates are a convex combination.
    Softmax,
    /// Independent logistic gate per feature.
    Sigmoid,
}

impl FromStr for GateActivation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(format!("unknown gate activation `{other}` (softmax|sigmoid)")),
        }
    }
}

impl fmt::Display for GateActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Softmax => "softmax",
            Self::Sigmoid => "sigmoid",
        })
    }
}

/// One side feature the model embeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Rows of the embedding table, reserved entries included.
    pub vocab_size: usize,
    pub multi: bool,
    /// Column of this feature in [`Batch::features`].
    pub column: usize,
}

/// Data-derived sizes the model is built against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub num_items: usize,
    /// Selected features: item-kind first, then behavior-kind, schema order within.
    pub features: Vec<FeatureSpec>,
}

impl serde::Serialize for FeatureKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for FeatureKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "item" => Ok(FeatureKind::Item),
            "behavior" => Ok(FeatureKind::Behavior),
            other => Err(serde::de::Error::custom(format!("unknown feature kind `{other}`"))),
        }
    }
}

impl FeatureLayout {
    /// Layout for the named features of a dataset (`None` = all of them).
    pub fn from_dataset(dataset: &Dataset, selection: Option<&[String]>) -> Result<Self> {
        let decls = dataset.schema.features();
        if let Some(sel) = selection {
            for name in sel {
                if dataset.schema.index_of(name).is_none() {
                    return Err(Error::Config(format!("unknown feature `{name}`")));
                }
            }
        }
        let chosen = |name: &str| selection.is_none_or(|s| s.iter().any(|n| n == name));
        let mut features = Vec::new();
        for kind in [FeatureKind::Item, FeatureKind::Behavior] {
            for (column, decl) in decls.iter().enumerate() {
                if decl.kind == kind && chosen(&decl.name) {
                    features.push(FeatureSpec {
                        name: decl.name.clone(),
                        kind,
                        vocab_size: dataset.vocabs[column].size(),
                        multi: decl.encoding.is_multi(),
                        column,
                    });
                }
            }
        }
        Ok(Self {
            num_items: dataset.num_items(),
            features,
        })
    }

    /// Layout without side features.
    pub fn ids_only(num_items: usize) -> Self {
        Self {
            num_items,
            features: Vec::new(),
        }
    }
}

/// Parameter handles of every embedding table.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    /// `(m + 2) × h`: padding, items `1..=m`, mask token.
    pub id_table: ParamId,
    pub features: Vec<ParamId>,
    /// `L × h`, absent when positions are disabled.
    pub position: Option<ParamId>,
    pub hidden: usize,
}

impl EmbeddingSet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        layout: &FeatureLayout,
        hidden: usize,
        max_len: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let id_table = store.add(
            "embed.item",
            uniform(&[layout.num_items + 2, hidden], EMBED_INIT, rng),
        );
        let features = layout
            .features
            .iter()
            .map(|f| {
                store.add(
                    format!("embed.feature.{}", f.name),
                    uniform(&[f.vocab_size, hidden], EMBED_INIT, rng),
                )
            })
            .collect();
        let position =
            max_len.map(|l| store.add("embed.position", uniform(&[l, hidden], EMBED_INIT, rng)));
        Self {
            id_table,
            features,
            position,
            hidden,
        }
    }

    /// Number of side inputs besides the item ID (features plus position).
    pub fn side_count(&self) -> usize {
        self.features.len() + usize::from(self.position.is_some())
    }

    /// Item-ID embeddings `[B, L, h]` of a batch.
    pub fn id_embeddings<T: Scalar>(&self, tape: &mut Tape<T>, bound: &BoundParams, batch: &Batch) -> Result<Var> {
        tape.gather_rows(
            bound.var(self.id_table),
            &batch.items,
            &[batch.batch_size, batch.seq_len, self.hidden],
        )
    }

    /// Side-information embeddings `[B, L, h]`, one per feature and then the
    /// position. Multi-valued features are mean-pooled.
    pub fn side_embeddings<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        layout: &FeatureLayout,
        batch: &Batch,
    ) -> Result<Vec<Var>> {
        let shape = [batch.batch_size, batch.seq_len, self.hidden];
        let mut out = Vec::with_capacity(self.side_count());
        for (spec, &table) in layout.features.iter().zip(&self.features) {
            let column = batch.features.get(spec.column).ok_or_else(|| {
                Error::Config(format!("batch has no column for feature `{}`", spec.name))
            })?;
            let var = match column {
                FeatureColumn::Single(idx) => tape.gather_rows(bound.var(table), idx, &shape)?,
                FeatureColumn::Multi { offsets, rows } => {
                    tape.bag_mean(bound.var(table), offsets, rows, &shape)?
                }
            };
            out.push(var);
        }
        if let Some(pos) = self.position {
            out.push(tape.gather_rows(bound.var(pos), &batch.positions, &shape)?);
        }
        Ok(out)
    }
}

/// Fusion function together with its trainable parameters.
#[derive(Debug, Clone)]
pub struct FusionSpec {
    pub kind: FusionKind,
    pub gate: GateActivation,
    /// Concat: `(k·h) × h`; gating: `h × 1`.
    pub weight: Option<ParamId>,
    /// Concat only: `h`.
    pub bias: Option<ParamId>,
    pub inputs: usize,
}

impl FusionSpec {
    /// Registers parameters for fusing `inputs` vectors of width `hidden`.
    /// A single input needs no fusion and gets no parameters.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kind: FusionKind,
        gate: GateActivation,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let (weight, bias) = if inputs < 2 {
            (None, None)
        } else {
            match kind {
                FusionKind::Add => (None, None),
                FusionKind::Concat => (
                    Some(store.add(format!("{prefix}.weight"), xavier(inputs * hidden, hidden, rng))),
                    Some(store.add(format!("{prefix}.bias"), Tensor::zeros(&[hidden]))),
                ),
                FusionKind::Gating => (
                    Some(store.add(format!("{prefix}.gate"), Tensor::zeros(&[hidden, 1]))),
                    None,
                ),
            }
        };
        Self {
            kind,
            gate,
            weight,
            bias,
            inputs,
        }
    }

    /// Fuses `features` (all `[.., h]`). Returns the fused tensor and, for
    /// gating, the gates `[N, k]`.
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        features: &[Var],
    ) -> Result<(Var, Option<Var>)> {
        if features.len() != self.inputs {
            return Err(Error::Config(format!(
                "fusion built for {} inputs, got {}",
                self.inputs,
                features.len()
            )));
        }
        if features.len() == 1 {
            return Ok((features[0], None));
        }
        match self.kind {
            FusionKind::Add => Ok((fuse_add(tape, features)?, None)),
            FusionKind::Concat => {
                let w = bound.var(self.weight.expect("concat weight"));
                let b = bound.var(self.bias.expect("concat bias"));
                Ok((fuse_concat(tape, features, w, b)?, None))
            }
            FusionKind::Gating => {
                let w = bound.var(self.weight.expect("gate weight"));
                let (out, gates) = fuse_gating(tape, features, w, self.gate)?;
                Ok((out, Some(gates)))
            }
        }
    }
}

/// `Σ f_i`.
pub fn fuse_add<T: Scalar>(tape: &mut Tape<T>, features: &[Var]) -> Result<Var> {
    let (&first, rest) = features
        .split_first()
        .ok_or_else(|| Error::Config("fusion needs at least one input".into()))?;
    let mut acc = first;
    for &f in rest {
        if tape.shape(f) != tape.shape(first) {
            return Err(Error::ShapeMismatch {
                op: "fuse_add",
                lhs: tape.shape(first).to_vec(),
                rhs: tape.shape(f).to_vec(),
            });
        }
        acc = tape.add(acc, f)?;
    }
    Ok(acc)
}

/// `FC(f_1 ‖ … ‖ f_k)` with `weight: (k·h) × h` and `bias: h`.
pub fn fuse_concat<T: Scalar>(tape: &mut Tape<T>, features: &[Var], weight: Var, bias: Var) -> Result<Var> {
    let h = tape.value(features[0]).last_dim();
    let expected = features.len() * h;
    if tape.shape(weight) != [expected, h] {
        return Err(Error::ShapeMismatch {
            op: "fuse_concat",
            lhs: vec![expected, h],
            rhs: tape.shape(weight).to_vec(),
        });
    }
    let cat = tape.concat_lastdim(features)?;
    let proj = tape.matmul(cat, weight)?;
    tape.add(proj, bias)
}

/// `Σ G_i f_i` with `G = σ(F·W^F)`, where `F` stacks the k features row-wise.
pub fn fuse_gating<T: Scalar>(
    tape: &mut Tape<T>,
    features: &[Var],
    gate_weight: Var,
    activation: GateActivation,
) -> Result<(Var, Var)> {
    let out_shape = tape.shape(features[0]).to_vec();
    let h = *out_shape.last().unwrap();
    let k = features.len();
    let n = tape.value(features[0]).len() / h;
    let cat = tape.concat_lastdim(features)?;
    let stacked = tape.reshape(cat, &[n, k, h])?;
    let flat = tape.reshape(cat, &[n * k, h])?;
    let logits = tape.matmul(flat, gate_weight)?;
    let logits = tape.reshape(logits, &[n, k])?;
    let gates = match activation {
        GateActivation::Softmax => tape.softmax_lastdim(logits),
        GateActivation::Sigmoid => tape.sigmoid(logits),
    };
    let fused = tape.weighted_sum(gates, stacked)?;
    let fused = tape.reshape(fused, &out_shape)?;
    Ok((fused, gates))
}

/// Item-ID branch and integrated representation of a batch.
///
/// `R_id` is `hidden` when given (deeper NOVA layers) and the ID embedding
/// lookup otherwise; `R = F(R_id, side…)`, or `R_id` itself without side inputs.
pub fn integrated_embeddings<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    embeddings: &EmbeddingSet,
    fusion: &FusionSpec,
    layout: &FeatureLayout,
    batch: &Batch,
    hidden: Option<Var>,
) -> Result<(Var, Var)> {
    let r_id = match hidden {
        Some(h) => h,
        None => embeddings.id_embeddings(tape, bound, batch)?,
    };
    let mut inputs = vec![r_id];
    inputs.extend(embeddings.side_embeddings(tape, bound, layout, batch)?);
    let (r, _) = fusion.apply(tape, bound, &inputs)?;
    Ok((r, r_id))
}
