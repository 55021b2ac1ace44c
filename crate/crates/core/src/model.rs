//! Transformer encoder with invasive or non-invasive (NOVA) self-attention and
//! a tied item decoder.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::embed::{EmbeddingSet, FeatureLayout, FusionKind, FusionSpec, GateActivation};
use crate::error::{Error, Result};
use crate::params::{xavier, BoundParams, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-12;
/// Inner width of the feed-forward block, as a multiple of `h`.
pub const FFN_MULT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Side information fused into the item representation before layer 1.
    Invasive,
    /// Side information drives queries and keys only, in every layer.
    Nova,
}

impl FromStr for AttentionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "invasive" => Ok(Self::Invasive),
            "nova" => Ok(Self::Nova),
            other => Err(format!("unknown attention `{other}` (invasive|nova)")),
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Invasive => "invasive",
            Self::Nova => "nova",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub fusion: FusionKind,
    pub gate: GateActivation,
    pub attention: AttentionKind,
    pub dropout: f64,
    pub mask_prob: f64,
    /// Learned position embeddings as a side feature.
    pub use_position: bool,
    /// Side features in use; `None` selects every feature of the schema.
    pub features: Option<Vec<String>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 512,
            heads: 4,
            layers: 3,
            max_len: 200,
            fusion: FusionKind::Gating,
            gate: GateActivation::Softmax,
            attention: AttentionKind::Nova,
            dropout: 0.1,
            mask_prob: 0.2,
            use_position: true,
            features: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_size == 0 || self.heads == 0 {
            return fail("hidden_size and heads must be positive".into());
        }
        if self.hidden_size % self.heads != 0 {
            return fail(format!(
                "hidden_size {} is not divisible by heads {}",
                self.hidden_size, self.heads
            ));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return fail(format!("mask_prob {} not in (0, 1]", self.mask_prob));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }
}

/// Parameter handles of one encoder layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

impl LayerParams {
    fn new<T: Scalar>(store: &mut ParamStore<T>, i: usize, h: usize, rng: &mut dyn RngCore) -> Self {
        let p = |n: &str| format!("layer{i}.{n}");
        let mut lin = |store: &mut ParamStore<T>, name: &str, fi: usize, fo: usize| {
            let w = store.add(p(&format!("{name}.weight")), xavier(fi, fo, rng));
            let b = store.add(p(&format!("{name}.bias")), Tensor::zeros(&[fo]));
            (w, b)
        };
        let (wq, bq) = lin(store, "query", h, h);
        let (wk, bk) = lin(store, "key", h, h);
        let (wv, bv) = lin(store, "value", h, h);
        let (wo, bo) = lin(store, "output", h, h);
        let ln1_gamma = store.add(p("norm1.gamma"), Tensor::full(&[h], T::one()));
        let ln1_beta = store.add(p("norm1.beta"), Tensor::zeros(&[h]));
        let (ffn_w1, ffn_b1) = lin(store, "ffn1", h, FFN_MULT * h);
        let (ffn_w2, ffn_b2) = lin(store, "ffn2", FFN_MULT * h, h);
        let ln2_gamma = store.add(p("norm2.gamma"), Tensor::full(&[h], T::one()));
        let ln2_beta = store.add(p("norm2.beta"), Tensor::zeros(&[h]));
        Self {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln1_gamma,
            ln1_beta,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            ln2_gamma,
            ln2_beta,
        }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Final hidden states `[B, L, h]`.
    pub hidden: Var,
    /// Per layer, attention probabilities `[B, H, L, L]` before dropout.
    pub attention: Vec<Var>,
    /// Per layer, value projections `[B, L, h]`.
    pub values: Vec<Var>,
    /// Side embeddings (features, then position) shared by all layers.
    pub side: Vec<Var>,
    /// Per fusion call, gating weights `[B·L, k]` when gating is used.
    pub gates: Vec<Option<Var>>,
}

/// Encoder, embeddings and decoder, with all trainable state in `params`.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub layout: FeatureLayout,
    pub params: ParamStore<T>,
    embeddings: EmbeddingSet,
    /// One fusion for invasive attention, one per layer for NOVA.
    fusions: Vec<FusionSpec>,
    layers: Vec<LayerParams>,
    decoder_bias: ParamId,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, layout: FeatureLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_size;
        let mut params = ParamStore::new();
        let max_len = config.use_position.then_some(config.max_len);
        let embeddings = EmbeddingSet::new(&mut params, &layout, h, max_len, &mut rng);
        let inputs = 1 + embeddings.side_count();
        let mut fusions = Vec::new();
        let mut layers = Vec::new();
        if config.attention == AttentionKind::Invasive {
            fusions.push(FusionSpec::new(
                &mut params,
                "fusion",
                config.fusion,
                config.gate,
                inputs,
                h,
                &mut rng,
            ));
        }
        for i in 0..config.layers {
            if config.attention == AttentionKind::Nova {
                fusions.push(FusionSpec::new(
                    &mut params,
                    &format!("layer{i}.fusion"),
                    config.fusion,
                    config.gate,
                    inputs,
                    h,
                    &mut rng,
                ));
            }
            layers.push(LayerParams::new(&mut params, i, h, &mut rng));
        }
        let decoder_bias = params.add("decoder.bias", Tensor::zeros(&[layout.num_items]));
        Ok(Self {
            config,
            layout,
            params,
            embeddings,
            fusions,
            layers,
            decoder_bias,
        })
    }

    pub fn num_items(&self) -> usize {
        self.layout.num_items
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn layer_params(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn fusions(&self) -> &[FusionSpec] {
        &self.fusions
    }

    pub fn decoder_bias(&self) -> ParamId {
        self.decoder_bias
    }

    /// Copies every parameter of `other` with a matching name and shape.
    /// Returns how many were copied.
    pub fn copy_params_from(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for (name, value) in other.iter() {
            if self.params.set(name, value.clone()).is_ok() {
                copied += 1;
            }
        }
        copied
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.seq_len > self.config.max_len {
            return Err(Error::Config(format!(
                "batch length {} exceeds max_len {}",
                batch.seq_len, self.config.max_len
            )));
        }
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        Ok(())
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, rng: &mut Option<&mut dyn RngCore>) -> Var {
        match rng {
            Some(r) => tape.dropout(x, self.config.dropout, &mut **r),
            None => x,
        }
    }

    /// Runs the encoder. `rng` enables dropout (training); `None` is inference.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        batch: &Batch,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardTrace> {
        self.check_batch(batch)?;
        let valid = batch.key_valid();
        let side = self
            .embeddings
            .side_embeddings(tape, bound, &self.layout, batch)?;
        let ids = self.embeddings.id_embeddings(tape, bound, batch)?;
        let mut trace = ForwardTrace {
            hidden: ids,
            attention: Vec::with_capacity(self.layers.len()),
            values: Vec::with_capacity(self.layers.len()),
            side: side.clone(),
            gates: Vec::new(),
        };
        let mut hidden = match self.config.attention {
            AttentionKind::Invasive => {
                let mut inputs = vec![ids];
                inputs.extend(&side);
                let (r, gates) = self.fusions[0].apply(tape, bound, &inputs)?;
                trace.gates.push(gates);
                self.dropout(tape, r, &mut rng)
            }
            AttentionKind::Nova => self.dropout(tape, ids, &mut rng),
        };
        for (i, lp) in self.layers.iter().enumerate() {
            let r = match self.config.attention {
                AttentionKind::Invasive => hidden,
                AttentionKind::Nova => {
                    let mut inputs = vec![hidden];
                    inputs.extend(&side);
                    let (r, gates) = self.fusions[i].apply(tape, bound, &inputs)?;
                    trace.gates.push(gates);
                    r
                }
            };
            let (out, attn, v) = self.layer(tape, bound, lp, r, hidden, &valid, &mut rng)?;
            trace.attention.push(attn);
            trace.values.push(v);
            hidden = out;
        }
        trace.hidden = hidden;
        Ok(trace)
    }

    fn linear(&self, tape: &mut Tape<T>, bound: &BoundParams, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let y = tape.matmul(x, bound.var(w))?;
        tape.add(y, bound.var(b))
    }

    /// One post-norm encoder layer. Queries and keys read `r`; values and the
    /// residual read `x`. Invasive layers pass the same tensor for both.
    #[allow(clippy::too_many_arguments)]
    fn layer(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        lp: &LayerParams,
        r: Var,
        x: Var,
        valid: &[bool],
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var, Var)> {
        let s = tape.shape(x).to_vec();
        let (b, l, h) = (s[0], s[1], s[2]);
        let heads = self.config.heads;
        let d = h / heads;
        let q = self.linear(tape, bound, r, lp.wq, lp.bq)?;
        let k = self.linear(tape, bound, r, lp.wk, lp.bk)?;
        let v = self.linear(tape, bound, x, lp.wv, lp.bv)?;
        let split = |tape: &mut Tape<T>, t: Var| -> Result<Var> {
            let t = tape.reshape(t, &[b, l, heads, d])?;
            tape.permute_0213(t)
        };
        let (qh, kh, vh) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);
        let attn = tape.attention_weights(qh, kh, Some(valid))?;
        let probs = self.dropout(tape, attn, rng);
        let ctx = tape.matmul(probs, vh)?;
        let ctx = tape.permute_0213(ctx)?;
        let ctx = tape.reshape(ctx, &[b, l, h])?;
        let out = self.linear(tape, bound, ctx, lp.wo, lp.bo)?;
        let out = self.dropout(tape, out, rng);
        let y = tape.add(out, x)?;
        let y = tape.layer_norm(y, bound.var(lp.ln1_gamma), bound.var(lp.ln1_beta), LAYER_NORM_EPS)?;
        let f = self.linear(tape, bound, y, lp.ffn_w1, lp.ffn_b1)?;
        let f = tape.gelu(f);
        let f = self.linear(tape, bound, f, lp.ffn_w2, lp.ffn_b2)?;
        let f = self.dropout(tape, f, rng);
        let z = tape.add(f, y)?;
        let z = tape.layer_norm(z, bound.var(lp.ln2_gamma), bound.var(lp.ln2_beta), LAYER_NORM_EPS)?;
        Ok((z, attn, v))
    }

    /// Item scores `[n, m]` for hidden rows `[n, h]` with the tied table.
    pub fn decode_scores(&self, tape: &mut Tape<T>, bound: &BoundParams, rows: Var) -> Result<Var> {
        let m = self.layout.num_items;
        let table = tape.slice_rows(bound.var(self.embeddings.id_table), 1, m + 1)?;
        let logits = tape.matmul_bt(rows, table)?;
        tape.add(logits, bound.var(self.decoder_bias))
    }

    /// Hidden rows at the given flat `b·L + t` positions, `[n, h]`.
    pub fn hidden_rows(&self, tape: &mut Tape<T>, hidden: Var, positions: &[usize]) -> Result<Var> {
        let h = self.config.hidden_size;
        let n = tape.value(hidden).len() / h;
        let flat = tape.reshape(hidden, &[n, h])?;
        tape.gather_rows(flat, positions, &[positions.len(), h])
    }

    /// Mean cross-entropy over the masked positions of `batch`.
    pub fn masked_loss(&self, tape: &mut Tape<T>, bound: &BoundParams, hidden: Var, batch: &Batch) -> Result<Var> {
        let positions = batch.masked_positions();
        if positions.is_empty() {
            return Err(Error::NoMaskedPositions);
        }
        let targets: Vec<usize> = positions.iter().map(|&p| batch.labels[p] - 1).collect();
        let rows = self.hidden_rows(tape, hidden, &positions)?;
        let logits = self.decode_scores(tape, bound, rows)?;
        tape.cross_entropy(logits, &targets)
    }

    /// Training loss of one batch with dropout driven by `rng`.
    pub fn loss(&self, tape: &mut Tape<T>, bound: &BoundParams, batch: &Batch, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let trace = self.forward(tape, bound, batch, rng)?;
        self.masked_loss(tape, bound, trace.hidden, batch)
    }

    /// Inference scores `[B, m]` at the last slot of every row; column `j`
    /// belongs to item `j + 1`.
    pub fn score_last(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let trace = self.forward(&mut tape, &bound, batch, None)?;
        let last: Vec<usize> = (0..batch.batch_size)
            .map(|b| b * batch.seq_len + batch.seq_len - 1)
            .collect();
        let rows = self.hidden_rows(&mut tape, trace.hidden, &last)?;
        let scores = self.decode_scores(&mut tape, &bound, rows)?;
        Ok(tape.value(scores).clone())
    }

    /// Attention probabilities of one layer, `[B, H, L, L]`, in inference mode.
    pub fn attention_maps(&self, batch: &Batch, layer: usize) -> Result<Tensor<T>> {
        if layer >= self.layers.len() {
            return Err(Error::IndexOutOfRange {
                what: "layer".into(),
                index: layer,
                size: self.layers.len(),
            });
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let trace = self.forward(&mut tape, &bound, batch, None)?;
        Ok(tape.value(trace.attention[layer]).clone())
    }

    /// Converts to another precision, keeping structure and values.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for (name, value) in self.params.iter() {
            params.add(name, value.cast());
        }
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params,
            embeddings: self.embeddings.clone(),
            fusions: self.fusions.clone(),
            layers: self.layers.clone(),
            decoder_bias: self.decoder_bias,
        }
    }
}
