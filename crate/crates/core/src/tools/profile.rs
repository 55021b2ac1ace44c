//! Closed-form forward FLOPs and parameter counts.
//!
//! Conventions: a multiply-accumulate is 2 FLOPs, an elementwise add or
//! scale is 1. Softmax costs [`SOFTMAX_FLOPS`] per element, layer norm
//! [`LAYER_NORM_FLOPS`], GELU [`GELU_FLOPS`]. Embedding lookups and bag
//! pooling are free under [`EmbeddingCost::Lookup`]. The decoder scores every
//! position of a length-`L` sequence against all `m` items.

use serde::Serialize;

use crate::embed::{FeatureLayout, FusionKind};
use crate::model::{AttentionKind, ModelConfig, FFN_MULT};

/// Max, subtract, exp, sum, divide.
pub const SOFTMAX_FLOPS: u64 = 5;
/// Mean, centre, square, variance, normalize, scale, shift and the epsilon add.
pub const LAYER_NORM_FLOPS: u64 = 8;
/// Cube, two multiply-adds, tanh, add, two products.
pub const GELU_FLOPS: u64 = 8;

/// How embedding tables are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingCost {
    /// Row gathers, 0 FLOPs.
    #[default]
    Lookup,
    /// Each lookup as a one-hot row times the table: `2 · rows · h`.
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct Breakdown {
    pub embeddings: u64,
    pub attention: u64,
    pub ffn: u64,
    pub fusion: u64,
    pub decoder: u64,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.embeddings + self.attention + self.ffn + self.fusion + self.decoder
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostProfile {
    /// Forward FLOPs for one sequence of length `max_len`.
    pub total_flops: u64,
    pub flops: Breakdown,
    pub params: u64,
    pub param_breakdown: Breakdown,
    /// Parameter storage at 32 bits each.
    pub param_bytes: u64,
    pub embedding_cost: EmbeddingCost,
}

fn fusion_flops(kind: FusionKind, k: u64, l: u64, h: u64) -> u64 {
    if k < 2 {
        return 0;
    }
    match kind {
        FusionKind::Add => (k - 1) * l * h,
        FusionKind::Concat => 2 * l * k * h * h + l * h,
        FusionKind::Gating => 2 * l * k * h + l * k * SOFTMAX_FLOPS + 2 * l * k * h,
    }
}

fn fusion_params(kind: FusionKind, k: u64, h: u64) -> u64 {
    if k < 2 {
        return 0;
    }
    match kind {
        FusionKind::Add => 0,
        FusionKind::Concat => k * h * h + h,
        FusionKind::Gating => h,
    }
}

pub fn profile_cost(cfg: &ModelConfig, layout: &FeatureLayout, embedding_cost: EmbeddingCost) -> CostProfile {
    let h = cfg.hidden_size as u64;
    let heads = cfg.heads as u64;
    let l = cfg.max_len as u64;
    let m = layout.num_items as u64;
    let layers = cfg.layers as u64;
    let inner = FFN_MULT as u64 * h;
    let pos = u64::from(cfg.use_position);
    let k = 1 + layout.features.len() as u64 + pos;
    let fusions = match cfg.attention {
        AttentionKind::Invasive => 1,
        AttentionKind::Nova => layers,
    };

    let id_rows = m + 2;
    let feature_rows: u64 = layout.features.iter().map(|f| f.vocab_size as u64).sum();
    let embed_params = (id_rows + feature_rows + pos * l) * h;
    let embed_flops = match embedding_cost {
        EmbeddingCost::Lookup => 0,
        EmbeddingCost::OneHot => 2 * l * h * (id_rows + feature_rows + pos * l),
    };

    let linear = |fi: u64, fo: u64| 2 * l * fi * fo + l * fo;
    let attn_layer = 3 * linear(h, h)
        + 2 * l * l * h // scores
        + heads * l * l // scaling
        + heads * l * l * SOFTMAX_FLOPS
        + 2 * l * l * h // weights times values
        + linear(h, h)
        + l * h // residual
        + l * h * LAYER_NORM_FLOPS;
    let ffn_layer = linear(h, inner) + l * inner * GELU_FLOPS + linear(inner, h) + l * h + l * h * LAYER_NORM_FLOPS;

    let flops = Breakdown {
        embeddings: embed_flops,
        attention: layers * attn_layer,
        ffn: layers * ffn_layer,
        fusion: fusions * fusion_flops(cfg.fusion, k, l, h),
        decoder: 2 * l * h * m + l * m,
    };
    let param_breakdown = Breakdown {
        embeddings: embed_params,
        attention: layers * (4 * (h * h + h) + 2 * h),
        ffn: layers * (h * inner + inner + inner * h + h + 2 * h),
        fusion: fusions * fusion_params(cfg.fusion, k, h),
        decoder: m,
    };
    let params = param_breakdown.total();
    CostProfile {
        total_flops: flops.total(),
        flops,
        params,
        param_breakdown,
        param_bytes: 4 * params,
        embedding_cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    fn cfg(attention: AttentionKind, fusion: FusionKind) -> ModelConfig {
        ModelConfig {
            hidden_size: 4,
            heads: 1,
            layers: 1,
            max_len: 2,
            fusion,
            attention,
            use_position: false,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn hand_count_tiny() {
        // h=4, H=1, one layer, L=2, m=3, no side inputs
        let p = profile_cost(&cfg(AttentionKind::Invasive, FusionKind::Add), &FeatureLayout::ids_only(3), EmbeddingCost::Lookup);
        // q,k,v,o: 4 × (2·2·4·4 + 2·4) = 288
        // scores 2·2·2·4 = 32, scale 4, softmax 20, weights·values 32
        // residual 8, norm 64
        assert_eq!(p.flops.attention, 288 + 32 + 4 + 20 + 32 + 8 + 64);
        // ffn1 2·2·4·16 + 2·16 = 288, gelu 2·16·8 = 256, ffn2 2·2·16·4 + 8 = 264
        // residual 8, norm 64
        assert_eq!(p.flops.ffn, 288 + 256 + 264 + 8 + 64);
        // 2·2·4·3 + 2·3
        assert_eq!(p.flops.decoder, 54);
        assert_eq!(p.flops.fusion, 0);
        assert_eq!(p.total_flops, 448 + 880 + 54);
        assert_eq!(p.params, 20 + 88 + 156 + 3);
        assert_eq!(p.param_bytes, 4 * 267);
    }

    #[test]
    fn parameter_count_matches_model() {
        let ds = crate::data::synthetic::random_with_features(9, 3, 6, 2);
        let layout = FeatureLayout::from_dataset(&ds, None).unwrap();
        for attention in [AttentionKind::Invasive, AttentionKind::Nova] {
            for fusion in [FusionKind::Add, FusionKind::Concat, FusionKind::Gating] {
                let mut c = cfg(attention, fusion);
                c.use_position = true;
                c.layers = 2;
                let model = Model::<f64>::new(c.clone(), layout.clone(), 0).unwrap();
                let p = profile_cost(&c, &layout, EmbeddingCost::Lookup);
                assert_eq!(p.params as usize, model.params.count(), "{attention} {fusion}");
            }
        }
    }
}
