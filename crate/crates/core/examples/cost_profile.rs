//! Analytic forward FLOPs and parameter counts for a MovieLens-1M sized model
//! with and without side information.
//!
//! cargo run --example cost_profile

use nova_rec::data::FeatureKind;
use nova_rec::embed::{FeatureLayout, FeatureSpec, FusionKind};
use nova_rec::model::{AttentionKind, ModelConfig};
use nova_rec::tools::{profile_cost, EmbeddingCost};

fn main() {
    let spec = |name: &str, kind, vocab_size, multi, column| FeatureSpec { name: name.into(), kind, vocab_size, multi, column };
    let side = FeatureLayout {
        num_items: 3706,
        features: vec![
            spec("year", FeatureKind::Item, 83, false, 0),
            spec("genre", FeatureKind::Item, 20, true, 1),
            spec("rating", FeatureKind::Behavior, 7, false, 2),
        ],
    };
    let bare = FeatureLayout::ids_only(3706);
    let cfg = |attention, fusion| ModelConfig {
        hidden_size: 512,
        heads: 4,
        layers: 3,
        max_len: 200,
        attention,
        fusion,
        ..ModelConfig::default()
    };
    let base = profile_cost(&cfg(AttentionKind::Invasive, FusionKind::Add), &bare, EmbeddingCost::Lookup);
    println!("{:<22} {:>14} {:>10} {:>12} {:>9}", "model", "FLOPs", "vs base", "params", "MB");
    println!("{:<22} {:>14} {:>10} {:>12} {:>9.1}", "no side info", base.total_flops, "", base.params, base.param_bytes as f64 / 1e6);
    for attention in [AttentionKind::Invasive, AttentionKind::Nova] {
        for fusion in [FusionKind::Add, FusionKind::Concat, FusionKind::Gating] {
            for cost in [EmbeddingCost::Lookup, EmbeddingCost::OneHot] {
                let p = profile_cost(&cfg(attention, fusion), &side, cost);
                let b = profile_cost(&cfg(AttentionKind::Invasive, FusionKind::Add), &bare, cost);
                let tag = if cost == EmbeddingCost::OneHot { " one-hot" } else { "" };
                println!(
                    "{:<22} {:>14} {:>9.3}% {:>12} {:>9.1}",
                    format!("{attention:?}-{fusion}{tag}"),
                    p.total_flops,
                    100.0 * (p.total_flops as f64 / b.total_flops as f64 - 1.0),
                    p.params,
                    p.param_bytes as f64 / 1e6
                );
            }
        }
    }
    let p = profile_cost(&cfg(AttentionKind::Nova, FusionKind::Gating), &side, EmbeddingCost::Lookup);
    println!("\nNOVA-gating breakdown:\n{}", serde_json::to_string_pretty(&p.flops).unwrap());
}
