//! The same side information fed two ways. Invasive attention fuses it into
//! the input once; NOVA re-fuses it in every layer for queries and keys only,
//! leaving values on the item-ID branch. Without side inputs both reduce to
//! the same network.
//!
//! cargo run --example nova_vs_invasive

use nova_rec::data::{synthetic, BatchContext, Interaction};
use nova_rec::embed::{FeatureLayout, FusionKind};
use nova_rec::model::{AttentionKind, Model, ModelConfig};
use nova_rec::tools::{profile_cost, EmbeddingCost};

fn main() -> nova_rec::Result<()> {
    let ds = synthetic::random_with_features(40, 20, 10, 3);
    let layout = FeatureLayout::from_dataset(&ds, None)?;
    let ctx = BatchContext::new(&ds.schema, &ds.catalog, 10)?;
    let seqs: Vec<&[Interaction]> = ds.sequences.iter().take(4).map(|s| &s.interactions[..]).collect();
    let batch = ctx.plain_batch(&seqs)?;

    for fusion in [FusionKind::Add, FusionKind::Concat, FusionKind::Gating] {
        let cfg = |attention| ModelConfig {
            hidden_size: 32,
            heads: 4,
            layers: 2,
            max_len: 10,
            fusion,
            attention,
            ..ModelConfig::default()
        };
        let nova = Model::<f64>::new(cfg(AttentionKind::Nova), layout.clone(), 1)?;
        let inv = Model::<f64>::new(cfg(AttentionKind::Invasive), layout.clone(), 1)?;
        let p_nova = profile_cost(&nova.config, &layout, EmbeddingCost::Lookup);
        let p_inv = profile_cost(&inv.config, &layout, EmbeddingCost::Lookup);
        println!(
            "{fusion:<7} params nova {:>7} invasive {:>7}   flops nova {:>9} invasive {:>9}",
            nova.params.count(),
            inv.params.count(),
            p_nova.total_flops,
            p_inv.total_flops
        );
    }

    // no side inputs at all: identical weights give identical scores
    let bare = |attention| ModelConfig {
        hidden_size: 32,
        heads: 4,
        layers: 2,
        max_len: 10,
        attention,
        use_position: false,
        features: Some(vec![]),
        ..ModelConfig::default()
    };
    let ids = FeatureLayout::from_dataset(&ds, Some(&[]))?;
    let nova = Model::<f64>::new(bare(AttentionKind::Nova), ids.clone(), 5)?;
    let mut inv = Model::<f64>::new(bare(AttentionKind::Invasive), ids, 6)?;
    inv.copy_params_from(&nova.params);
    let (a, b) = (nova.score_last(&batch)?, inv.score_last(&batch)?);
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("without side inputs: max score difference {diff:e}");
    Ok(())
}
