use rand::Rng;

use super::{
    FeatureKind, FeatureValue, Interaction, ItemCatalog, SideInfoSchema, PAD_INDEX,
};
use crate::error::{Error, Result};

/// Per-position indices of one feature over a `[B, L]` batch.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureColumn {
    Single(Vec<usize>),
    /// Bags of indices; bag `i` is `rows[offsets[i]..offsets[i + 1]]`.
    Multi { offsets: Vec<usize>, rows: Vec<usize> },
}

impl FeatureColumn {
    fn new(multi: bool) -> Self {
        if multi {
            FeatureColumn::Multi {
                offsets: vec![0],
                rows: Vec::new(),
            }
        } else {
            FeatureColumn::Single(Vec::new())
        }
    }

    fn push(&mut self, value: &FeatureValue) {
        match (self, value) {
            (FeatureColumn::Single(v), FeatureValue::Single(i)) => v.push(*i),
            (FeatureColumn::Multi { offsets, rows }, FeatureValue::Multi(idx)) => {
                rows.extend_from_slice(idx);
                offsets.push(rows.len());
            }
            (FeatureColumn::Multi { offsets, rows }, FeatureValue::Single(i)) => {
                rows.push(*i);
                offsets.push(rows.len());
            }
            (FeatureColumn::Single(v), FeatureValue::Multi(idx)) => v.push(idx[0]),
        }
    }

    /// Index list at one flat position.
    pub fn at(&self, pos: usize) -> &[usize] {
        match self {
            FeatureColumn::Single(v) => std::slice::from_ref(&v[pos]),
            FeatureColumn::Multi { offsets, rows } => &rows[offsets[pos]..offsets[pos + 1]],
        }
    }
}

/// A `[B, L]` batch, left-padded so the most recent interaction sits in the
/// last slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    /// Item IDs; 0 is padding and `m + 1` the mask token.
    pub items: Vec<usize>,
    /// Slot index of each position, `0..L`.
    pub positions: Vec<usize>,
    /// One column per schema feature, in schema order.
    pub features: Vec<FeatureColumn>,
    pub masked: Vec<bool>,
    /// Original item at masked positions, 0 (ignore) elsewhere.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `true` for non-padding positions.
    pub fn key_valid(&self) -> Vec<bool> {
        self.items.iter().map(|&i| i != 0).collect()
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.masked[p]).collect()
    }

    /// Number of non-padding positions in row `b`.
    pub fn row_len(&self, b: usize) -> usize {
        self.items[b * self.seq_len..(b + 1) * self.seq_len]
            .iter()
            .filter(|&&i| i != 0)
            .count()
    }
}

enum Slot<'a> {
    Pad,
    Visible(&'a Interaction),
    /// Training mask: item hidden, behavior features kept.
    Masked(&'a Interaction),
    /// Evaluation query: item and behavior features withheld.
    Query(usize),
}

/// What batch construction needs to know about the data.
#[derive(Debug, Clone, Copy)]
pub struct BatchContext<'a> {
    pub schema: &'a SideInfoSchema,
    pub catalog: &'a ItemCatalog,
    pub seq_len: usize,
}

impl<'a> BatchContext<'a> {
    pub fn new(schema: &'a SideInfoSchema, catalog: &'a ItemCatalog, seq_len: usize) -> Result<Self> {
        if seq_len < 1 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        Ok(Self {
            schema,
            catalog,
            seq_len,
        })
    }

    fn assemble(&self, rows: Vec<Vec<Slot<'_>>>) -> Batch {
        let l = self.seq_len;
        let n = rows.len() * l;
        let decls = self.schema.features();
        let item_cols: Vec<Option<usize>> = {
            let item_idx = self.schema.indices_of_kind(FeatureKind::Item);
            (0..decls.len()).map(|fi| item_idx.iter().position(|&i| i == fi)).collect()
        };
        let behavior_cols: Vec<Option<usize>> = {
            let idx = self.schema.indices_of_kind(FeatureKind::Behavior);
            (0..decls.len()).map(|fi| idx.iter().position(|&i| i == fi)).collect()
        };
        let mut batch = Batch {
            batch_size: rows.len(),
            seq_len: l,
            items: Vec::with_capacity(n),
            positions: Vec::with_capacity(n),
            features: decls.iter().map(|d| FeatureColumn::new(d.encoding.is_multi())).collect(),
            masked: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        };
        let mask_token = self.catalog.mask_token();
        for row in &rows {
            debug_assert_eq!(row.len(), l);
            for (slot_idx, slot) in row.iter().enumerate() {
                batch.positions.push(slot_idx);
                let (item, masked, label) = match slot {
                    Slot::Pad => (PAD_INDEX, false, 0),
                    Slot::Visible(it) => (it.item, false, 0),
                    Slot::Masked(it) => (mask_token, true, it.item),
                    Slot::Query(target) => (mask_token, true, *target),
                };
                batch.items.push(item);
                batch.masked.push(masked);
                batch.labels.push(label);
                for (fi, decl) in decls.iter().enumerate() {
                    let multi = decl.encoding.is_multi();
                    let value = match (slot, decl.kind) {
                        (Slot::Pad, _) => FeatureValue::padding(multi),
                        (Slot::Visible(it), FeatureKind::Item) => {
                            self.catalog.item_features(it.item)[item_cols[fi].unwrap()].clone()
                        }
                        (Slot::Visible(it) | Slot::Masked(it), FeatureKind::Behavior) => {
                            it.behavior[behavior_cols[fi].unwrap()].clone()
                        }
                        (Slot::Masked(_) | Slot::Query(_), FeatureKind::Item)
                        | (Slot::Query(_), FeatureKind::Behavior) => FeatureValue::unknown(multi),
                    };
                    batch.features[fi].push(&value);
                }
            }
        }
        batch
    }

    fn tail<'s>(&self, seq: &'s [Interaction], keep: usize) -> &'s [Interaction] {
        &seq[seq.len().saturating_sub(keep)..]
    }

    /// Cloze batch: each non-pad position is masked independently with
    /// probability `mask_prob`, resampling until a row has at least one mask.
    pub fn masked_batch<R: Rng + ?Sized>(
        &self,
        sequences: &[&[Interaction]],
        mask_prob: f64,
        rng: &mut R,
    ) -> Result<Batch> {
        if !(mask_prob > 0.0 && mask_prob <= 1.0) {
            return Err(Error::Config(format!("mask probability {mask_prob} not in (0, 1]")));
        }
        let l = self.seq_len;
        let mut rows = Vec::with_capacity(sequences.len());
        for seq in sequences {
            let seq = self.tail(seq, l);
            if seq.is_empty() {
                return Err(Error::Config("cannot mask an empty sequence".into()));
            }
            let flags = loop {
                let f: Vec<bool> = (0..seq.len()).map(|_| rng.gen::<f64>() < mask_prob).collect();
                if f.iter().any(|&m| m) {
                    break f;
                }
            };
            let mut row: Vec<Slot> = (0..l - seq.len()).map(|_| Slot::Pad).collect();
            row.extend(seq.iter().zip(flags).map(|(it, m)| {
                if m {
                    Slot::Masked(it)
                } else {
                    Slot::Visible(it)
                }
            }));
            rows.push(row);
        }
        Ok(self.assemble(rows))
    }

    /// Evaluation batch: prefix right-aligned with a query mask appended in the
    /// last slot. Prefixes longer than `L - 1` keep their most recent items.
    pub fn eval_batch(&self, cases: &[(&[Interaction], usize)]) -> Result<Batch> {
        let l = self.seq_len;
        if l < 2 {
            return Err(Error::Config("evaluation needs sequence length >= 2".into()));
        }
        let mut rows = Vec::with_capacity(cases.len());
        for &(prefix, target) in cases {
            if prefix.is_empty() {
                return Err(Error::Config("evaluation prefix is empty".into()));
            }
            let prefix = self.tail(prefix, l - 1);
            let mut row: Vec<Slot> = (0..l - 1 - prefix.len()).map(|_| Slot::Pad).collect();
            row.extend(prefix.iter().map(Slot::Visible));
            row.push(Slot::Query(target));
            rows.push(row);
        }
        Ok(self.assemble(rows))
    }

    /// Unmasked batch of the most recent `L` interactions, for inspection.
    pub fn plain_batch(&self, sequences: &[&[Interaction]]) -> Result<Batch> {
        let l = self.seq_len;
        let mut rows = Vec::with_capacity(sequences.len());
        for seq in sequences {
            let seq = self.tail(seq, l);
            if seq.is_empty() {
                return Err(Error::Config("empty sequence".into()));
            }
            let mut row: Vec<Slot> = (0..l - seq.len()).map(|_| Slot::Pad).collect();
            row.extend(seq.iter().map(Slot::Visible));
            rows.push(row);
        }
        Ok(self.assemble(rows))
    }
}
