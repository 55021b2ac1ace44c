//! Interaction logs, side-information vocabularies, the chronological
//! leave-one-out split and masked batch construction.

mod batch;
mod io;
pub mod movielens;
mod schema;
mod split;
pub mod synthetic;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

pub use batch::{Batch, BatchContext, FeatureColumn};
pub use io::{load_interactions, write_interactions, write_items};
pub use schema::{
    Encoding, FeatureDecl, FeatureKind, SideInfoSchema, PAD_INDEX, POSITION, RESERVED, UNK_INDEX,
};
pub use split::{leave_one_out_split, EvalCase, SplitDataset};

use crate::error::{Error, Result};

/// Sequences shorter than this are discarded at load time.
pub const MIN_SEQUENCE_LEN: usize = 5;

/// Encoded value of one feature for one item or interaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureValue {
    Single(usize),
    Multi(Vec<usize>),
}

impl FeatureValue {
    pub fn unknown(multi: bool) -> Self {
        if multi {
            FeatureValue::Multi(vec![UNK_INDEX])
        } else {
            FeatureValue::Single(UNK_INDEX)
        }
    }

    pub fn padding(multi: bool) -> Self {
        if multi {
            FeatureValue::Multi(vec![PAD_INDEX])
        } else {
            FeatureValue::Single(PAD_INDEX)
        }
    }
}

/// Frozen vocabulary of one feature. Index 0 is padding, 1 is unknown.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureVocab {
    Categorical(Vec<String>),
    Bucketed(Vec<f64>),
}

impl FeatureVocab {
    /// Total number of embedding rows including the reserved entries.
    pub fn size(&self) -> usize {
        RESERVED
            + match self {
                FeatureVocab::Categorical(v) => v.len(),
                FeatureVocab::Bucketed(edges) => edges.len() + 1,
            }
    }

    fn encode_one(&self, raw: &str) -> usize {
        let raw = raw.trim();
        if raw.is_empty() {
            return UNK_INDEX;
        }
        match self {
            FeatureVocab::Categorical(values) => values
                .binary_search_by(|v| natural_cmp(v, raw))
                .map_or(UNK_INDEX, |i| i + RESERVED),
            FeatureVocab::Bucketed(edges) => match raw.parse::<f64>() {
                Ok(x) if x.is_finite() => RESERVED + edges.partition_point(|&e| e <= x),
                _ => UNK_INDEX,
            },
        }
    }

    fn decode_one(&self, index: usize) -> String {
        if index < RESERVED {
            return String::new();
        }
        let i = index - RESERVED;
        match self {
            FeatureVocab::Categorical(values) => values[i].clone(),
            FeatureVocab::Bucketed(edges) => {
                // representative value that maps back to the same bucket
                if i == 0 {
                    (edges[0] - 1.0).to_string()
                } else {
                    edges[i - 1].to_string()
                }
            }
        }
    }
}

/// Item catalog. Internal item IDs are `1..=m`; 0 is padding and `m + 1` the
/// mask token.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    raw_ids: Vec<String>,
    /// `features[item_id - 1][j]` is the j-th item-kind feature of the schema.
    features: Vec<Vec<FeatureValue>>,
    lookup: HashMap<String, usize>,
}

impl ItemCatalog {
    pub fn num_items(&self) -> usize {
        self.raw_ids.len()
    }

    pub fn mask_token(&self) -> usize {
        self.raw_ids.len() + 1
    }

    pub fn raw_id(&self, item: usize) -> &str {
        &self.raw_ids[item - 1]
    }

    pub fn id_of(&self, raw: &str) -> Option<usize> {
        self.lookup.get(raw).copied()
    }

    /// Item-kind feature values of an item, in schema order.
    pub fn item_features(&self, item: usize) -> &[FeatureValue] {
        &self.features[item - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub item: usize,
    /// Behavior-kind feature values, in schema order.
    pub behavior: Vec<FeatureValue>,
    pub timestamp: i64,
}

/// One user's interactions in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSequence {
    pub user: String,
    pub interactions: Vec<Interaction>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn items(&self) -> Vec<usize> {
        self.interactions.iter().map(|i| i.item).collect()
    }
}

/// A raw, not yet encoded, interaction record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
    /// Raw behavior values, in schema order of the behavior features.
    pub behavior: Vec<String>,
    /// Source line, used in error messages.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: SideInfoSchema,
    /// One vocabulary per schema feature, in schema order.
    pub vocabs: Vec<FeatureVocab>,
    pub catalog: ItemCatalog,
    pub sequences: Vec<InteractionSequence>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub records: usize,
    pub mean_len: f64,
}

/// Compares numerically when both sides parse as numbers, else lexically.
pub(crate) fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn sorted_unique<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = values.filter(|v| !v.trim().is_empty()).map(str::trim).collect();
    let mut out: Vec<String> = set.into_iter().map(str::to_string).collect();
    out.sort_by(|a, b| natural_cmp(a, b));
    out
}

fn split_multi(raw: &str) -> impl Iterator<Item = &str> {
    raw.split('|').map(str::trim).filter(|s| !s.is_empty())
}

impl Dataset {
    /// Sorts, filters and encodes raw records. `items` maps raw item IDs to
    /// raw values of the item-kind features (schema order); when present,
    /// every logged item must appear in it.
    pub fn build(
        schema: SideInfoSchema,
        records: Vec<RawInteraction>,
        items: Option<&HashMap<String, Vec<String>>>,
        source: &std::path::Path,
    ) -> Result<Self> {
        let item_feats = schema.indices_of_kind(FeatureKind::Item);
        let behavior_feats = schema.indices_of_kind(FeatureKind::Behavior);
        if !item_feats.is_empty() && items.is_none() {
            return Err(Error::Config(
                "schema declares item features but no items file was given".into(),
            ));
        }
        if let Some(items) = items {
            if let Some(r) = records.iter().find(|r| !items.contains_key(&r.item)) {
                return Err(Error::UnknownItem {
                    item: r.item.clone(),
                    path: source.to_path_buf(),
                    line: r.line,
                });
            }
        }

        // group per user, keep file order for equal timestamps
        let mut by_user: HashMap<&str, Vec<&RawInteraction>> = HashMap::new();
        for r in &records {
            by_user.entry(r.user.as_str()).or_default().push(r);
        }
        let mut users: Vec<&str> = by_user.keys().copied().collect();
        users.sort_by(|a, b| natural_cmp(a, b));
        let mut kept: Vec<(&str, Vec<&RawInteraction>)> = Vec::new();
        for u in users {
            let mut seq = by_user.remove(u).unwrap_or_default();
            if seq.len() < MIN_SEQUENCE_LEN {
                continue;
            }
            seq.sort_by_key(|r| r.timestamp);
            kept.push((u, seq));
        }

        let raw_ids = sorted_unique(kept.iter().flat_map(|(_, s)| s.iter().map(|r| r.item.as_str())));
        let lookup: HashMap<String, usize> = raw_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i + 1))
            .collect();

        let empty = Vec::new();
        let raw_item_values = |id: &str| -> &Vec<String> {
            items.and_then(|m| m.get(id)).unwrap_or(&empty)
        };

        let mut vocabs = Vec::with_capacity(schema.features().len());
        for (fi, decl) in schema.features().iter().enumerate() {
            let vocab = match &decl.encoding {
                Encoding::Bucketed { edges } => FeatureVocab::Bucketed(edges.clone()),
                enc => {
                    let values: Vec<&str> = match decl.kind {
                        FeatureKind::Item => {
                            let col = item_feats.iter().position(|&i| i == fi).unwrap();
                            raw_ids
                                .iter()
                                .filter_map(|id| raw_item_values(id).get(col).map(String::as_str))
                                .collect()
                        }
                        FeatureKind::Behavior => {
                            let col = behavior_feats.iter().position(|&i| i == fi).unwrap();
                            kept.iter()
                                .flat_map(|(_, s)| s.iter().map(move |r| r.behavior[col].as_str()))
                                .collect()
                        }
                    };
                    if enc.is_multi() {
                        FeatureVocab::Categorical(sorted_unique(values.into_iter().flat_map(split_multi)))
                    } else {
                        FeatureVocab::Categorical(sorted_unique(values.into_iter()))
                    }
                }
            };
            vocabs.push(vocab);
        }

        let encode = |fi: usize, raw: &str| -> FeatureValue {
            let vocab = &vocabs[fi];
            if schema.features()[fi].encoding.is_multi() {
                let mut idx: Vec<usize> = split_multi(raw).map(|v| vocab.encode_one(v)).collect();
                if idx.is_empty() {
                    idx.push(UNK_INDEX);
                }
                FeatureValue::Multi(idx)
            } else {
                FeatureValue::Single(vocab.encode_one(raw))
            }
        };

        let features = raw_ids
            .iter()
            .map(|id| {
                let raw = raw_item_values(id);
                item_feats
                    .iter()
                    .enumerate()
                    .map(|(col, &fi)| encode(fi, raw.get(col).map_or("", String::as_str)))
                    .collect()
            })
            .collect();
        let catalog = ItemCatalog {
            raw_ids,
            features,
            lookup,
        };

        let sequences = kept
            .into_iter()
            .map(|(user, seq)| InteractionSequence {
                user: user.to_string(),
                interactions: seq
                    .into_iter()
                    .map(|r| Interaction {
                        item: catalog.lookup[&r.item],
                        behavior: behavior_feats
                            .iter()
                            .enumerate()
                            .map(|(col, &fi)| encode(fi, &r.behavior[col]))
                            .collect(),
                        timestamp: r.timestamp,
                    })
                    .collect(),
            })
            .collect();

        Ok(Self {
            schema,
            vocabs,
            catalog,
            sequences,
        })
    }

    pub fn num_items(&self) -> usize {
        self.catalog.num_items()
    }

    pub fn stats(&self) -> DatasetStats {
        let records: usize = self.sequences.iter().map(InteractionSequence::len).sum();
        let users = self.sequences.len();
        DatasetStats {
            users,
            items: self.num_items(),
            records,
            mean_len: if users == 0 { 0.0 } else { records as f64 / users as f64 },
        }
    }

    pub(crate) fn decode_value(&self, fi: usize, value: &FeatureValue) -> String {
        let vocab = &self.vocabs[fi];
        match value {
            FeatureValue::Single(i) => vocab.decode_one(*i),
            FeatureValue::Multi(idx) => idx
                .iter()
                .filter(|&&i| i >= RESERVED)
                .map(|&i| vocab.decode_one(i))
                .collect::<Vec<_>>()
                .join("|"),
        }
    }
}
