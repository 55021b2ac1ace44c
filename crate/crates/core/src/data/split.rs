use super::{Interaction, InteractionSequence};
use crate::error::{Error, Result};

/// A prefix to condition on and the item that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    /// Index into the source sequence list.
    pub user: usize,
    pub prefix: Vec<Interaction>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    /// Each user's sequence without its last two elements.
    pub train: Vec<InteractionSequence>,
    /// Training prefix, target = second-to-last element.
    pub validation: Vec<EvalCase>,
    /// Training prefix plus the validation item, target = last element.
    pub test: Vec<EvalCase>,
}

/// Chronological leave-one-out split. Deterministic; sequences must hold at
/// least three interactions so that every training prefix is non-empty.
pub fn leave_one_out_split(sequences: &[InteractionSequence]) -> Result<SplitDataset> {
    let mut train = Vec::with_capacity(sequences.len());
    let mut validation = Vec::with_capacity(sequences.len());
    let mut test = Vec::with_capacity(sequences.len());
    for (user, seq) in sequences.iter().enumerate() {
        let n = seq.len();
        if n < 3 {
            return Err(Error::Config(format!(
                "sequence of user `{}` has {n} interactions, need at least 3",
                seq.user
            )));
        }
        let head = &seq.interactions[..n - 2];
        train.push(InteractionSequence {
            user: seq.user.clone(),
            interactions: head.to_vec(),
        });
        validation.push(EvalCase {
            user,
            prefix: head.to_vec(),
            target: seq.interactions[n - 2].item,
        });
        test.push(EvalCase {
            user,
            prefix: seq.interactions[..n - 1].to_vec(),
            target: seq.interactions[n - 1].item,
        });
    }
    Ok(SplitDataset {
        train,
        validation,
        test,
    })
}
