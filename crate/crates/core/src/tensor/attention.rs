use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// `σ(QKᵀ/√d)` for `[.., L, d]` inputs, with optional `batch × L` key validity flags.
    pub fn attention_weights(&mut self, q: Var, k: Var, key_valid: Option<&[bool]>) -> Result<Var> {
        if self.shape(q) != self.shape(k) {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: self.shape(q).to_vec(),
                rhs: self.shape(k).to_vec(),
            });
        }
        let d = *self.shape(q).last().unwrap();
        let scores = self.matmul_bt(q, k)?;
        let scores = self.scale(scores, T::of(1.0 / (d as f64).sqrt()));
        match key_valid {
            Some(valid) => self.masked_softmax(scores, valid),
            None => Ok(self.softmax_lastdim(scores)),
        }
    }

    /// Scaled dot-product attention. Returns the attended values and the
    /// attention matrix.
    pub fn scaled_dot_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_valid: Option<&[bool]>,
    ) -> Result<(Var, Var)> {
        if self.shape(q) != self.shape(v) {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: self.shape(q).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let attn = self.attention_weights(q, k, key_valid)?;
        let out = self.matmul(attn, v)?;
        Ok((out, attn))
    }
}
