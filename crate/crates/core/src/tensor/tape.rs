use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct MatPlan {
    batches: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
    trans_b: bool,
}

impl MatPlan {
    /// Strides of `op(B)` viewed as `k×n`.
    fn b_strides(&self) -> (isize, isize) {
        if self.trans_b {
            (1, self.k as isize)
        } else {
            (self.n as isize, 1)
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, plan: MatPlan },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Sum { a: Var },
    Mean { a: Var },
    Softmax { a: Var },
    Reshape { a: Var },
    Permute0213 { a: Var },
    Concat { inputs: Vec<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { a: Var },
    Sigmoid { a: Var },
    Dropout { a: Var, mask: Vec<T> },
    Gather { src: Var, rows: Vec<usize> },
    BagMean { src: Var, offsets: Vec<usize>, rows: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    WeightedSum { gates: Var, feats: Var },
    SliceRows { a: Var, start: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Dynamic computation tape. Operations are appended in execution order, so
/// every node's inputs precede it and the backward sweep is a reverse scan.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x);
    (y, dy)
}

fn softmax_row<T: Scalar>(x: &[T], valid: Option<&[bool]>, out: &mut [T]) -> bool {
    let is_valid = |j: usize| valid.is_none_or(|v| v[j]);
    let mut max = T::neg_infinity();
    for (j, &v) in x.iter().enumerate() {
        if is_valid(j) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut total = T::zero();
    for (j, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        *o = if is_valid(j) { (v - max).exp() } else { T::zero() };
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
    true
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        debug_assert!(
            !inputs.iter().all(|v| self.nodes[v.0].value.all_finite()) || value.all_finite(),
            "non-finite output from {op:?}"
        );
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf; its gradient is available after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, `None` when `v` was unreachable.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears all gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    // ---------------------------------------------------------------- ops

    /// Matrix product over the last two axes. `b` may be 2-D (shared across the
    /// leading axes of `a`), `a` may be 2-D (shared across `b`), or both may
    /// carry identical leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, "matmul")
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, "matmul_bt")
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool, op: &'static str) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let k = sa[sa.len() - 1];
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(mismatch());
        }
        let (plan, out_shape) = if sb.len() == 2 {
            let lead = &sa[..sa.len() - 1];
            let mut shape = lead.to_vec();
            shape.push(n);
            let m = lead.iter().product();
            let plan = MatPlan {
                batches: 1,
                m,
                k,
                n,
                a_batched: false,
                b_batched: false,
                trans_b,
            };
            (plan, shape)
        } else if sa.len() == 2 {
            let lead = &sb[..sb.len() - 2];
            let mut shape = lead.to_vec();
            shape.extend([sa[0], n]);
            let plan = MatPlan {
                batches: lead.iter().product(),
                m: sa[0],
                k,
                n,
                a_batched: false,
                b_batched: true,
                trans_b,
            };
            (plan, shape)
        } else if sa[..sa.len() - 2] == sb[..sb.len() - 2] {
            let lead = &sa[..sa.len() - 2];
            let mut shape = lead.to_vec();
            shape.extend([sa[sa.len() - 2], n]);
            let plan = MatPlan {
                batches: lead.iter().product(),
                m: sa[sa.len() - 2],
                k,
                n,
                a_batched: true,
                b_batched: true,
                trans_b,
            };
            (plan, shape)
        } else {
            return Err(mismatch());
        };

        let MatPlan { m, k, n, .. } = plan;
        let mut out = vec![T::zero(); plan.batches * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for bi in 0..plan.batches {
                let a_off = if plan.a_batched { bi * m * k } else { 0 };
                let b_off = if plan.b_batched { bi * k * n } else { 0 };
                T::gemm(
                    m,
                    k,
                    n,
                    &av[a_off..a_off + m * k],
                    (k as isize, 1),
                    &bv[b_off..b_off + k * n],
                    plan.b_strides(),
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, plan }, &[a, b]))
    }

    fn broadcast_check(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.ends_with(sb) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    /// Elementwise sum; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check(a, b, "add")?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let bl = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % bl])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product; `b` may broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check(a, b, "mul")?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let bl = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv[i % bl])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { a, factor }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a).data();
        let s: T = av.iter().copied().sum();
        let s = s / T::of(av.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean { a }, &[a])
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let w = av.last_dim();
        let mut out = vec![T::zero(); av.len()];
        for (x, o) in av.data().chunks(w).zip(out.chunks_mut(w)) {
            softmax_row(x, None, o);
        }
        let value = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Softmax { a }, &[a])
    }

    /// Softmax over the last axis restricted to valid keys. `key_valid` holds
    /// `batch × keys` flags; rows of `a` are split evenly across the batch.
    /// Masked keys receive exactly zero weight.
    pub fn masked_softmax(&mut self, a: Var, key_valid: &[bool]) -> Result<Var> {
        let av = self.value(a);
        let w = av.last_dim();
        let rows = av.len() / w;
        if key_valid.len() % w != 0 || rows % (key_valid.len() / w).max(1) != 0 {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                lhs: av.shape().to_vec(),
                rhs: vec![key_valid.len()],
            });
        }
        let batch = key_valid.len() / w;
        let rows_per_batch = rows / batch;
        let mut out = vec![T::zero(); av.len()];
        for (r, (x, o)) in av.data().chunks(w).zip(out.chunks_mut(w)).enumerate() {
            let b = r / rows_per_batch;
            if !softmax_row(x, Some(&key_valid[b * w..(b + 1) * w]), o) {
                return Err(Error::EmptyAttentionRow { row: r });
            }
        }
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { a }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    /// Swaps axes 1 and 2 of a 4-D tensor: `[p, q, r, s] -> [p, r, q, s]`.
    pub fn permute_0213(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "permute_0213",
                lhs: s.to_vec(),
                rhs: vec![4],
            });
        }
        let out = permute_0213_data(av.data(), [s[0], s[1], s[2], s[3]]);
        let value = Tensor::new(vec![s[0], s[2], s[1], s[3]], out)?;
        Ok(self.push(value, Op::Permute0213 { a }, &[a]))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_lastdim(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or(Error::ShapeMismatch {
            op: "concat_lastdim",
            lhs: vec![],
            rhs: vec![],
        })?;
        let lead = {
            let s = self.shape(*first);
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat_lastdim",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            inputs,
        ))
    }

    /// Layer normalization over the last axis with learnable scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let h = xv.last_dim();
        if self.value(gamma).shape() != [h] || self.value(beta).shape() != [h] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: self.value(gamma).shape().to_vec(),
            });
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let hf = T::of(h as f64);
        let eps = T::of(eps);
        let rows = xv.len() / h;
        let mut out = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xv.data()[r * h..(r + 1) * h];
            let mean = row.iter().copied().sum::<T>() / hf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..h {
                let xh = (row[j] - mean) * rs;
                xhat[r * h + j] = xh;
                out[r * h + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// GELU, tanh approximation as in the original BERT code.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| gelu_parts(x).0).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Gelu { a }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Sigmoid { a }, &[a])
    }

    /// Inverted dropout. Returns `a` unchanged when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let scale = T::of(1.0 / keep);
        let av = self.value(a);
        let mask: Vec<T> = (0..av.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Dropout { a, mask }, &[a])
    }

    /// Gathers rows of `src` (viewed as `[rows, last_dim]`). The gradient
    /// scatter-adds back into the source rows.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize], out_shape: &[usize]) -> Result<Var> {
        let sv = self.value(src);
        let w = sv.last_dim();
        let n_rows = sv.len() / w;
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            if r >= n_rows {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows source".into(),
                    index: r,
                    size: n_rows,
                });
            }
            out.extend_from_slice(sv.row(r));
        }
        if out_shape.last() != Some(&w) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: sv.shape().to_vec(),
                rhs: out_shape.to_vec(),
            });
        }
        let value = Tensor::new(out_shape.to_vec(), out)?;
        Ok(self.push(
            value,
            Op::Gather {
                src,
                rows: rows.to_vec(),
            },
            &[src],
        ))
    }

    /// Mean of the source rows listed in each bag. `offsets` has one entry per
    /// bag plus a final end marker into `rows`; every bag must be non-empty.
    pub fn bag_mean(
        &mut self,
        src: Var,
        offsets: &[usize],
        rows: &[usize],
        out_shape: &[usize],
    ) -> Result<Var> {
        let sv = self.value(src);
        let w = sv.last_dim();
        let n_rows = sv.len() / w;
        let bags = offsets.len().saturating_sub(1);
        let mut out = vec![T::zero(); bags * w];
        for b in 0..bags {
            let members = &rows[offsets[b]..offsets[b + 1]];
            if members.is_empty() {
                return Err(Error::Config(format!("bag {b} is empty")));
            }
            let inv = T::one() / T::of(members.len() as f64);
            for &r in members {
                if r >= n_rows {
                    return Err(Error::IndexOutOfRange {
                        what: "bag_mean source".into(),
                        index: r,
                        size: n_rows,
                    });
                }
                for (o, &v) in out[b * w..(b + 1) * w].iter_mut().zip(sv.row(r)) {
                    *o = *o + v * inv;
                }
            }
        }
        let value = Tensor::new(out_shape.to_vec(), out)?;
        Ok(self.push(
            value,
            Op::BagMean {
                src,
                offsets: offsets.to_vec(),
                rows: rows.to_vec(),
            },
            &[src],
        ))
    }

    /// Mean cross-entropy of `logits` (`[n, classes]`) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.last_dim();
        let n = lv.len() / c;
        if targets.is_empty() {
            return Err(Error::NoMaskedPositions);
        }
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![T::zero(); lv.len()];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::IndexOutOfRange {
                    what: "cross_entropy target".into(),
                    index: t,
                    size: c,
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            loss = loss + lse - row[t];
            for (p, &x) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let loss = loss / T::of(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// `out[n] = Σ_i gates[n, i] · feats[n, i, :]`.
    pub fn weighted_sum(&mut self, gates: Var, feats: Var) -> Result<Var> {
        let gs = self.shape(gates).to_vec();
        let fs = self.shape(feats).to_vec();
        if gs.len() != 2 || fs.len() != 3 || gs[0] != fs[0] || gs[1] != fs[1] {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: gs,
                rhs: fs,
            });
        }
        let (n, k, h) = (fs[0], fs[1], fs[2]);
        let gv = self.value(gates).data();
        let fv = self.value(feats).data();
        let mut out = vec![T::zero(); n * h];
        for r in 0..n {
            for i in 0..k {
                let g = gv[r * k + i];
                let f = &fv[(r * k + i) * h..(r * k + i + 1) * h];
                for (o, &x) in out[r * h..(r + 1) * h].iter_mut().zip(f) {
                    *o = *o + g * x;
                }
            }
        }
        let value = Tensor::new(vec![n, h], out)?;
        Ok(self.push(value, Op::WeightedSum { gates, feats }, &[gates, feats]))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 2 || start >= end || end > s[0] {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: s.to_vec(),
                rhs: vec![start, end],
            });
        }
        let w = s[1];
        let value = Tensor::new(vec![end - start, w], av.data()[start * w..end * w].to_vec())?;
        Ok(self.push(value, Op::SliceRows { a, start }, &[a]))
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`, filling gradients of every node
    /// that requires them and is reachable from the loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.vjp(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dg) in contributions {
                self.accumulate(v, dg);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            None => node.grad = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn vjp(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, plan } => {
                let MatPlan { m, k, n, .. } = *plan;
                let av = self.data(*a);
                let bv = self.data(*b);
                if self.needs(*a) {
                    let mut da = vec![T::zero(); av.len()];
                    // dA = dC · op(B)ᵀ
                    let bt = if plan.trans_b {
                        (k as isize, 1)
                    } else {
                        (1, n as isize)
                    };
                    for bi in 0..plan.batches {
                        let a_off = if plan.a_batched { bi * m * k } else { 0 };
                        let b_off = if plan.b_batched { bi * k * n } else { 0 };
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[bi * m * n..(bi + 1) * m * n],
                            (n as isize, 1),
                            &bv[b_off..b_off + k * n],
                            bt,
                            &mut da[a_off..a_off + m * k],
                            true,
                        );
                    }
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); bv.len()];
                    for bi in 0..plan.batches {
                        let a_off = if plan.a_batched { bi * m * k } else { 0 };
                        let b_off = if plan.b_batched { bi * k * n } else { 0 };
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let aa = &av[a_off..a_off + m * k];
                        let dst = &mut db[b_off..b_off + k * n];
                        if plan.trans_b {
                            // dB (n×k) = dCᵀ · A
                            T::gemm(n, m, k, gc, (1, n as isize), aa, (k as isize, 1), dst, true);
                        } else {
                            // dB (k×n) = Aᵀ · dC
                            T::gemm(k, m, n, aa, (1, k as isize), gc, (n as isize, 1), dst, true);
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    let bl = self.data(*b).len();
                    let mut db = vec![T::zero(); bl];
                    for (j, &x) in g.iter().enumerate() {
                        db[j % bl] = db[j % bl] + x;
                    }
                    out.push((*b, db));
                }
            }
            Op::Mul { a, b } => {
                let av = self.data(*a);
                let bv = self.data(*b);
                let bl = bv.len();
                if self.needs(*a) {
                    let da = g.iter().enumerate().map(|(j, &x)| x * bv[j % bl]).collect();
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); bl];
                    for (j, (&x, &y)) in g.iter().zip(av).enumerate() {
                        db[j % bl] = db[j % bl] + x * y;
                    }
                    out.push((*b, db));
                }
            }
            Op::Scale { a, factor } => {
                out.push((*a, g.iter().map(|&x| x * *factor).collect()));
            }
            Op::Sum { a } => {
                out.push((*a, vec![g[0]; self.data(*a).len()]));
            }
            Op::Mean { a } => {
                let n = self.data(*a).len();
                out.push((*a, vec![g[0] / T::of(n as f64); n]));
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let w = node.value.last_dim();
                let mut da = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(w).zip(g.chunks(w)).zip(da.chunks_mut(w)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for ((d, &p), &q) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = p * (q - dot);
                    }
                }
                out.push((*a, da));
            }
            Op::Reshape { a } => out.push((*a, g.to_vec())),
            Op::Permute0213 { a } => {
                let s = node.value.shape();
                out.push((*a, permute_0213_data(g, [s[0], s[1], s[2], s[3]])));
            }
            Op::Concat { inputs } => {
                let widths: Vec<usize> = inputs
                    .iter()
                    .map(|&v| self.nodes[v.0].value.last_dim())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&v, &w) in inputs.iter().zip(&widths) {
                    if self.needs(v) {
                        let mut dv = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dv.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        out.push((v, dv));
                    }
                    offset += w;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let h = node.value.last_dim();
                let gv = self.data(*gamma);
                let hf = T::of(h as f64);
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * h..(r + 1) * h];
                        let xr = &xhat[r * h..(r + 1) * h];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..h {
                            let d = gr[j] * gv[j];
                            s1 = s1 + d;
                            s2 = s2 + d * xr[j];
                        }
                        for j in 0..h {
                            let d = gr[j] * gv[j];
                            dx[r * h + j] = rs / hf * (hf * d - s1 - xr[j] * s2);
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gamma) {
                    let mut dg = vec![T::zero(); h];
                    for (j, (&q, &xh)) in g.iter().zip(xhat).enumerate() {
                        dg[j % h] = dg[j % h] + q * xh;
                    }
                    out.push((*gamma, dg));
                }
                if self.needs(*beta) {
                    let mut db = vec![T::zero(); h];
                    for (j, &q) in g.iter().enumerate() {
                        db[j % h] = db[j % h] + q;
                    }
                    out.push((*beta, db));
                }
            }
            Op::Gelu { a } => {
                let av = self.data(*a);
                out.push((*a, g.iter().zip(av).map(|(&q, &x)| q * gelu_parts(x).1).collect()));
            }
            Op::Sigmoid { a } => {
                let y = node.value.data();
                out.push((
                    *a,
                    g.iter()
                        .zip(y)
                        .map(|(&q, &s)| q * s * (T::one() - s))
                        .collect(),
                ));
            }
            Op::Dropout { a, mask } => {
                out.push((*a, g.iter().zip(mask).map(|(&q, &m)| q * m).collect()));
            }
            Op::Gather { src, rows } => {
                let sv = &self.nodes[src.0].value;
                let w = sv.last_dim();
                let mut ds = vec![T::zero(); sv.len()];
                for (o, &r) in rows.iter().enumerate() {
                    for (d, &q) in ds[r * w..(r + 1) * w].iter_mut().zip(&g[o * w..(o + 1) * w]) {
                        *d = *d + q;
                    }
                }
                out.push((*src, ds));
            }
            Op::BagMean { src, offsets, rows } => {
                let sv = &self.nodes[src.0].value;
                let w = sv.last_dim();
                let mut ds = vec![T::zero(); sv.len()];
                for b in 0..offsets.len() - 1 {
                    let members = &rows[offsets[b]..offsets[b + 1]];
                    let inv = T::one() / T::of(members.len() as f64);
                    for &r in members {
                        for (d, &q) in ds[r * w..(r + 1) * w]
                            .iter_mut()
                            .zip(&g[b * w..(b + 1) * w])
                        {
                            *d = *d + q * inv;
                        }
                    }
                }
                out.push((*src, ds));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.nodes[logits.0].value.last_dim();
                let scale = g[0] / T::of(targets.len() as f64);
                let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * c + t] = dl[r * c + t] - scale;
                }
                out.push((*logits, dl));
            }
            Op::WeightedSum { gates, feats } => {
                let fs = self.nodes[feats.0].value.shape();
                let (n, k, h) = (fs[0], fs[1], fs[2]);
                let gv = self.data(*gates);
                let fv = self.data(*feats);
                if self.needs(*gates) {
                    let mut dg = vec![T::zero(); n * k];
                    for r in 0..n {
                        let gr = &g[r * h..(r + 1) * h];
                        for i in 0..k {
                            let f = &fv[(r * k + i) * h..(r * k + i + 1) * h];
                            dg[r * k + i] = f.iter().zip(gr).map(|(&x, &q)| x * q).sum();
                        }
                    }
                    out.push((*gates, dg));
                }
                if self.needs(*feats) {
                    let mut df = vec![T::zero(); n * k * h];
                    for r in 0..n {
                        let gr = &g[r * h..(r + 1) * h];
                        for i in 0..k {
                            let gate = gv[r * k + i];
                            for (d, &q) in df[(r * k + i) * h..(r * k + i + 1) * h]
                                .iter_mut()
                                .zip(gr)
                            {
                                *d = gate * q;
                            }
                        }
                    }
                    out.push((*feats, df));
                }
            }
            Op::SliceRows { a, start } => {
                let av = &self.nodes[a.0].value;
                let w = av.last_dim();
                let mut da = vec![T::zero(); av.len()];
                da[start * w..start * w + g.len()].copy_from_slice(g);
                out.push((*a, da));
            }
        }
        out
    }
}

fn permute_0213_data<T: Copy>(src: &[T], [p, q, r, s]: [usize; 4]) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for i in 0..p {
        for k in 0..r {
            for j in 0..q {
                let off = ((i * q + j) * r + k) * s;
                out.extend_from_slice(&src[off..off + s]);
            }
        }
    }
    out
}
