//! Central finite differences against the tape's analytic gradients, one
//! differentiable op at a time, on small random tensors in f64.

use nova_rec::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Projects the op output onto a fixed random direction so every input
/// coordinate gets a generic, non-degenerate gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.shape(out), &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

/// Runs `op` on leaves built from `inputs` and checks each input's gradient.
fn check<F>(name: &str, inputs: Vec<Tensor<f64>>, op: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = op(&mut tape, &vars);
        let loss = project(&mut tape, out, 99);
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = op(&mut tape, &vars);
    let loss = project(&mut tape, out, 99);
    tape.backward(loss).unwrap();

    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let err = (analytic[j] - numeric).abs() / (numeric.abs() + 1e-8);
            assert!(
                err < TOL,
                "{name}: input {i} elem {j}: analytic {} numeric {numeric} rel {err:e}",
                analytic[j]
            );
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn matmul_2d_and_batched() {
    let mut r = rng(1);
    check("matmul", vec![random(&[3, 4], &mut r), random(&[4, 2], &mut r)], |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
    check("matmul batched", vec![random(&[2, 3, 4], &mut r), random(&[2, 4, 5], &mut r)], |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
    check("matmul shared rhs", vec![random(&[2, 3, 4], &mut r), random(&[4, 2], &mut r)], |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
}

#[test]
fn matmul_transposed_rhs() {
    let mut r = rng(2);
    check("matmul_bt", vec![random(&[2, 3, 4], &mut r), random(&[2, 5, 4], &mut r)], |t, v| {
        t.matmul_bt(v[0], v[1]).unwrap()
    });
    check("matmul_bt 2d", vec![random(&[3, 4], &mut r), random(&[6, 4], &mut r)], |t, v| {
        t.matmul_bt(v[0], v[1]).unwrap()
    });
}

#[test]
fn add_and_mul_with_broadcast() {
    let mut r = rng(3);
    check("add", vec![random(&[3, 4], &mut r), random(&[3, 4], &mut r)], |t, v| t.add(v[0], v[1]).unwrap());
    check("add bias", vec![random(&[2, 3, 4], &mut r), random(&[4], &mut r)], |t, v| {
        t.add(v[0], v[1]).unwrap()
    });
    check("mul", vec![random(&[3, 4], &mut r), random(&[3, 4], &mut r)], |t, v| t.mul(v[0], v[1]).unwrap());
    check("mul broadcast", vec![random(&[2, 3, 4], &mut r), random(&[3, 4], &mut r)], |t, v| {
        t.mul(v[0], v[1]).unwrap()
    });
}

#[test]
fn scale_sum_mean() {
    let mut r = rng(4);
    check("scale", vec![random(&[2, 5], &mut r)], |t, v| t.scale(v[0], -1.7));
    check("sum", vec![random(&[2, 5], &mut r)], |t, v| t.sum(v[0]));
    check("mean", vec![random(&[6, 5], &mut r)], |t, v| t.mean(v[0]));
}

#[test]
fn softmax_variants() {
    let mut r = rng(5);
    check("softmax", vec![random(&[3, 5], &mut r)], |t, v| t.softmax_lastdim(v[0]));
    let valid = [true, false, true, true, false, true, true, true];
    check("masked_softmax", vec![random(&[2, 3, 4], &mut r)], move |t, v| {
        t.masked_softmax(v[0], &valid).unwrap()
    });
    check("sigmoid", vec![random(&[4, 3], &mut r)], |t, v| t.sigmoid(v[0]));
}

#[test]
fn shape_ops() {
    let mut r = rng(6);
    check("reshape", vec![random(&[2, 6], &mut r)], |t, v| t.reshape(v[0], &[3, 4]).unwrap());
    check("permute_0213", vec![random(&[2, 3, 4, 2], &mut r)], |t, v| t.permute_0213(v[0]).unwrap());
    check(
        "concat",
        vec![random(&[2, 3], &mut r), random(&[2, 1], &mut r), random(&[2, 4], &mut r)],
        |t, v| t.concat_lastdim(v).unwrap(),
    );
    check("slice_rows", vec![random(&[5, 3], &mut r)], |t, v| t.slice_rows(v[0], 1, 4).unwrap());
}

#[test]
fn layer_norm_all_inputs() {
    let mut r = rng(7);
    let mut gamma = random(&[5], &mut r);
    gamma.data_mut().iter_mut().for_each(|g| *g += 1.0);
    check(
        "layer_norm",
        vec![random(&[2, 3, 5], &mut r), gamma, random(&[5], &mut r)],
        |t, v| t.layer_norm(v[0], v[1], v[2], 1e-12).unwrap(),
    );
}

#[test]
fn gelu_activation() {
    let mut r = rng(8);
    let mut x = random(&[4, 5], &mut r);
    x.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    check("gelu", vec![x], |t, v| t.gelu(v[0]));
}

#[test]
fn dropout_with_fixed_mask() {
    let mut r = rng(9);
    check("dropout", vec![random(&[4, 6], &mut r)], |t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(5);
        t.dropout(v[0], 0.3, &mut mask_rng)
    });
}

#[test]
fn lookups_scatter_gradients() {
    let mut r = rng(10);
    check("gather_rows", vec![random(&[5, 3], &mut r)], |t, v| {
        t.gather_rows(v[0], &[0, 3, 3, 1, 4, 3], &[2, 3, 3]).unwrap()
    });
    check("bag_mean", vec![random(&[5, 3], &mut r)], |t, v| {
        t.bag_mean(v[0], &[0, 2, 3, 6], &[1, 4, 2, 0, 0, 3], &[3, 3]).unwrap()
    });
}

#[test]
fn cross_entropy_logits() {
    let mut r = rng(11);
    check("cross_entropy", vec![random(&[4, 6], &mut r)], |t, v| {
        t.cross_entropy(v[0], &[0, 5, 2, 2]).unwrap()
    });
}

#[test]
fn weighted_sum_both_inputs() {
    let mut r = rng(12);
    check("weighted_sum", vec![random(&[3, 4], &mut r), random(&[3, 4, 2], &mut r)], |t, v| {
        t.weighted_sum(v[0], v[1]).unwrap()
    });
}

#[test]
fn attention_composite() {
    let mut r = rng(13);
    let valid = [true, true, false, true, true, true];
    check(
        "scaled_dot_attention",
        vec![random(&[2, 2, 3, 4], &mut r), random(&[2, 2, 3, 4], &mut r), random(&[2, 2, 3, 4], &mut r)],
        move |t, v| t.scaled_dot_attention(v[0], v[1], v[2], Some(&valid)).unwrap().0,
    );
}

#[test]
fn composed_graph() {
    let mut r = rng(14);
    check(
        "mlp",
        vec![random(&[3, 4], &mut r), random(&[4, 6], &mut r), random(&[6], &mut r), random(&[6, 4], &mut r)],
        |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add(h, v[2]).unwrap();
            let h = t.gelu(h);
            let h = t.matmul(h, v[3]).unwrap();
            let h = t.add(h, v[0]).unwrap();
            t.softmax_lastdim(h)
        },
    );
}
