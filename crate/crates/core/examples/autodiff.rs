//! Reverse-mode differentiation on the tape: a two-layer perceptron with a
//! cross-entropy loss, checked against central differences.
//!
//! cargo run --example autodiff

use nova_rec::tensor::{Tape, Tensor};

fn loss(x: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let x = tape.constant(x.clone());
    let w1v = tape.leaf(w1.clone());
    let w2v = tape.leaf(w2.clone());
    let h = tape.matmul(x, w1v).unwrap();
    let h = tape.gelu(h);
    let logits = tape.matmul(h, w2v).unwrap();
    let l = tape.cross_entropy(logits, &[0, 2]).unwrap();
    let value = tape.value(l).data()[0];
    tape.backward(l).unwrap();
    (value, tape.grad(w1v).unwrap().to_vec())
}

fn main() {
    let x = Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 1.5, 0.0, -0.5]).unwrap();
    let w1 = Tensor::from_f64(&[3, 4], &(0..12).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
    let w2 = Tensor::from_f64(&[4, 3], &(0..12).map(|i| (i as f64 * 0.71).cos()).collect::<Vec<_>>()).unwrap();

    let (value, grad) = loss(&x, &w1, &w2);
    println!("loss = {value:.6}");
    println!("{:>4} {:>14} {:>14}", "w1", "analytic", "numeric");
    let eps = 1e-5;
    for j in 0..w1.len() {
        let mut up = w1.clone();
        up.data_mut()[j] += eps;
        let mut down = w1.clone();
        down.data_mut()[j] -= eps;
        let numeric = (loss(&x, &up, &w2).0 - loss(&x, &down, &w2).0) / (2.0 * eps);
        println!("{j:>4} {:>14.8} {:>14.8}", grad[j], numeric);
    }
}
