//! The three fusion functions on a hand-made set of feature vectors.
//!
//! cargo run --example fusion

use nova_rec::embed::{fuse_add, fuse_concat, fuse_gating, GateActivation};
use nova_rec::tensor::{Tape, Tensor};

fn main() {
    let mut tape = Tape::<f64>::new();
    // two positions, h = 3; item ID, genre and position vectors
    let id = tape.constant(Tensor::from_f64(&[2, 3], &[1.0, 0.0, 0.5, 0.2, 0.2, 0.2]).unwrap());
    let genre = tape.constant(Tensor::from_f64(&[2, 3], &[0.0, 1.0, 0.0, -1.0, 0.5, 0.0]).unwrap());
    let pos = tape.constant(Tensor::from_f64(&[2, 3], &[0.1, 0.1, 0.1, 0.3, 0.0, -0.3]).unwrap());
    let feats = [id, genre, pos];

    let add = fuse_add(&mut tape, &feats).unwrap();
    println!("add:     {:?}", tape.value(add).data());

    // concat with weights that read back only the ID block
    let mut w = vec![0.0; 9 * 3];
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let w = tape.constant(Tensor::from_f64(&[9, 3], &w).unwrap());
    let b = tape.constant(Tensor::zeros(&[3]));
    let concat = fuse_concat(&mut tape, &feats, w, b).unwrap();
    println!("concat:  {:?}", tape.value(concat).data());

    // gate direction favouring the first coordinate
    let gw = tape.constant(Tensor::from_f64(&[3, 1], &[4.0, 0.0, 0.0]).unwrap());
    for act in [GateActivation::Softmax, GateActivation::Sigmoid] {
        let (out, gates) = fuse_gating(&mut tape, &feats, gw, act).unwrap();
        println!("gating ({act}): gates {:?}", tape.value(gates).data());
        println!("                  out {:?}", tape.value(out).data());
    }
}
