//! Reverse-mode gradients through a GCN layer, checked against central
//! differences.

use decgan::nn::{gcn_layer, normalized_adjacency, Activation};
use decgan::tensor::{grad_check, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = Tensor::from_fn(4, 4, |i, j| if i != j && (i + j) % 2 == 1 { 1.0 } else { 0.0 });
    let x = Tensor::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.3);
    let w = Tensor::from_fn(3, 2, |i, j| 0.1 * (i + 2 * j) as f64 - 0.2);

    let tape = Tape::new();
    let wv = tape.param(w.clone());
    let out = gcn_layer(normalized_adjacency(tape.constant(a.clone()))?, tape.constant(x.clone()), wv, Activation::Sigmoid)?;
    let loss = out.sum()?;
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", loss.item());
    println!("dL/dW {:?}", grads.get(wv).map(|g| g.data().to_vec()));

    let err = grad_check(
        |_, l| gcn_layer(normalized_adjacency(l[0].symmetrize()?)?, l[1], l[2], Activation::Sigmoid)?.sum(),
        &[a, x, w],
        1e-6,
    )?;
    println!("max relative error against finite differences: {err:.2e}");
    Ok(())
}
