//! Classifies a circuit hypergraph with hyperedge neurons and takes one
//! gradient of the cross-entropy.

use decgan::analytic::{analytic_loss, Analytic, AnalyticConfig};
use decgan::hypergraph::Hypergraph;
use decgan::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, f) = (8, 6);
    let model = Analytic::new(AnalyticConfig::default(), f, &mut rng)?;
    let circuits = vec![vec![0, 1, 2], vec![4, 5]];
    let incidence = Hypergraph::embed_circuits(&circuits, n)?.incidence();
    // sparse features: only circuit rows are nonzero
    let sparse: Vec<Tensor> = circuits
        .iter()
        .map(|c| Tensor::from_fn(n, f, |i, j| if c.contains(&i) { ((i * f + j) as f64).sin() } else { 0.0 }))
        .collect();

    let tape = Tape::new();
    let params = model.params.bind(&tape, true);
    let inputs: Vec<_> = sparse.into_iter().map(|s| tape.constant(s)).collect();
    let probs = model.forward(&params, &inputs, tape.constant(incidence))?;
    let loss = analytic_loss(probs, 1)?;
    let grads = tape.backward(loss)?;
    println!("class probabilities {:?}", probs.value().data());
    println!("loss {:.4}", loss.item());
    let norm: f64 = params.grads(&grads).iter().flat_map(|g| g.data().iter().map(|v| v * v)).sum::<f64>().sqrt();
    println!("parameter gradient norm {norm:.4e}");
    Ok(())
}
