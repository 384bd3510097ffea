//! Runs an untrained decoupler on one synthetic subject and prints the
//! circuits, the supplement and the block decomposition sizes.

use decgan::data::{generate_synthetic, SyntheticSpec};
use decgan::decoupler::{Decoupler, DecouplerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ds, _) = generate_synthetic(&SyntheticSpec::desk_default(3))?;
    let net = &ds.networks()[0];
    let cfg = DecouplerConfig {
        t: 2,
        k: 5,
        ..DecouplerConfig::default()
    };
    // scan seeds for an initialization whose selector accepts some node
    for seed in 0..16 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = Decoupler::new(cfg.clone(), net.n_features(), &mut rng)?;
        let out = dec.decouple(net)?;
        if out.all_empty() {
            continue;
        }
        println!("seed {seed}, subject {}", net.id);
        for (p, c) in out.circuits().iter().enumerate() {
            println!("circuit {p}: {c:?} (threshold {:.4})", out.thresholds[p]);
        }
        println!("supplement: {:?}", out.supplement());
        let edges = |a: &decgan::tensor::Tensor| a.data().iter().filter(|&&v| v != 0.0).count() / 2;
        let d = &out.decomposition;
        println!(
            "edges: sparse {:?}, supplement {}, residual {}",
            d.sparse_adjacencies.iter().map(edges).collect::<Vec<_>>(),
            edges(&d.supplement_adjacency),
            edges(&d.residual_adjacency)
        );
        return Ok(());
    }
    println!("no seed selected a node");
    Ok(())
}
