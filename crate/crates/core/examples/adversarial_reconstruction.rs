//! Decouples a subject, reconstructs it with the generator and scores the
//! real and reconstructed networks with the discriminator.

use decgan::adversarial::sample_latent;
use decgan::data::{generate_synthetic, SyntheticSpec};
use decgan::tensor::Tape;
use decgan::trainer::{rmse, TrainConfig, TrainState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ds, _) = generate_synthetic(&SyntheticSpec::desk_default(5))?;
    let net = &ds.networks()[0];
    let (n, f) = ds.dims().expect("nonempty dataset");
    // skip initializations whose selector rejects every node
    let mut seed = 0;
    let mut state = loop {
        let s = TrainState::new(TrainConfig::default(), n, f, seed)?;
        if !s.model.decoupler.decouple(net)?.all_empty() {
            break s;
        }
        seed += 1;
    };
    let z = sample_latent(&mut state.rng, state.model.generator.config.latent_dim);
    let m = &state.model;

    let tape = Tape::new();
    let mp = m.decoupler.params.bind(&tape, false);
    let gp = m.generator.params.bind(&tape, false);
    let dp = m.discriminator.params.bind(&tape, false);
    let x = tape.constant(net.features().clone());
    let a = tape.constant(net.adjacency().clone());
    let trace = m.decoupler.forward(&mp, x, a)?;
    let rec = m.generator.reconstruct(
        &gp,
        tape.constant(z),
        &trace.output.decomposition,
        &trace.sparse_features,
        trace.supplement_features,
    )?;

    let real = m.discriminator.discriminate(&dp, x, a)?;
    let fake = m.discriminator.discriminate(&dp, rec.features, rec.adjacency)?;
    println!("seed {seed}, circuits {:?}", trace.output.circuits());
    println!("adjacency RMSE {:.4}", rmse(&rec.adjacency.value(), net.adjacency())?);
    println!("D(real) {:.4}, D(reconstruction) {:.4}", real.item(), fake.item());
    Ok(())
}
