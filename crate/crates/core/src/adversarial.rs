//! Generator G (latent vector to base connectivity, block stitching and
//! feature reconstruction) and discriminator D.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoupler::{block_mask, Decomposition};
use crate::error::{Error, Result};
use crate::nn::{gcn_forward, gcn_layer, normalized_adjacency, Activation, BoundParams, ParamSet};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` in the
/// adversarial losses.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub latent_dim: usize,
    /// Hidden width of the latent-to-connectivity perceptron.
    pub generator_hidden: usize,
    /// Hidden width of the feature-reconstruction GCN.
    pub reconstruct_hidden: usize,
    pub discriminator_hidden: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            generator_hidden: 64,
            reconstruct_hidden: 16,
            discriminator_hidden: 16,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.latent_dim, self.generator_hidden, self.reconstruct_hidden, self.discriminator_hidden].contains(&0) {
            return Err(Error::Invalid("adversarial widths must be positive".into()));
        }
        Ok(())
    }
}

/// A `1 × dim` standard normal draw.
pub fn sample_latent<R: Rng>(rng: &mut R, dim: usize) -> Tensor {
    Tensor::from_fn(1, dim, |_, _| rng.sample(StandardNormal))
}

/// `Â = A' + Σ_p A^{s(p)} + Ā ⊙ (1 − M)` with `M` the block mask: the
/// original weights on every circuit block and on the supplement block, the
/// generated ones on cross-block pairs.
pub fn stitch_adjacency<'t>(base: Var<'t>, parts: &Decomposition) -> Result<Var<'t>> {
    let tape = base.tape();
    let n = parts.supplement_adjacency.rows();
    if base.shape() != (n, n) {
        return Err(Error::Invalid(format!("base is {:?}, expected {n}x{n}", base.shape())));
    }
    let mut kept = parts.supplement_adjacency.clone();
    for s in &parts.sparse_adjacencies {
        kept.add_assign(s);
    }
    let off_block = block_mask(n, &parts.circuits, &parts.supplement).map(|m| 1.0 - m);
    Ok(tape.constant(kept).add(base.mul(tape.constant(off_block))?)?)
}

/// `X̄ = (X_supp + Σ_p X_p) / (t + 1)`.
pub fn mean_features<'t>(sparse_features: &[Var<'t>], supplement_features: Var<'t>) -> Result<Var<'t>> {
    let mut acc = supplement_features;
    for &f in sparse_features {
        acc = acc.add(f)?;
    }
    Ok(acc.scale(1.0 / (sparse_features.len() + 1) as f64)?)
}

/// The generator G.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: AdversarialConfig,
    pub n_nodes: usize,
    /// Width of the decoupler features fed to the reconstruction GCN.
    pub in_dim: usize,
    /// Width of the reconstructed features (the signal length).
    pub out_dim: usize,
    pub params: ParamSet,
}

/// A reconstructed network on a tape.
pub struct Reconstruction<'t> {
    pub base: Var<'t>,
    pub adjacency: Var<'t>,
    pub features: Var<'t>,
}

impl Generator {
    pub fn new<R: Rng>(config: AdversarialConfig, n_nodes: usize, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if n_nodes < 2 {
            return Err(Error::Invalid("the generator needs at least two nodes".into()));
        }
        let m = n_nodes * (n_nodes - 1) / 2;
        let mut params = ParamSet::new();
        params.insert_uniform("mlp.w1", config.latent_dim, config.generator_hidden, rng);
        params.insert_uniform("mlp.b1", 1, config.generator_hidden, rng);
        params.insert_uniform("mlp.w2", config.generator_hidden, m, rng);
        params.insert_uniform("mlp.b2", 1, m, rng);
        params.insert_uniform("gcn1", in_dim, config.reconstruct_hidden, rng);
        params.insert_uniform("gcn2", config.reconstruct_hidden, out_dim, rng);
        Ok(Self {
            config,
            n_nodes,
            in_dim,
            out_dim,
            params,
        })
    }

    /// `Ā`: symmetric, entries in `(0, 1)` off the diagonal, zero diagonal.
    pub fn generate_base<'t>(&self, params: &BoundParams<'t>, z: Var<'t>) -> Result<Var<'t>> {
        if z.shape() != (1, self.config.latent_dim) {
            return Err(Error::Invalid(format!(
                "latent is {:?}, expected 1x{}",
                z.shape(),
                self.config.latent_dim
            )));
        }
        let hidden = z.matmul(params.get("mlp.w1"))?.add(params.get("mlp.b1"))?.relu();
        let upper = hidden.matmul(params.get("mlp.w2"))?.add(params.get("mlp.b2"))?.sigmoid();
        Ok(z.tape().symmetric_from_upper(upper.t(), self.n_nodes)?)
    }

    /// Two GCN layers on `(X̄, Â)`, ReLU then identity, so the output can
    /// take both signs like the signals it imitates.
    pub fn reconstruct_features<'t>(&self, params: &BoundParams<'t>, adjacency: Var<'t>, x_bar: Var<'t>) -> Result<Var<'t>> {
        let norm = normalized_adjacency(adjacency)?;
        let h = gcn_layer(norm, x_bar, params.get("gcn1"), Activation::Relu)?;
        Ok(gcn_layer(norm, h, params.get("gcn2"), Activation::Identity)?)
    }

    /// Full reconstruction of one network from its decoupling.
    pub fn reconstruct<'t>(
        &self,
        params: &BoundParams<'t>,
        z: Var<'t>,
        parts: &Decomposition,
        sparse_features: &[Var<'t>],
        supplement_features: Var<'t>,
    ) -> Result<Reconstruction<'t>> {
        let base = self.generate_base(params, z)?;
        let adjacency = stitch_adjacency(base, parts)?;
        let x_bar = mean_features(sparse_features, supplement_features)?;
        let features = self.reconstruct_features(params, adjacency, x_bar)?;
        Ok(Reconstruction {
            base,
            adjacency,
            features,
        })
    }
}

/// The discriminator D.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: AdversarialConfig,
    pub n_features: usize,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn new<R: Rng>(config: AdversarialConfig, n_features: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.discriminator_hidden;
        let mut params = ParamSet::new();
        params.insert_uniform("gcn1", n_features, h, rng);
        params.insert_uniform("gcn2", h, h, rng);
        params.insert_uniform("fc.w", h, 1, rng);
        params.insert_uniform("fc.b", 1, 1, rng);
        Ok(Self {
            config,
            n_features,
            params,
        })
    }

    /// Probability in `(0, 1)` that `(x, a)` is a real network.
    pub fn discriminate<'t>(&self, params: &BoundParams<'t>, x: Var<'t>, a: Var<'t>) -> Result<Var<'t>> {
        let h = gcn_forward(x, a, params.get("gcn1"), Activation::Relu)?;
        let h = gcn_forward(h, a, params.get("gcn2"), Activation::Relu)?;
        Ok(h.mean_rows()?.matmul(params.get("fc.w"))?.add(params.get("fc.b"))?.sigmoid())
    }
}

fn clamp(p: Var<'_>) -> std::result::Result<Var<'_>, TensorError> {
    let tape = p.tape();
    let (r, c) = p.shape();
    p.maximum(tape.constant(Tensor::filled(r, c, PROB_CLAMP)))?
        .minimum(tape.constant(Tensor::filled(r, c, 1.0 - PROB_CLAMP)))
}

fn stack<'t>(probs: &[Var<'t>]) -> Result<Var<'t>> {
    let first = probs.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    Ok(first.tape().vstack(probs)?)
}

/// Non-saturating generator loss `mean(−log D(fake))`.
pub fn adv_loss_g<'t>(d_fake: &[Var<'t>]) -> Result<Var<'t>> {
    Ok(clamp(stack(d_fake)?)?.log()?.mean()?.neg())
}

/// `−[mean log D(real) + mean log(1 − D(fake))]`.
pub fn adv_loss_d<'t>(d_real: &[Var<'t>], d_fake: &[Var<'t>]) -> Result<Var<'t>> {
    let real = clamp(stack(d_real)?)?.log()?.mean()?;
    let fake = clamp(stack(d_fake)?)?.neg().add_scalar(1.0)?.log()?.mean()?;
    Ok(real.add(fake)?.neg())
}

/// Plain-value convenience: `Ā` for a given latent draw.
pub fn sample_base(generator: &Generator, z: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let params = generator.params.bind(&tape, false);
    let base = generator.generate_base(&params, tape.constant(z.clone()))?;
    Ok((*base.value()).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoupler::decompose;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> AdversarialConfig {
        AdversarialConfig {
            latent_dim: 4,
            generator_hidden: 6,
            reconstruct_hidden: 3,
            discriminator_hidden: 3,
        }
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let mut a = Tensor::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let w = if rng.random_bool(0.6) { rng.random_range(0.1..1.0) } else { 0.0 };
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
        a
    }

    fn usage(e: Error) -> TensorError {
        TensorError::Usage(e.to_string())
    }

    #[test]
    fn base_is_symmetric_bounded_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::new(small(), 7, 3, 5, &mut rng).unwrap();
        for _ in 0..100 {
            let z = sample_latent(&mut rng, 4);
            let base = sample_base(&g, &z).unwrap();
            assert_eq!(base, base.transpose());
            for i in 0..7 {
                assert_eq!(base.get(i, i), 0.0);
            }
            assert!(base.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(sample_base(&g, &z).unwrap(), base);
        }
        assert!(sample_base(&g, &Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn stitch_without_circuits_returns_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_adjacency(&mut rng, 6);
        let parts = decompose(&a, &[vec![], vec![]]).unwrap();
        let tape = Tape::new();
        let base = tape.constant(Tensor::filled(6, 6, 0.3));
        assert_eq!(*stitch_adjacency(base, &parts).unwrap().value(), a);
    }

    #[test]
    fn stitch_four_nodes() {
        let a = Tensor::from_fn(4, 4, |i, j| if i == j { 0.0 } else { (i + j) as f64 });
        let base = Tensor::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.01 * (i * j + 1) as f64 });
        let parts = decompose(&a, &[vec![0, 1]]).unwrap();
        let tape = Tape::new();
        let hat = stitch_adjacency(tape.constant(base.clone()), &parts).unwrap().value();
        for (i, j) in [(0, 1), (1, 0), (2, 3), (3, 2), (0, 0), (3, 3)] {
            assert_eq!(hat.get(i, j), a.get(i, j));
        }
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3), (2, 0), (3, 1)] {
            assert_eq!(hat.get(i, j), base.get(i, j));
        }
    }

    #[test]
    fn stitch_matches_two_case_oracle() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 9;
            let a = random_adjacency(&mut rng, n);
            let mut nodes: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                nodes.swap(i, rng.random_range(0..=i));
            }
            let circuits = vec![nodes[..3].to_vec(), nodes[3..5].to_vec()];
            let parts = decompose(&a, &circuits).unwrap();
            let g = Generator::new(small(), n, 2, 2, &mut rng).unwrap();
            let base = sample_base(&g, &sample_latent(&mut rng, 4)).unwrap();
            let tape = Tape::new();
            let hat = stitch_adjacency(tape.constant(base.clone()), &parts).unwrap().value();
            let block_of = |v: usize| circuits.iter().position(|c| c.contains(&v));
            for i in 0..n {
                for j in 0..n {
                    let expect = if block_of(i) == block_of(j) { a.get(i, j) } else { base.get(i, j) };
                    assert_eq!(hat.get(i, j), expect);
                }
            }
        }
    }

    #[test]
    fn feature_reconstruction_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tape = Tape::new();
        let supp = tape.constant(random(&mut rng, 5, 3));
        assert_eq!(*mean_features(&[], supp).unwrap().value(), *supp.value());

        let mut g = Generator::new(small(), 5, 3, 4, &mut rng).unwrap();
        for name in ["gcn1", "gcn2"] {
            let w = g.params.get_mut(name).unwrap();
            *w = Tensor::zeros(w.rows(), w.cols());
        }
        let params = g.params.bind(&tape, false);
        let a = tape.constant(random_adjacency(&mut rng, 5));
        let out = g.reconstruct_features(&params, a, supp).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5;
            let g = Generator::new(small(), n, 3, 2, &mut rng).unwrap();
            let a = random_adjacency(&mut rng, n);
            let parts = decompose(&a, &[vec![0, 3]]).unwrap();
            let z = sample_latent(&mut rng, 4);
            let feats = [random(&mut rng, n, 3), random(&mut rng, n, 3)];
            let probe_a = random(&mut rng, n, n);
            let probe_x = random(&mut rng, n, 2);
            let err = grad_check(
                |tape, l| {
                    let params = g.params.bind_vars(l).map_err(usage)?;
                    let rec = g
                        .reconstruct(
                            &params,
                            tape.constant(z.clone()),
                            &parts,
                            &[tape.constant(feats[0].clone())],
                            tape.constant(feats[1].clone()),
                        )
                        .map_err(usage)?;
                    let la = rec.adjacency.mul(tape.constant(probe_a.clone()))?.sum()?;
                    la.add(rec.features.mul(tape.constant(probe_x.clone()))?.sum()?)
                },
                &g.params.tensors(),
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn discriminator_range_and_zero_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = Discriminator::new(small(), 4, &mut rng).unwrap();
        let tape = Tape::new();
        for _ in 0..50 {
            let params = d.params.bind(&tape, false);
            let x = tape.constant(random(&mut rng, 6, 4).map(|v| v * 5.0));
            let a = tape.constant(random_adjacency(&mut rng, 6));
            let p = d.discriminate(&params, x, a).unwrap().item();
            assert!(p > 0.0 && p < 1.0);
        }
        *d.params.get_mut("fc.w").unwrap() = Tensor::zeros(3, 1);
        *d.params.get_mut("fc.b").unwrap() = Tensor::zeros(1, 1);
        let params = d.params.bind(&tape, false);
        let x = tape.constant(random(&mut rng, 6, 4));
        let a = tape.constant(random_adjacency(&mut rng, 6));
        assert_eq!(d.discriminate(&params, x, a).unwrap().item(), 0.5);
    }

    #[test]
    fn discriminator_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Discriminator::new(small(), 3, &mut rng).unwrap();
            let mut leaves = vec![random(&mut rng, 5, 3), random_adjacency(&mut rng, 5)];
            leaves.extend(d.params.tensors());
            let err = grad_check(
                |_, l| {
                    let params = d.params.bind_vars(&l[2..]).map_err(usage)?;
                    d.discriminate(&params, l[0], l[1]).map_err(usage)
                },
                &leaves,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn loss_examples() {
        let tape = Tape::new();
        let p = |v: f64| tape.constant(Tensor::scalar(v));
        let half = [p(0.5), p(0.5)];
        assert!((adv_loss_g(&half).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        assert!(adv_loss_g(&[p(1.0)]).unwrap().item() < 1e-6);
        assert!((adv_loss_d(&half, &half).unwrap().item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(adv_loss_d(&[p(1.0)], &[p(0.0)]).unwrap().item() < 1e-6);
        assert!(adv_loss_g(&[]).is_err());

        let mut prev = f64::INFINITY;
        for step in 1..100 {
            let v = step as f64 / 100.0;
            let l = adv_loss_g(&[p(v)]).unwrap().item();
            assert!(l < prev);
            prev = l;
            let confused = adv_loss_d(&[p(v)], &[p(v)]).unwrap().item();
            assert!(confused >= 2.0 * 2f64.ln() - 1e-12);
        }
    }
}
