//! Planted-circuit generator.
//!
//! Class 0 is healthy. Every other class `c` has its own list of node
//! subsets (circuits); its subjects get extra structural weight inside each
//! circuit block and a shared latent signal mixed into each circuit's BOLD
//! series.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{default_class_names, BrainNetwork, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planted circuits per class index (diseased classes only).
pub type GroundTruth = BTreeMap<usize, Vec<Vec<usize>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    /// Signal length per node.
    pub f: usize,
    /// Subjects per class.
    pub n_samples: usize,
    pub n_classes: usize,
    /// `planted_circuits[c - 1]` holds the circuits of class `c`.
    pub planted_circuits: Vec<Vec<Vec<usize>>>,
    pub sc_boost: f64,
    pub bold_rho: f64,
    pub noise_sigma: f64,
    /// Fraction of background edges kept.
    pub density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::desk_default(0)
    }
}

impl SyntheticSpec {
    /// 20 nodes, 64 samples per signal, 100 subjects in each of 2 classes,
    /// two 5-node circuits, `sc_boost = 0.5`, `bold_rho = 0.6`.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            n_nodes: 20,
            f: 64,
            n_samples: 100,
            n_classes: 2,
            planted_circuits: place_circuits(20, 2, 5, 1, seed).expect("20 nodes hold two 5-node circuits"),
            sc_boost: 0.5,
            bold_rho: 0.6,
            noise_sigma: 1.0,
            density: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.n_nodes < 2 {
            return err(format!("n_nodes must be at least 2, got {}", self.n_nodes));
        }
        if self.f < 2 {
            return err(format!("signal length must be at least 2, got {}", self.f));
        }
        if self.n_classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.planted_circuits.len() != self.n_classes - 1 {
            return err(format!(
                "{} circuit lists given for {} diseased classes",
                self.planted_circuits.len(),
                self.n_classes - 1
            ));
        }
        if !(self.sc_boost.is_finite() && self.sc_boost >= 0.0) {
            return err(format!("sc_boost must be finite and nonnegative, got {}", self.sc_boost));
        }
        if !(0.0..1.0).contains(&self.bold_rho) {
            return err(format!("bold_rho must lie in [0, 1), got {}", self.bold_rho));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return err(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return err(format!("density must lie in [0, 1], got {}", self.density));
        }
        for (ci, circuits) in self.planted_circuits.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for circuit in circuits {
                if circuit.is_empty() {
                    return err(format!("class {}: empty circuit", ci + 1));
                }
                for &v in circuit {
                    if v >= self.n_nodes {
                        return err(format!("class {}: node {v} out of range for {} nodes", ci + 1, self.n_nodes));
                    }
                    if !seen.insert(v) {
                        return err(format!("class {}: circuits overlap at node {v}", ci + 1));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Draws `count` disjoint circuits of `size` nodes for each of
/// `n_diseased` classes from a seeded permutation.
pub fn place_circuits(n_nodes: usize, count: usize, size: usize, n_diseased: usize, seed: u64) -> Result<Vec<Vec<Vec<usize>>>> {
    if count * size > n_nodes {
        return Err(Error::Spec(format!("{count} circuits of {size} nodes do not fit in {n_nodes} nodes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1c0);
    (0..n_diseased)
        .map(|_| {
            let mut nodes: Vec<usize> = (0..n_nodes).collect();
            nodes.shuffle(&mut rng);
            Ok((0..count)
                .map(|c| {
                    let mut circuit = nodes[c * size..(c + 1) * size].to_vec();
                    circuit.sort_unstable();
                    circuit
                })
                .collect())
        })
        .collect()
}

/// Deterministic in `spec` (including its seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_nodes;
    let mut networks = Vec::with_capacity(spec.n_samples * spec.n_classes);
    for class in 0..spec.n_classes {
        let circuits: &[Vec<usize>] = if class == 0 { &[] } else { &spec.planted_circuits[class - 1] };
        for s in 0..spec.n_samples {
            let adjacency = background(&mut rng, n, spec.density, circuits, spec.sc_boost);
            let features = bold(&mut rng, n, spec.f, circuits, spec.bold_rho, spec.noise_sigma);
            let id = format!("c{class}-s{s:04}");
            networks.push(BrainNetwork::new(id, features, adjacency, class)?);
        }
    }
    let truth: GroundTruth = spec
        .planted_circuits
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.clone()))
        .collect();
    let ds = Dataset::new(networks, default_class_names(spec.n_classes), Provenance::Synthetic)?;
    Ok((ds, truth))
}

/// Uniform(0,1) weights, keeping a pair only when its weight exceeds
/// `1 - density`; `boost` is then added on every intra-circuit pair.
fn background(rng: &mut ChaCha8Rng, n: usize, density: f64, circuits: &[Vec<usize>], boost: f64) -> Tensor {
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w: f64 = rng.random();
            let w = if w > 1.0 - density { w } else { 0.0 };
            a.set(i, j, w);
            a.set(j, i, w);
        }
    }
    for circuit in circuits {
        for (x, &i) in circuit.iter().enumerate() {
            for &j in &circuit[x + 1..] {
                let w = a.get(i, j) + boost;
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
    }
    a
}

/// Each circuit mixes one shared latent series into its members:
/// `x = sqrt(rho) * s + sqrt(1 - rho) * e`, giving pairwise correlation
/// `rho` in expectation.
fn bold(rng: &mut ChaCha8Rng, n: usize, f: usize, circuits: &[Vec<usize>], rho: f64, sigma: f64) -> Tensor {
    let mut x = Tensor::from_fn(n, f, |_, _| rng.sample::<f64, _>(StandardNormal) * sigma);
    let (shared, own) = (rho.sqrt(), (1.0 - rho).sqrt());
    for circuit in circuits {
        let latent: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        for &i in circuit {
            for (t, s) in latent.iter().enumerate() {
                let v = sigma * shared * s + own * x.get(i, t);
                x.set(i, t, v);
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pearson_fc;

    fn mean_weights(ds: &Dataset, circuits: &[Vec<usize>], class: usize) -> (f64, f64) {
        let mut inside = BTreeSet::new();
        for c in circuits {
            for &i in c {
                for &j in c {
                    if i < j {
                        inside.insert((i, j));
                    }
                }
            }
        }
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for net in ds.networks().iter().filter(|n| n.label() == class) {
            let n = net.n_nodes();
            for i in 0..n {
                for j in i + 1..n {
                    let w = net.adjacency().get(i, j);
                    if inside.contains(&(i, j)) {
                        si += w;
                        ni += 1;
                    } else {
                        so += w;
                        no += 1;
                    }
                }
            }
        }
        (si / ni as f64, so / no as f64)
    }

    fn small_spec(boost: f64, rho: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_nodes: 20,
            f: 32,
            n_samples: 100,
            n_classes: 2,
            planted_circuits: vec![vec![vec![0, 1, 2, 3, 4], vec![10, 11, 12, 13, 14]]],
            sc_boost: boost,
            bold_rho: rho,
            noise_sigma: 1.0,
            density: 0.3,
            seed: 17,
        }
    }

    #[test]
    fn intra_circuit_excess_equals_boost() {
        let spec = small_spec(0.5, 0.6);
        let (ds, truth) = generate_synthetic(&spec).unwrap();
        let (inside, outside) = mean_weights(&ds, &truth[&1], 1);
        let diff = inside - outside;
        assert!((diff - 0.5).abs() < 0.05, "excess {diff}");
    }

    #[test]
    fn boost_raises_intra_circuit_mean() {
        for (seed, boost) in [(1u64, 0.05), (2, 0.2), (3, 1.5)] {
            let spec = SyntheticSpec {
                seed,
                n_samples: 50,
                ..small_spec(boost, 0.3)
            };
            let (ds, truth) = generate_synthetic(&spec).unwrap();
            let (inside, outside) = mean_weights(&ds, &truth[&1], 1);
            assert!(inside > outside, "boost {boost}: {inside} <= {outside}");
        }
    }

    #[test]
    fn null_effect_matches_healthy_statistics() {
        let (ds, truth) = generate_synthetic(&small_spec(0.0, 0.0)).unwrap();
        let (i1, o1) = mean_weights(&ds, &truth[&1], 1);
        assert!((i1 - o1).abs() < 0.05);
        let (i0, _) = mean_weights(&ds, &truth[&1], 0);
        assert!((i1 - i0).abs() < 0.05);
    }

    #[test]
    fn circuit_signals_are_correlated() {
        let (ds, truth) = generate_synthetic(&SyntheticSpec {
            f: 400,
            n_samples: 10,
            ..small_spec(0.5, 0.6)
        })
        .unwrap();
        let c = &truth[&1][0];
        let mut acc = 0.0;
        let mut count = 0;
        for net in ds.networks().iter().filter(|n| n.label() == 1) {
            let fc = pearson_fc(net.features()).unwrap();
            acc += fc.matrix.get(c[0], c[1]) + fc.matrix.get(c[2], c[3]);
            count += 2;
        }
        let mean = acc / count as f64;
        assert!((mean - 0.6).abs() < 0.1, "mean within-circuit correlation {mean}");
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = small_spec(0.5, 0.6);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 18, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap().0, generate_synthetic(&other).unwrap().0);
    }

    #[test]
    fn overlapping_circuits_rejected() {
        let mut spec = small_spec(0.5, 0.6);
        spec.planted_circuits = vec![vec![vec![0, 1, 2], vec![2, 3]]];
        assert!(matches!(generate_synthetic(&spec), Err(Error::Spec(_))));
        assert!(place_circuits(10, 3, 4, 1, 0).is_err());
    }

    #[test]
    fn placed_circuits_are_disjoint_and_sized() {
        let placed = place_circuits(20, 2, 5, 3, 4).unwrap();
        assert_eq!(placed.len(), 3);
        for class in placed {
            let all: BTreeSet<usize> = class.iter().flatten().copied().collect();
            assert_eq!(all.len(), 10);
            assert!(class.iter().all(|c| c.len() == 5));
        }
    }
}
