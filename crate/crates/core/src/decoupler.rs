//! Iterative circuit extraction: a GCN stack on the residual graph followed
//! by top-k node selection, repeated `t` times.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_json, write_matrix, BrainNetwork};
use crate::error::{Error, Result};
use crate::nn::{gcn_layer, normalized_adjacency, Activation, BoundParams, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecouplerConfig {
    /// Number of circuits extracted.
    pub t: usize,
    /// Maximum circuit size.
    pub k: usize,
    pub hidden: usize,
    pub selector_width: usize,
    /// Selection threshold coefficient: a node qualifies when its score is
    /// at least `gamma_dec * ‖d‖₂`.
    pub gamma_dec: f64,
    /// Temperature of the soft membership.
    pub tau: f64,
}

impl Default for DecouplerConfig {
    fn default() -> Self {
        Self {
            t: 2,
            k: 5,
            hidden: 16,
            selector_width: 16,
            gamma_dec: 0.05,
            tau: 0.1,
        }
    }
}

impl DecouplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.t == 0 {
            return bad("t must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.hidden == 0 || self.selector_width == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !self.gamma_dec.is_finite() {
            return bad("gamma_dec must be finite");
        }
        Ok(())
    }
}

/// Up to `k` non-excluded nodes whose score reaches `threshold`, best first
/// with ties going to the lower index, returned in ascending order.
pub fn top_k_above(scores: &[f64], threshold: f64, k: usize, excluded: &[bool]) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|&i| !excluded[i] && scores[i] >= threshold)
        .collect();
    cand.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    cand.truncate(k);
    cand.sort_unstable();
    cand
}

/// `n × 1` indicator of `nodes`.
pub fn indicator(n: usize, nodes: &[usize]) -> Tensor {
    let mut v = Tensor::zeros(n, 1);
    for &i in nodes {
        v.set(i, 0, 1.0);
    }
    v
}

/// 1 on every `N_p × N_p` block and on `S × S`, 0 on cross-block pairs.
pub fn block_mask(n: usize, circuits: &[Vec<usize>], supplement: &[usize]) -> Tensor {
    let mut m = Tensor::zeros(n, n);
    for block in circuits.iter().map(Vec::as_slice).chain(std::iter::once(supplement)) {
        for &i in block {
            for &j in block {
                m.set(i, j, 1.0);
            }
        }
    }
    m
}

/// `A` restricted to `nodes × nodes`, zero elsewhere.
pub fn restrict(a: &Tensor, nodes: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), a.cols());
    for &i in nodes {
        for &j in nodes {
            out.set(i, j, a.get(i, j));
        }
    }
    out
}

/// Hard block structure induced by a set of disjoint circuits.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub circuits: Vec<Vec<usize>>,
    pub supplement: Vec<usize>,
    pub sparse_adjacencies: Vec<Tensor>,
    pub supplement_adjacency: Tensor,
    /// `A` minus every sparse adjacency.
    pub residual_adjacency: Tensor,
}

pub fn decompose(a: &Tensor, circuits: &[Vec<usize>]) -> Result<Decomposition> {
    let n = a.rows();
    let mut used = vec![false; n];
    for c in circuits {
        for &i in c {
            if i >= n {
                return Err(Error::Invalid(format!("node {i} out of range for {n} nodes")));
            }
            if used[i] {
                return Err(Error::Invalid(format!("node {i} appears in two circuits")));
            }
            used[i] = true;
        }
    }
    let supplement: Vec<usize> = (0..n).filter(|&i| !used[i]).collect();
    let sparse_adjacencies: Vec<Tensor> = circuits.iter().map(|c| restrict(a, c)).collect();
    let mut residual = a.clone();
    for s in &sparse_adjacencies {
        residual = residual.zip_map(s, |x, y| x - y)?;
    }
    Ok(Decomposition {
        circuits: circuits.to_vec(),
        supplement_adjacency: restrict(a, &supplement),
        supplement,
        sparse_adjacencies,
        residual_adjacency: residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecouplingOutput {
    pub decomposition: Decomposition,
    /// Node features after each GCN stack with rows outside the circuit
    /// zeroed.
    pub sparse_features: Vec<Tensor>,
    /// `t × n` soft memberships in `[0, 1]`.
    pub soft_membership: Tensor,
    /// `t × n` raw selector scores.
    pub scores: Tensor,
    pub thresholds: Vec<f64>,
}

#[derive(Serialize)]
struct Export<'a> {
    circuits: &'a [Vec<usize>],
    supplement: &'a [usize],
    scores: Vec<Vec<f64>>,
}

impl DecouplingOutput {
    pub fn circuits(&self) -> &[Vec<usize>] {
        &self.decomposition.circuits
    }

    pub fn supplement(&self) -> &[usize] {
        &self.decomposition.supplement
    }

    /// True when no iteration selected any node.
    pub fn all_empty(&self) -> bool {
        self.circuits().iter().all(Vec::is_empty)
    }

    /// Writes `decoupling.json` and one `sparse_adjacency_<p>.csv` per
    /// circuit (1-based) into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let scores = (0..self.scores.rows()).map(|p| self.scores.row_slice(p).to_vec()).collect();
        write_json(
            &dir.join("decoupling.json"),
            &Export {
                circuits: self.circuits(),
                supplement: self.supplement(),
                scores,
            },
        )?;
        for (p, s) in self.decomposition.sparse_adjacencies.iter().enumerate() {
            write_matrix(&dir.join(format!("sparse_adjacency_{}.csv", p + 1)), s)?;
        }
        Ok(())
    }
}

/// A decoupling pass recorded on a tape.
pub struct DecoupleTrace<'t> {
    pub output: DecouplingOutput,
    /// `t × n` soft memberships.
    pub membership: Var<'t>,
    /// Straight-through masks, `n × 1` each: forward value is the hard
    /// indicator, gradient is that of the soft membership.
    pub masks: Vec<Var<'t>>,
    /// Per-circuit features, masked by [`DecoupleTrace::masks`].
    pub sparse_features: Vec<Var<'t>>,
    /// Features of the last stack masked to the supplement set.
    pub supplement_features: Var<'t>,
}

/// The decoupling module M.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoupler {
    pub config: DecouplerConfig,
    pub n_features: usize,
    pub params: ParamSet,
}

fn name(p: usize, part: &str) -> String {
    format!("it{p}.{part}")
}

impl Decoupler {
    pub fn new<R: Rng>(config: DecouplerConfig, n_features: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if n_features == 0 {
            return Err(Error::Invalid("feature width must be positive".into()));
        }
        let (h, s) = (config.hidden, config.selector_width);
        let mut params = ParamSet::new();
        for p in 0..config.t {
            params.insert_uniform(name(p, "gcn1"), n_features, h, rng);
            params.insert_uniform(name(p, "gcn2"), h, h, rng);
            params.insert_uniform(name(p, "w_sel"), h, s, rng);
            params.insert_uniform(name(p, "b_sel"), 1, s, rng);
            params.insert_uniform(name(p, "d"), s, 1, rng);
        }
        Ok(Self {
            config,
            n_features,
            params,
        })
    }

    /// Feature width of the sparse and supplement feature matrices.
    pub fn out_dim(&self) -> usize {
        self.config.hidden
    }

    /// Runs all `t` iterations on `(x, a)`. `a` may itself be a tape
    /// expression (a reconstructed network); selections use its value.
    pub fn forward<'t>(&self, params: &BoundParams<'t>, x: Var<'t>, a: Var<'t>) -> Result<DecoupleTrace<'t>> {
        let tape = x.tape();
        let cfg = &self.config;
        let (n, m) = a.shape();
        if n != m || x.shape() != (n, self.n_features) {
            return Err(Error::Invalid(format!(
                "features {:?} and adjacency {:?} do not match a {}-wide decoupler",
                x.shape(),
                a.shape(),
                self.n_features
            )));
        }
        let a_value = a.value();
        let mut excluded = vec![false; n];
        let mut circuits = Vec::with_capacity(cfg.t);
        let mut masks = Vec::with_capacity(cfg.t);
        let mut softs = Vec::with_capacity(cfg.t);
        let mut sparse_features = Vec::with_capacity(cfg.t);
        let mut scores = Tensor::zeros(cfg.t, n);
        let mut thresholds = Vec::with_capacity(cfg.t);
        let mut keep_edges = Tensor::ones(n, n);
        let mut residual = a;
        let mut last = None;
        for p in 0..cfg.t {
            let norm = normalized_adjacency(residual)?;
            let h1 = gcn_layer(norm, x, params.get(&name(p, "gcn1")), Activation::Relu)?;
            let feats = gcn_layer(norm, h1, params.get(&name(p, "gcn2")), Activation::Relu)?;
            let d = params.get(&name(p, "d"));
            let score = feats
                .matmul(params.get(&name(p, "w_sel")))?
                .add_row(params.get(&name(p, "b_sel")))?
                .sigmoid()
                .matmul(d)?;
            let thr = d.square()?.sum()?.sqrt()?.scale(cfg.gamma_dec)?;
            let keep = Tensor::from_fn(n, 1, |i, _| if excluded[i] { 0.0 } else { 1.0 });
            let soft = score
                .sub(thr.broadcast_to(n, 1)?)?
                .scale(1.0 / cfg.tau)?
                .sigmoid()
                .mul(tape.constant(keep))?;

            let score_value = score.value();
            for i in 0..n {
                scores.set(p, i, score_value.get(i, 0));
            }
            thresholds.push(thr.item());
            let circuit = top_k_above(score_value.data(), thr.item(), cfg.k, &excluded);

            let mask = tape.constant(indicator(n, &circuit)).add(soft.sub(soft.detach())?)?;
            sparse_features.push(feats.mul_rows(mask)?);
            masks.push(mask);
            softs.push(soft.t());
            for &i in &circuit {
                excluded[i] = true;
                for &j in &circuit {
                    keep_edges.set(i, j, 0.0);
                }
            }
            circuits.push(circuit);
            residual = a.mul(tape.constant(keep_edges.clone()))?;
            last = Some(feats);
        }
        let mut covered = masks[0];
        for &mask in &masks[1..] {
            covered = covered.add(mask)?;
        }
        let supplement_mask = tape.constant(Tensor::ones(n, 1)).sub(covered)?;
        let supplement_features = last.expect("t >= 1").mul_rows(supplement_mask)?;
        let membership = tape.vstack(&softs)?;

        let output = DecouplingOutput {
            decomposition: decompose(&a_value, &circuits)?,
            sparse_features: sparse_features.iter().map(|v| (*v.value()).clone()).collect(),
            soft_membership: (*membership.value()).clone(),
            scores,
            thresholds,
        };
        Ok(DecoupleTrace {
            output,
            membership,
            masks,
            sparse_features,
            supplement_features,
        })
    }

    /// Inference on a single network with frozen parameters.
    pub fn decouple(&self, network: &BrainNetwork) -> Result<DecouplingOutput> {
        let tape = Tape::new();
        let params = self.params.bind(&tape, false);
        let x = tape.constant(network.features().clone());
        let a = tape.constant(network.adjacency().clone());
        Ok(self.forward(&params, x, a)?.output)
    }
}
