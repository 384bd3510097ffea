//! Joint optimization of the four modules, cross-validation, sweeps and
//! ablations.

mod checkpoint;
mod cv;
mod metrics;

pub use checkpoint::{inspect_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, CheckpointSummary};
pub use cv::{
    ablation, derive_seed, evaluate, from_reports, run_cv, stratified_folds, sweep_tk, write_ablation, write_cv_report, write_sweep,
    AblationReport, AblationRow, CvReport, Evaluation, FoldReport, MeanMetrics, SubjectResult, SweepReport, SweepRow,
};
pub use metrics::{
    auc, circuit_recovery, classification_metrics, compute_metrics, multiclass_auc, rmse, BinaryMetrics,
    ClassificationMetrics, Recovery,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{adv_loss_d, adv_loss_g, sample_latent, AdversarialConfig, Discriminator, Generator};
use crate::analytic::{analytic_loss, Analytic, AnalyticConfig};
use crate::data::BrainNetwork;
use crate::decoupler::{Decomposition, Decoupler, DecouplerConfig};
use crate::error::{Error, Result};
use crate::hypergraph::{membership_mse, sparse_capacity_loss};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Which term regularizes the decoupler alongside the analytic loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// The spatial-spectral sparse capacity loss.
    #[default]
    Cap,
    /// Mean squared difference of the two membership matrices.
    Mse,
    /// No regularizer (the loss weight is forced to 0).
    None,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Cap, Ablation::Mse, Ablation::None];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Cap => "cap",
            Ablation::Mse => "mse",
            Ablation::None => "none",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cap" => Ok(Ablation::Cap),
            "mse" => Ok(Ablation::Mse),
            "none" => Ok(Ablation::None),
            other => Err(Error::Invalid(format!("unknown ablation variant {other:?} (cap, mse, none)"))),
        }
    }
}

/// Widths and selector settings of the four modules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub selector_width: usize,
    pub gamma_dec: f64,
    pub tau: f64,
    pub analytic_hidden: usize,
    pub analytic_layers: usize,
    pub adversarial: AdversarialConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DecouplerConfig::default();
        let a = AnalyticConfig::default();
        Self {
            hidden: d.hidden,
            selector_width: d.selector_width,
            gamma_dec: d.gamma_dec,
            tau: d.tau,
            analytic_hidden: a.hidden,
            analytic_layers: a.layers,
            adversarial: AdversarialConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub t: usize,
    pub k: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the regularizer in the decoupler loss.
    pub gamma_cap: f64,
    pub lr_m: f64,
    pub lr_a: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub ablation: Ablation,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t: 2,
            k: 5,
            n_classes: 2,
            seed: 0,
            folds: 5,
            epochs: 50,
            batch_size: 16,
            gamma_cap: 0.1,
            lr_m: 1e-4,
            lr_a: 1e-3,
            lr_g: 1e-4,
            lr_d: 1e-4,
            ablation: Ablation::Cap,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        for (name, lr) in [("lr_m", self.lr_m), ("lr_a", self.lr_a), ("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.gamma_cap >= 0.0 && self.gamma_cap.is_finite()) {
            return bad(format!("gamma_cap must be nonnegative, got {}", self.gamma_cap));
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        self.decoupler_config().validate()?;
        self.model.adversarial.validate()
    }

    /// Loss weight actually applied: the `none` variant forces 0.
    pub fn effective_gamma(&self) -> f64 {
        match self.ablation {
            Ablation::None => 0.0,
            _ => self.gamma_cap,
        }
    }

    pub fn decoupler_config(&self) -> DecouplerConfig {
        DecouplerConfig {
            t: self.t,
            k: self.k,
            hidden: self.model.hidden,
            selector_width: self.model.selector_width,
            gamma_dec: self.model.gamma_dec,
            tau: self.model.tau,
        }
    }

    pub fn analytic_config(&self) -> AnalyticConfig {
        AnalyticConfig {
            hidden: self.model.analytic_hidden,
            layers: self.model.analytic_layers,
            n_classes: self.n_classes,
        }
    }
}

/// The four trainable modules.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub decoupler: Decoupler,
    pub analytic: Analytic,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

/// Inference result for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
    pub circuits: Vec<Vec<usize>>,
}

impl Model {
    pub fn new(config: &TrainConfig, n_nodes: usize, n_features: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let decoupler = Decoupler::new(config.decoupler_config(), n_features, rng)?;
        let analytic = Analytic::new(config.analytic_config(), decoupler.out_dim(), rng)?;
        let adv = config.model.adversarial.clone();
        let generator = Generator::new(adv.clone(), n_nodes, decoupler.out_dim(), n_features, rng)?;
        let discriminator = Discriminator::new(adv, n_features, rng)?;
        Ok(Self {
            decoupler,
            analytic,
            generator,
            discriminator,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.generator.n_nodes
    }

    pub fn n_features(&self) -> usize {
        self.decoupler.n_features
    }

    /// Checks a network against the model's node count and signal length.
    pub fn check_network(&self, net: &BrainNetwork) -> Result<()> {
        if net.n_nodes() != self.n_nodes() || net.n_features() != self.n_features() {
            return Err(Error::Validation {
                subject: net.id.clone(),
                detail: format!(
                    "network is {}x{} but the model expects {}x{}",
                    net.n_nodes(),
                    net.n_features(),
                    self.n_nodes(),
                    self.n_features()
                ),
            });
        }
        Ok(())
    }

    pub fn predict(&self, net: &BrainNetwork) -> Result<Prediction> {
        self.check_network(net)?;
        let tape = Tape::new();
        let pm = self.decoupler.params.bind(&tape, false);
        let pa = self.analytic.params.bind(&tape, false);
        let x = tape.constant(net.features().clone());
        let a = tape.constant(net.adjacency().clone());
        let trace = self.decoupler.forward(&pm, x, a)?;
        let incidence = tape.hstack(&trace.masks)?;
        let probs = self.analytic.forward(&pa, &trace.sparse_features, incidence)?;
        let probs = probs.value().data().to_vec();
        // first maximum wins
        let label = (0..probs.len()).fold(0, |best, c| if probs[c] > probs[best] { c } else { best });
        Ok(Prediction {
            probs,
            label,
            circuits: trace.output.decomposition.circuits,
        })
    }
}

/// Loss values of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_anl: f64,
    /// `None` when the effective loss weight is 0 and the term is skipped.
    pub l_cap: Option<f64>,
    pub l_m: f64,
    pub l_g: f64,
    pub l_d: f64,
    /// Mean RMSE between the stitched and the original adjacency.
    pub rmse: f64,
    pub gamma: f64,
}

/// Per-epoch means of the step losses; `rmse` averages over samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_anl: f64,
    pub l_cap: Option<f64>,
    pub l_m: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub rmse: f64,
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub opt_m: Adam,
    pub opt_a: Adam,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

struct Cached {
    parts: Decomposition,
    sparse_features: Vec<Tensor>,
    supplement_features: Tensor,
}

fn mean_of<'t>(values: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc = values[0];
    for &v in &values[1..] {
        acc = acc.add(v)?;
    }
    Ok(acc.scale(1.0 / values.len() as f64)?)
}

impl TrainState {
    /// Initializes all modules from `seed`; the same stream then drives
    /// shuffling and latent sampling.
    pub fn new(config: TrainConfig, n_nodes: usize, n_features: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(&config, n_nodes, n_features, &mut rng)?;
        let opt = |lr: f64, p| Adam::new(AdamConfig::with_lr(lr), p);
        Ok(Self {
            opt_m: opt(config.lr_m, &model.decoupler.params),
            opt_a: opt(config.lr_a, &model.analytic.params),
            opt_g: opt(config.lr_g, &model.generator.params),
            opt_d: opt(config.lr_d, &model.discriminator.params),
            config,
            model,
            rng,
            epoch: 0,
            history: Vec::new(),
        })
    }

    fn finite(&self, value: f64, loss: &'static str, batch: usize) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFiniteLoss {
                loss,
                epoch: self.epoch,
                batch,
            })
        }
    }

    /// One update of D, then G, then A and M on `batch`.
    pub fn train_step(&mut self, batch: &[&BrainNetwork], batch_index: usize) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        for net in batch {
            self.model.check_network(net)?;
        }
        let gamma = self.config.effective_gamma();
        let latent = self.config.model.adversarial.latent_dim;
        let zs: Vec<Tensor> = batch.iter().map(|_| sample_latent(&mut self.rng, latent)).collect();
        let m = &self.model;

        // Discriminator, against the current generator.
        let (l_d, rmse_mean, cached, d_grads) = {
            let tape = Tape::new();
            let pm = m.decoupler.params.bind(&tape, false);
            let pg = m.generator.params.bind(&tape, false);
            let pd = m.discriminator.params.bind(&tape, true);
            let mut real = Vec::with_capacity(batch.len());
            let mut fake = Vec::with_capacity(batch.len());
            let mut cached = Vec::with_capacity(batch.len());
            let mut rmse_sum = 0.0;
            for (net, z) in batch.iter().zip(&zs) {
                let x = tape.constant(net.features().clone());
                let a = tape.constant(net.adjacency().clone());
                let trace = m.decoupler.forward(&pm, x, a)?;
                let rec = m.generator.reconstruct(
                    &pg,
                    tape.constant(z.clone()),
                    &trace.output.decomposition,
                    &trace.sparse_features,
                    trace.supplement_features,
                )?;
                rmse_sum += rmse(&rec.adjacency.value(), net.adjacency())?;
                real.push(m.discriminator.discriminate(&pd, x, a)?);
                fake.push(m.discriminator.discriminate(&pd, rec.features, rec.adjacency)?);
                cached.push(Cached {
                    parts: trace.output.decomposition,
                    sparse_features: trace.output.sparse_features,
                    supplement_features: (*trace.supplement_features.value()).clone(),
                });
            }
            let l_d = adv_loss_d(&real, &fake)?;
            let grads = tape.backward(l_d)?;
            (l_d.item(), rmse_sum / batch.len() as f64, cached, pd.grads(&grads))
        };
        self.finite(l_d, "L_D", batch_index)?;
        self.opt_d.step(&mut self.model.discriminator.params, &d_grads)?;
        let m = &self.model;

        // Generator, against the updated discriminator.
        let (l_g, g_grads) = {
            let tape = Tape::new();
            let pg = m.generator.params.bind(&tape, true);
            let pd = m.discriminator.params.bind(&tape, false);
            let mut fake = Vec::with_capacity(batch.len());
            for (c, z) in cached.iter().zip(&zs) {
                let sparse: Vec<Var> = c.sparse_features.iter().map(|f| tape.constant(f.clone())).collect();
                let rec = m.generator.reconstruct(
                    &pg,
                    tape.constant(z.clone()),
                    &c.parts,
                    &sparse,
                    tape.constant(c.supplement_features.clone()),
                )?;
                fake.push(m.discriminator.discriminate(&pd, rec.features, rec.adjacency)?);
            }
            let l_g = adv_loss_g(&fake)?;
            let grads = tape.backward(l_g)?;
            (l_g.item(), pg.grads(&grads))
        };
        self.finite(l_g, "L_G", batch_index)?;
        self.opt_g.step(&mut self.model.generator.params, &g_grads)?;
        let m = &self.model;

        // Analytic module and decoupler; the reconstruction uses the updated
        // generator with the same latent draws.
        let (l_anl, l_cap, l_m, a_grads, m_grads) = {
            let tape = Tape::new();
            let pm = m.decoupler.params.bind(&tape, true);
            let pa = m.analytic.params.bind(&tape, true);
            let pg = m.generator.params.bind(&tape, false);
            let mut anl = Vec::with_capacity(batch.len());
            let mut cap = Vec::with_capacity(batch.len());
            for (net, z) in batch.iter().zip(&zs) {
                let x = tape.constant(net.features().clone());
                let a = tape.constant(net.adjacency().clone());
                let trace = m.decoupler.forward(&pm, x, a)?;
                let incidence = tape.hstack(&trace.masks)?;
                let probs = m.analytic.forward(&pa, &trace.sparse_features, incidence)?;
                anl.push(analytic_loss(probs, net.label())?);
                if gamma > 0.0 {
                    let rec = m.generator.reconstruct(
                        &pg,
                        tape.constant(z.clone()),
                        &trace.output.decomposition,
                        &trace.sparse_features,
                        trace.supplement_features,
                    )?;
                    let again = m.decoupler.forward(&pm, rec.features, rec.adjacency)?;
                    cap.push(match self.config.ablation {
                        Ablation::Mse => membership_mse(trace.membership, again.membership)?,
                        _ => sparse_capacity_loss(trace.membership, again.membership)?.total,
                    });
                }
            }
            let l_anl = mean_of(&anl)?;
            let (l_cap, l_m) = if cap.is_empty() {
                (None, l_anl)
            } else {
                let l_cap = mean_of(&cap)?;
                (Some(l_cap.item()), l_anl.add(l_cap.scale(gamma)?)?)
            };
            let grads = tape.backward(l_m)?;
            (l_anl.item(), l_cap, l_m.item(), pa.grads(&grads), pm.grads(&grads))
        };
        self.finite(l_anl, "L_anl", batch_index)?;
        if let Some(c) = l_cap {
            self.finite(c, "L_cap", batch_index)?;
        }
        self.finite(l_m, "L_M", batch_index)?;
        self.opt_a.step(&mut self.model.analytic.params, &a_grads)?;
        self.opt_m.step(&mut self.model.decoupler.params, &m_grads)?;

        Ok(StepLosses {
            l_anl,
            l_cap,
            l_m,
            l_g,
            l_d,
            rmse: rmse_mean,
            gamma,
        })
    }

    /// One shuffled pass over `train`; returns the step losses and appends
    /// the epoch means to the history.
    pub fn train_epoch(&mut self, train: &[&BrainNetwork]) -> Result<(EpochLog, Vec<StepLosses>)> {
        if train.is_empty() {
            return Err(Error::Invalid("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let batch_size = self.config.batch_size;
        let mut steps = Vec::new();
        let mut rmse_total = 0.0;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&BrainNetwork> = chunk.iter().map(|&i| train[i]).collect();
            let s = self.train_step(&batch, b)?;
            rmse_total += s.rmse * batch.len() as f64;
            steps.push(s);
        }
        let n = steps.len() as f64;
        let mean = |f: fn(&StepLosses) -> f64| steps.iter().map(f).sum::<f64>() / n;
        let l_cap = if steps.iter().all(|s| s.l_cap.is_some()) {
            Some(steps.iter().map(|s| s.l_cap.unwrap_or(0.0)).sum::<f64>() / n)
        } else {
            None
        };
        self.epoch += 1;
        let log = EpochLog {
            epoch: self.epoch,
            l_anl: mean(|s| s.l_anl),
            l_cap,
            l_m: mean(|s| s.l_m),
            l_g: mean(|s| s.l_g),
            l_d: mean(|s| s.l_d),
            rmse: rmse_total / train.len() as f64,
        };
        self.history.push(log);
        Ok((log, steps))
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn train_to_end(&mut self, train: &[&BrainNetwork]) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch(train)?;
        }
        Ok(())
    }
}
