use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{circuit_recovery, classification_metrics, multiclass_auc, ClassificationMetrics};
use super::{Ablation, EpochLog, Model, Prediction, TrainConfig, TrainState};
use crate::data::{write_json, BrainNetwork, Dataset, GroundTruth};
use crate::error::{Error, Result};

/// Mixes `salt` into `base` (SplitMix64 finalizer), so folds, cells and
/// classes get unrelated streams from one configured seed.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stratified partition into `folds` test sets: each class is shuffled
/// with its own seeded stream and dealt round-robin. Every fold is sorted.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Invalid(format!("folds must be at least 2, got {folds}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); folds];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::Invalid(format!(
                "class {class} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, class as u64)));
        for (j, i) in members.into_iter().enumerate() {
            out[j % folds].push(i);
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub id: String,
    pub label: usize,
    pub prediction: Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: ClassificationMetrics,
    pub auc: Option<f64>,
    /// Mean circuit-recovery Jaccard over test subjects whose class has
    /// planted circuits; `None` without ground truth.
    pub recovery: Option<f64>,
    pub subjects: Vec<SubjectResult>,
}

pub fn evaluate(model: &Model, test: &[&BrainNetwork], n_classes: usize, truth: Option<&GroundTruth>) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let subjects = test
        .iter()
        .map(|net| {
            Ok(SubjectResult {
                id: net.id.clone(),
                label: net.label(),
                prediction: model.predict(net)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<usize> = subjects.iter().map(|s| s.prediction.label).collect();
    let labels: Vec<usize> = subjects.iter().map(|s| s.label).collect();
    let probs: Vec<Vec<f64>> = subjects.iter().map(|s| s.prediction.probs.clone()).collect();
    let recovery = truth.and_then(|truth| {
        let scores: Vec<f64> = subjects
            .iter()
            .filter_map(|s| {
                let planted = truth.get(&s.label).filter(|c| !c.is_empty())?;
                Some(circuit_recovery(&s.prediction.circuits, planted).jaccard)
            })
            .collect();
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    });
    Ok(Evaluation {
        metrics: classification_metrics(&preds, &labels, n_classes)?,
        auc: multiclass_auc(&probs, &labels, n_classes),
        recovery,
        subjects,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub evaluation: Evaluation,
    pub history: Vec<EpochLog>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub recovery: Option<f64>,
}

impl MeanMetrics {
    fn of(folds: &[FoldReport]) -> Self {
        let n = folds.len() as f64;
        let mean = |f: &dyn Fn(&FoldReport) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let opt_mean = |f: &dyn Fn(&FoldReport) -> Option<f64>| {
            let vals: Option<Vec<f64>> = folds.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / n)
        };
        Self {
            acc: mean(&|r| r.evaluation.metrics.acc),
            sen: mean(&|r| r.evaluation.metrics.sen),
            spe: mean(&|r| r.evaluation.metrics.spe),
            f1: mean(&|r| r.evaluation.metrics.f1),
            auc: opt_mean(&|r| r.evaluation.auc),
            recovery: opt_mean(&|r| r.evaluation.recovery),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub mean: MeanMetrics,
}

fn check_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<(usize, usize)> {
    config.validate()?;
    let dims = dataset.dims().ok_or_else(|| Error::Invalid("dataset is empty".into()))?;
    if dataset.n_classes() != config.n_classes {
        return Err(Error::Invalid(format!(
            "config has {} classes but the dataset has {}",
            config.n_classes,
            dataset.n_classes()
        )));
    }
    Ok(dims)
}

/// Five-fold (or `config.folds`-fold) cross-validation. Folds run in
/// parallel on the current rayon pool, each from its own derived seed;
/// `on_fold` sees every trained state, for example to write checkpoints.
pub fn run_cv<F>(dataset: &Dataset, truth: Option<&GroundTruth>, config: &TrainConfig, on_fold: F) -> Result<CvReport>
where
    F: Fn(usize, &TrainState) -> Result<()> + Sync,
{
    let (n_nodes, n_features) = check_dataset(dataset, config)?;
    let labels = dataset.labels();
    for class in 0..config.n_classes {
        let count = labels.iter().filter(|&&y| y == class).count();
        if count < config.folds {
            return Err(Error::Invalid(format!(
                "class {} has {count} samples, fewer than {} folds",
                dataset.class_names()[class],
                config.folds
            )));
        }
    }
    let folds = stratified_folds(&labels, config.folds, config.seed)?;
    let nets = dataset.networks();
    let reports = (0..config.folds)
        .into_par_iter()
        .map(|f| {
            let mut in_test = vec![false; nets.len()];
            for &i in &folds[f] {
                in_test[i] = true;
            }
            let train: Vec<&BrainNetwork> = (0..nets.len()).filter(|&i| !in_test[i]).map(|i| &nets[i]).collect();
            let test: Vec<&BrainNetwork> = folds[f].iter().map(|&i| &nets[i]).collect();
            let seed = derive_seed(config.seed, 1000 + f as u64);
            let mut state = TrainState::new(config.clone(), n_nodes, n_features, seed)?;
            state.train_to_end(&train)?;
            on_fold(f, &state)?;
            Ok(FoldReport {
                fold: f,
                seed,
                train_size: train.len(),
                evaluation: evaluate(&state.model, &test, config.n_classes, truth)?,
                history: state.history,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport {
        config: config.clone(),
        mean: MeanMetrics::of(&reports),
        folds: reports,
    })
}

#[derive(Serialize)]
struct FoldRow {
    fold: usize,
    acc: f64,
    sen: f64,
    spe: f64,
    f1: f64,
    auc: Option<f64>,
    recovery: Option<f64>,
}

#[derive(Serialize)]
struct CurveRow {
    fold: usize,
    epoch: usize,
    rmse: f64,
    l_anl: f64,
    l_cap: Option<f64>,
    l_m: f64,
    l_g: f64,
    l_d: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let fail = |e: csv::Error| Error::format(path, e);
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `metrics.json`, `folds.csv` and `rmse_curve.csv`.
pub fn write_cv_report(report: &CvReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("metrics.json"), report)?;
    write_csv(
        &dir.join("folds.csv"),
        report.folds.iter().map(|f| FoldRow {
            fold: f.fold,
            acc: f.evaluation.metrics.acc,
            sen: f.evaluation.metrics.sen,
            spe: f.evaluation.metrics.spe,
            f1: f.evaluation.metrics.f1,
            auc: f.evaluation.auc,
            recovery: f.evaluation.recovery,
        }),
    )?;
    write_csv(
        &dir.join("rmse_curve.csv"),
        report.folds.iter().flat_map(|f| {
            f.history.iter().map(move |h| CurveRow {
                fold: f.fold,
                epoch: h.epoch,
                rmse: h.rmse,
                l_anl: h.l_anl,
                l_cap: h.l_cap,
                l_m: h.l_m,
                l_g: h.l_g,
                l_d: h.l_d,
            })
        }),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: usize,
    pub k: usize,
    pub acc: f64,
    pub auc: Option<f64>,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub recovery: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub base: TrainConfig,
    pub rows: Vec<SweepRow>,
}

/// One cross-validation per `(t, k)` cell, `t` outer and `k` inner.
pub fn sweep_tk(
    dataset: &Dataset,
    truth: Option<&GroundTruth>,
    base: &TrainConfig,
    t_values: &[usize],
    k_values: &[usize],
) -> Result<SweepReport> {
    if t_values.is_empty() || k_values.is_empty() {
        return Err(Error::Invalid("sweep grids must be nonempty".into()));
    }
    let cells: Vec<(usize, usize)> = t_values.iter().flat_map(|&t| k_values.iter().map(move |&k| (t, k))).collect();
    let rows = cells
        .into_par_iter()
        .map(|(t, k)| {
            let cfg = TrainConfig { t, k, ..base.clone() };
            let m = run_cv(dataset, truth, &cfg, |_, _| Ok(()))?.mean;
            Ok(SweepRow {
                t,
                k,
                acc: m.acc,
                auc: m.auc,
                sen: m.sen,
                spe: m.spe,
                f1: m.f1,
                recovery: m.recovery,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        base: base.clone(),
        rows,
    })
}

/// `sweep.json` and `sweep.csv`.
pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("sweep.json"), report)?;
    write_csv(&dir.join("sweep.csv"), &report.rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub recovery: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<CvReport>,
}

impl AblationReport {
    pub fn row(&self, variant: Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// The `cap`, `mse` and `none` variants with identical seeds and splits.
pub fn ablation(dataset: &Dataset, truth: Option<&GroundTruth>, config: &TrainConfig) -> Result<AblationReport> {
    let reports = Ablation::ALL
        .into_par_iter()
        .map(|variant| {
            let cfg = TrainConfig {
                ablation: variant,
                ..config.clone()
            };
            run_cv(dataset, truth, &cfg, |_, _| Ok(()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(from_reports(reports))
}

/// Assembles a report from already computed variant runs, in `cap`,
/// `mse`, `none` order.
pub fn from_reports(reports: Vec<CvReport>) -> AblationReport {
    let rows = reports
        .iter()
        .map(|r| AblationRow {
            variant: r.config.ablation,
            acc: r.mean.acc,
            sen: r.mean.sen,
            spe: r.mean.spe,
            f1: r.mean.f1,
            auc: r.mean.auc,
            recovery: r.mean.recovery,
        })
        .collect();
    AblationReport { rows, reports }
}

/// `ablation.json` and `ablation.csv`.
pub fn write_ablation(report: &AblationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("ablation.json"), report)?;
    write_csv(&dir.join("ablation.csv"), &report.rows)
}
