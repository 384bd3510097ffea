//! The `decgan` command line. Every command writes `run_manifest.json`
//! into its output directory before doing any real work.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors, 3 for
//! numeric failures during training.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    dataset_hash, generate_synthetic, load_dataset, load_ground_truth, place_circuits, save_dataset, save_ground_truth,
    write_json, BrainNetwork, Dataset, GroundTruth, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::trainer::{
    ablation, circuit_recovery, evaluate, inspect_checkpoint, load_checkpoint, run_cv, save_checkpoint, sweep_tk,
    write_ablation, write_cv_report, write_sweep, Ablation, Evaluation, TrainConfig,
};

pub const SEED_ENV: &str = "DECGAN_SEED";
const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "decgan", version, about = "Neural-circuit detection on brain networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted circuits.
    GenData(GenDataArgs),
    /// Cross-validated training; writes per-fold checkpoints and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Export the circuits a checkpoint detects on every subject.
    Decouple(DecoupleArgs),
    /// Cross-validation over a grid of (t, k).
    Sweep(SweepArgs),
    /// Compare the cap, mse and none regularizers under shared seeds.
    Ablate(TrainArgs),
    /// Print a checkpoint summary as JSON.
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON synthetic spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// `COUNTxSIZE` (e.g. `2x5`) placed by seed, or explicit node lists
    /// such as `0,1,2:5,6,7`.
    #[arg(long)]
    pub circuits: Option<String>,
    /// Subjects per class.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Signal length per node.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub sc_boost: Option<f64>,
    #[arg(long)]
    pub bold_rho: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON training config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma_cap: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides the config file and the DECGAN_SEED variable.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Worker threads for folds, cells and variants.
    #[arg(long, default_value_t = 1)]
    pub parallel_folds: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    pub t_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [4, 5, 6, 7, 8])]
    pub k_values: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecoupleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Expected number of iterations; must match the checkpoint.
    #[arg(long)]
    pub t: Option<usize>,
    /// Expected circuit size bound; must match the checkpoint.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// Enough to rerun a command: what was asked, the resolved configuration
/// and the exact input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub dataset: Option<DatasetRef>,
    pub output: PathBuf,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub version: String,
}

impl RunManifest {
    fn write(command: &str, config: &impl Serialize, dataset: Option<&Path>, output: &Path) -> Result<()> {
        std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
        let dataset = dataset
            .map(|p| {
                Ok::<_, Error>(DatasetRef {
                    path: p.to_path_buf(),
                    sha256: dataset_hash(p)?,
                })
            })
            .transpose()?;
        let manifest = RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).map_err(|e| Error::Invalid(e.to_string()))?,
            dataset,
            output: output.to_path_buf(),
            started_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_json(&output.join(RUN_MANIFEST), &manifest)
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Decouple(a) => cmd_decouple(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::InspectCheckpoint(a) => cmd_inspect(&a),
    }
}

fn read_json_value(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn parse_circuits(text: &str, n_nodes: usize, seed: u64, n_diseased: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    let bad = || Error::Invalid(format!("--circuits {text:?}: expected COUNTxSIZE or lists like 0,1,2:5,6,7"));
    if let Some((count, size)) = text.split_once('x') {
        let count = count.trim().parse().map_err(|_| bad())?;
        let size = size.trim().parse().map_err(|_| bad())?;
        return place_circuits(n_nodes, count, size, n_diseased, seed);
    }
    let circuits = text
        .split(':')
        .map(|c| c.split(',').map(|v| v.trim().parse::<usize>().map_err(|_| bad())).collect())
        .collect::<Result<Vec<Vec<usize>>>>()?;
    // explicit lists apply to every diseased class
    Ok(vec![circuits; n_diseased])
}

pub fn resolve_spec(a: &GenDataArgs) -> Result<SyntheticSpec> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_value(read_json_value(p)?).map_err(|e| Error::format(p, e))?,
        None => SyntheticSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { spec.$field = v; })*};
    }
    set!(nodes => n_nodes, samples => n_samples, classes => n_classes, features => f, sc_boost => sc_boost,
         bold_rho => bold_rho, noise_sigma => noise_sigma, density => density, seed => seed);
    if let Some(text) = &a.circuits {
        spec.planted_circuits = parse_circuits(text, spec.n_nodes, spec.seed, spec.n_classes.saturating_sub(1))?;
    } else if a.spec.is_none() {
        // the default layout was placed for the default node count and seed
        spec.planted_circuits = place_circuits(spec.n_nodes, 2, 5, spec.n_classes.saturating_sub(1), spec.seed)?;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = resolve_spec(a)?;
    if a.out.exists() && !a.force {
        let non_empty = std::fs::read_dir(&a.out).map_err(|e| Error::io(&a.out, e))?.next().is_some();
        if non_empty {
            return Err(Error::Invalid(format!(
                "{} already exists and is not empty; pass --force to overwrite",
                a.out.display()
            )));
        }
    }
    RunManifest::write("gen-data", &spec, None, &a.out)?;
    let (dataset, truth) = generate_synthetic(&spec)?;
    save_dataset(&dataset, &a.out, true)?;
    save_ground_truth(&truth, &a.out)?;
    println!("wrote {} subjects to {}", dataset.len(), a.out.display());
    Ok(())
}

/// Defaults, then the config file, then DECGAN_SEED, then flags. The
/// class count falls back to the dataset's when neither file nor flag
/// sets it.
pub fn resolve_config(a: &ConfigArgs, dataset: Option<&Dataset>) -> Result<TrainConfig> {
    let file = a.config.as_deref().map(read_json_value).transpose()?;
    let mut cfg: TrainConfig = match &file {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::format(a.config.as_deref().unwrap(), e))?,
        None => TrainConfig::default(),
    };
    if let Ok(text) = std::env::var(SEED_ENV) {
        cfg.seed = text
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("{SEED_ENV}={text:?} is not an unsigned integer")))?;
    }
    let file_sets_classes = file.as_ref().is_some_and(|v| v.get("n_classes").is_some());
    if let (Some(ds), false) = (dataset, file_sets_classes) {
        cfg.n_classes = ds.n_classes();
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { cfg.$field = v; })*};
    }
    set!(t => t, k => k, gamma_cap => gamma_cap, epochs => epochs, seed => seed, classes => n_classes,
         folds => folds, batch_size => batch_size, ablation => ablation);
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical form of a path that may not exist yet.
fn resolve_path(path: &Path) -> Option<PathBuf> {
    let absolute = std::path::absolute(path).ok()?;
    let mut existing = absolute.as_path();
    let mut rest = Vec::new();
    loop {
        if let Ok(c) = existing.canonicalize() {
            return Some(rest.iter().rev().fold(c, |acc: PathBuf, part| acc.join(part)));
        }
        rest.push(existing.file_name()?.to_os_string());
        existing = existing.parent()?;
    }
}

fn check_output(data: &Path, out: &Path) -> Result<()> {
    let same = match (data.canonicalize(), resolve_path(out)) {
        (Ok(d), Some(o)) => o.starts_with(d),
        _ => false,
    };
    if same {
        return Err(Error::Invalid(format!(
            "output {} lies inside the dataset directory {}",
            out.display(),
            data.display()
        )));
    }
    Ok(())
}

fn load_inputs(data: &Path, out: &Path) -> Result<(Dataset, Option<GroundTruth>)> {
    if !data.join("manifest.json").exists() {
        return Err(Error::Invalid(format!("{} is not a dataset directory", data.display())));
    }
    check_output(data, out)?;
    let dataset = load_dataset(data)?;
    let truth = load_ground_truth(data)?;
    Ok((dataset, truth))
}

fn with_threads<T: Send>(n: usize, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(job)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (dataset, truth) = load_inputs(&a.data, &a.out)?;
    let cfg = resolve_config(&a.config, Some(&dataset))?;
    RunManifest::write("train", &cfg, Some(&a.data), &a.out)?;
    let out = &a.out;
    let report = with_threads(a.parallel_folds, || {
        run_cv(&dataset, truth.as_ref(), &cfg, |fold, state| {
            save_checkpoint(state, &out.join(format!("fold{fold}.ckpt")))
        })
    })?;
    write_cv_report(&report, &a.out)?;
    println!(
        "mean ACC {:.4}  SEN {:.4}  SPE {:.4}  F1 {:.4}",
        report.mean.acc, report.mean.sen, report.mean.spe, report.mean.f1
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let t = &a.train;
    let (dataset, truth) = load_inputs(&t.data, &t.out)?;
    let cfg = resolve_config(&t.config, Some(&dataset))?;
    #[derive(Serialize)]
    struct SweepManifest<'a> {
        base: &'a TrainConfig,
        t_values: &'a [usize],
        k_values: &'a [usize],
    }
    let grid = SweepManifest {
        base: &cfg,
        t_values: &a.t_values,
        k_values: &a.k_values,
    };
    RunManifest::write("sweep", &grid, Some(&t.data), &t.out)?;
    let report = with_threads(t.parallel_folds, || {
        sweep_tk(&dataset, truth.as_ref(), &cfg, &a.t_values, &a.k_values)
    })?;
    write_sweep(&report, &t.out)?;
    println!("wrote {} sweep rows to {}", report.rows.len(), t.out.display());
    Ok(())
}

fn cmd_ablate(a: &TrainArgs) -> Result<()> {
    let (dataset, truth) = load_inputs(&a.data, &a.out)?;
    let cfg = resolve_config(&a.config, Some(&dataset))?;
    RunManifest::write("ablate", &cfg, Some(&a.data), &a.out)?;
    let report = with_threads(a.parallel_folds, || ablation(&dataset, truth.as_ref(), &cfg))?;
    write_ablation(&report, &a.out)?;
    for row in &report.rows {
        println!("{:<5} ACC {:.4}", row.variant, row.acc);
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    checkpoint: &'a Path,
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (dataset, truth) = load_inputs(&a.data, &a.out)?;
    RunManifest::write("eval", &CheckpointRef { checkpoint: &a.checkpoint }, Some(&a.data), &a.out)?;
    let state = load_checkpoint(&a.checkpoint)?;
    let nets: Vec<&BrainNetwork> = dataset.networks().iter().collect();
    let evaluation: Evaluation = evaluate(&state.model, &nets, state.config.n_classes, truth.as_ref())?;
    write_json(&a.out.join("eval.json"), &evaluation)?;
    println!("ACC {:.4} on {} subjects", evaluation.metrics.acc, nets.len());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectCircuits {
    pub id: String,
    pub label: usize,
    pub circuits: Vec<Vec<usize>>,
    pub recovery: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCount {
    pub node: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitExport {
    pub t: usize,
    pub k: usize,
    pub subjects: Vec<SubjectCircuits>,
    /// How many detected circuits contain each node, most frequent first.
    pub node_frequency: Vec<NodeCount>,
    /// Mean recovery over subjects whose class has ground-truth circuits.
    pub recovery: Option<f64>,
}

/// Circuits for every subject plus the node-frequency ranking.
pub fn export_circuits(
    state: &crate::trainer::TrainState,
    nets: &[BrainNetwork],
    truth: Option<&GroundTruth>,
) -> Result<CircuitExport> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut subjects = Vec::with_capacity(nets.len());
    let mut scored = Vec::new();
    for net in nets {
        let circuits = state.model.predict(net)?.circuits;
        for &node in circuits.iter().flatten() {
            *counts.entry(node).or_default() += 1;
        }
        let recovery = truth
            .and_then(|t| t.get(&net.label()))
            .filter(|c| !c.is_empty())
            .map(|c| circuit_recovery(&circuits, c).jaccard);
        scored.extend(recovery);
        subjects.push(SubjectCircuits {
            id: net.id.clone(),
            label: net.label(),
            circuits,
            recovery,
        });
    }
    let mut node_frequency: Vec<NodeCount> = counts.into_iter().map(|(node, count)| NodeCount { node, count }).collect();
    node_frequency.sort_by(|x, y| y.count.cmp(&x.count).then(x.node.cmp(&y.node)));
    Ok(CircuitExport {
        t: state.config.t,
        k: state.config.k,
        subjects,
        node_frequency,
        recovery: (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64),
    })
}

fn cmd_decouple(a: &DecoupleArgs) -> Result<()> {
    let (dataset, truth) = load_inputs(&a.data, &a.out)?;
    RunManifest::write("decouple", &CheckpointRef { checkpoint: &a.checkpoint }, Some(&a.data), &a.out)?;
    let state = load_checkpoint(&a.checkpoint)?;
    let cfg = &state.config;
    let mismatch = |what: &str, ckpt: usize, given: usize| {
        Error::Invalid(format!("checkpoint has {what} = {ckpt} but {given} was requested"))
    };
    if let Some(t) = a.t.filter(|&t| t != cfg.t) {
        return Err(mismatch("t", cfg.t, t));
    }
    if let Some(k) = a.k.filter(|&k| k != cfg.k) {
        return Err(mismatch("k", cfg.k, k));
    }
    if let Some((n, f)) = dataset.dims() {
        if n != state.model.n_nodes() || f != state.model.n_features() {
            return Err(Error::Invalid(format!(
                "checkpoint expects {}x{} networks but the dataset has {n}x{f}",
                state.model.n_nodes(),
                state.model.n_features()
            )));
        }
    }
    let export = export_circuits(&state, dataset.networks(), truth.as_ref())?;
    write_json(&a.out.join("circuits.json"), &export)?;
    let top: Vec<String> = export.node_frequency.iter().take(10).map(|c| c.node.to_string()).collect();
    println!("most frequent nodes: {}", top.join(", "));
    if let Some(r) = export.recovery {
        println!("recovery Jaccard {r:.4}");
    }
    Ok(())
}

fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let summary = inspect_checkpoint(&a.checkpoint)?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}
