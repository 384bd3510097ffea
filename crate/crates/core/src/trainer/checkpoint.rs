//! Checkpoints: a tensor container (`.ckpt`) with every parameter and Adam
//! moment, plus a JSON sidecar with the config, epoch, history and RNG
//! position.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpochLog, TrainConfig, TrainState};
use crate::data::write_json;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::optim::Adam;
use crate::tensor::{read_container_file, write_container_file, NamedTensors, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    /// Decimal `u128`.
    word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub n_nodes: usize,
    pub n_features: usize,
    pub history: Vec<EpochLog>,
    rng: RngState,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

const MODULES: [&str; 4] = ["M", "A", "G", "D"];

fn modules(state: &TrainState) -> [(&ParamSet, &Adam); 4] {
    let m = &state.model;
    [
        (&m.decoupler.params, &state.opt_m),
        (&m.analytic.params, &state.opt_a),
        (&m.generator.params, &state.opt_g),
        (&m.discriminator.params, &state.opt_d),
    ]
}

/// Writes `path` (tensor container) and `path` with a `.json` extension.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors: NamedTensors = Vec::new();
    for (tag, (params, opt)) in MODULES.iter().zip(modules(state)) {
        for (name, t) in params.iter() {
            tensors.push((format!("{tag}.{name}"), t.clone()));
        }
        tensors.extend(opt.state(params, &format!("opt.{tag}.")));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_container_file(path, &tensors).map_err(|e| Error::format(path, e))?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        config: state.config.clone(),
        epoch: state.epoch,
        n_nodes: state.model.n_nodes(),
        n_features: state.model.n_features(),
        history: state.history.clone(),
        rng: RngState {
            seed: state.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
    };
    write_json(&sidecar(path), &meta)
}

fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::format(&side, e))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(&side, format!("unsupported checkpoint version {}", meta.format_version)));
    }
    Ok(meta)
}

fn parse_rng(state: &RngState, path: &Path) -> Result<ChaCha8Rng> {
    let bad = |what: &str| Error::format(path, format!("malformed RNG {what}"));
    if state.seed.len() != 64 {
        return Err(bad("seed"));
    }
    let mut seed = [0u8; 32];
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&state.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos.parse::<u128>().map_err(|_| bad("position"))?);
    Ok(rng)
}

/// Restores a state that continues training exactly where it was saved.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let meta = read_meta(path)?;
    let tensors = read_container_file(path).map_err(|e| Error::format(path, e))?;
    let mut state = TrainState::new(meta.config.clone(), meta.n_nodes, meta.n_features, 0)?;
    let lookup = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
    let m = &mut state.model;
    let targets: [(&mut ParamSet, &mut Adam); 4] = [
        (&mut m.decoupler.params, &mut state.opt_m),
        (&mut m.analytic.params, &mut state.opt_a),
        (&mut m.generator.params, &mut state.opt_g),
        (&mut m.discriminator.params, &mut state.opt_d),
    ];
    for (tag, (params, opt)) in MODULES.iter().zip(targets) {
        let prefix = format!("{tag}.");
        let values: Vec<(String, Tensor)> = tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&prefix).map(|s| (s.to_string(), t.clone())))
            .collect();
        params.load(&values).map_err(|e| Error::format(path, format!("module {tag}: {e}")))?;
        opt.restore(params, &format!("opt.{tag}."), &lookup)
            .map_err(|e| Error::format(path, e))?;
    }
    state.rng = parse_rng(&meta.rng, path)?;
    state.epoch = meta.epoch;
    state.history = meta.history;
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSummary {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub config: TrainConfig,
    pub epoch: usize,
    pub n_nodes: usize,
    pub n_features: usize,
    /// Trainable scalars per module, in M, A, G, D order.
    pub parameter_counts: Vec<(String, usize)>,
    pub tensors: Vec<TensorSummary>,
    pub last_epoch: Option<EpochLog>,
}

pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointSummary> {
    let state = load_checkpoint(path)?;
    let tensors = read_container_file(path).map_err(|e| Error::format(path, e))?;
    Ok(CheckpointSummary {
        parameter_counts: MODULES
            .iter()
            .zip(modules(&state))
            .map(|(tag, (p, _))| (tag.to_string(), p.n_scalars()))
            .collect(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorSummary {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        last_epoch: state.history.last().copied(),
        config: state.config,
        epoch: state.epoch,
        n_nodes: state.model.n_nodes(),
        n_features: state.model.n_features(),
    })
}
