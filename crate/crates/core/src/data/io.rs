//! Dataset directories: `manifest.json` plus one CSV per matrix.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BrainNetwork, Dataset, GroundTruth, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const GROUND_TRUTH: &str = "ground_truth.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_nodes: usize,
    pub f: usize,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub provenance: Provenance,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub label: usize,
    pub adjacency_file: String,
    pub features_file: String,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let mut networks = Vec::with_capacity(manifest.subjects.len());
    for s in &manifest.subjects {
        let adj_path = dir.join(&s.adjacency_file);
        let x_path = dir.join(&s.features_file);
        let adjacency = read_matrix(&adj_path)?;
        let features = read_matrix(&x_path)?;
        if adjacency.shape() != (manifest.n_nodes, manifest.n_nodes) {
            return Err(Error::format(
                &adj_path,
                format!(
                    "adjacency is {}x{}, manifest says {n}x{n}",
                    adjacency.rows(),
                    adjacency.cols(),
                    n = manifest.n_nodes
                ),
            ));
        }
        if features.shape() != (manifest.n_nodes, manifest.f) {
            return Err(Error::format(
                &x_path,
                format!(
                    "features are {}x{}, manifest says {}x{}",
                    features.rows(),
                    features.cols(),
                    manifest.n_nodes,
                    manifest.f
                ),
            ));
        }
        networks.push(BrainNetwork::new(s.id.clone(), features, adjacency, s.label)?);
    }
    Dataset::new(networks, manifest.class_names, manifest.provenance)
}

/// Writes `dataset` under `dir`. An existing non-empty directory is only
/// written into when `force` is set.
pub fn save_dataset(dataset: &Dataset, dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Invalid(format!(
                "{} already exists and is not empty; pass force to overwrite",
                dir.display()
            )));
        }
    }
    let subjects_dir = dir.join("subjects");
    fs::create_dir_all(&subjects_dir).map_err(|e| Error::io(&subjects_dir, e))?;

    let (n_nodes, f) = dataset.dims().unwrap_or((0, 0));
    let mut subjects = Vec::with_capacity(dataset.len());
    for net in dataset.networks() {
        let adjacency_file = format!("subjects/{}_adjacency.csv", net.id);
        let features_file = format!("subjects/{}_features.csv", net.id);
        write_matrix(&dir.join(&adjacency_file), net.adjacency())?;
        write_matrix(&dir.join(&features_file), net.features())?;
        subjects.push(SubjectEntry {
            id: net.id.clone(),
            label: net.label(),
            adjacency_file,
            features_file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_nodes,
        f,
        class_names: dataset.class_names().to_vec(),
        provenance: dataset.provenance(),
        subjects,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn save_ground_truth(truth: &GroundTruth, dir: &Path) -> Result<()> {
    let map: BTreeMap<String, &Vec<Vec<usize>>> = truth.iter().map(|(k, v)| (k.to_string(), v)).collect();
    write_json(&dir.join(GROUND_TRUTH), &map)
}

/// `Ok(None)` when the directory has no `ground_truth.json`.
pub fn load_ground_truth(dir: &Path) -> Result<Option<GroundTruth>> {
    let path = dir.join(GROUND_TRUTH);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: BTreeMap<String, Vec<Vec<usize>>> = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    let mut out = GroundTruth::new();
    for (k, v) in raw {
        let class = k
            .parse::<usize>()
            .map_err(|_| Error::format(&path, format!("class key {k:?} is not an index")))?;
        out.insert(class, v);
    }
    Ok(Some(out))
}

/// SHA-256 over the manifest and every file it references, in manifest
/// order, as lowercase hex.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let manifest_path = dir.join(MANIFEST);
    let bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::format(&manifest_path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    for s in &manifest.subjects {
        for file in [&s.adjacency_file, &s.features_file] {
            let p = dir.join(file);
            hasher.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_matrix(path: &Path, m: &Tensor) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for i in 0..m.rows() {
        w.write_record(m.row_slice(i).iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_matrix(path: &Path) -> Result<Tensor> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::format(path, format!("line {}: {field:?} is not a number", line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| Error::format(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let path: PathBuf = path.into();
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e)
    }
}
