//! Brain networks, datasets on disk, and the planted-circuit generator.

mod fc;
mod io;
mod synthetic;

pub use fc::{pearson_fc, FunctionalConnectivity};
#[allow(unused_imports)]
pub(crate) use io::{read_matrix, write_json, write_matrix};
pub use io::{dataset_hash, load_dataset, load_ground_truth, save_dataset, save_ground_truth, Manifest, SubjectEntry, FORMAT_VERSION};
pub use synthetic::{generate_synthetic, place_circuits, GroundTruth, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One subject: node signals, structural weights and a class label.
///
/// The adjacency is symmetric, nonnegative and has a zero diagonal. These
/// are checked exactly at construction; no tolerance is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct BrainNetwork {
    pub id: String,
    features: Tensor,
    adjacency: Tensor,
    label: usize,
}

impl BrainNetwork {
    pub fn new(id: impl Into<String>, features: Tensor, adjacency: Tensor, label: usize) -> Result<Self> {
        let id = id.into();
        let fail = |detail: String| Error::Validation {
            subject: id.clone(),
            detail,
        };
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(fail(format!("adjacency is {}x{}, not square", n, adjacency.cols())));
        }
        if features.rows() != n {
            return Err(fail(format!("features have {} rows for {n} nodes", features.rows())));
        }
        for i in 0..n {
            if adjacency.get(i, i) != 0.0 {
                return Err(fail(format!("nonzero diagonal at node {i}")));
            }
            for j in 0..n {
                let a = adjacency.get(i, j);
                if a < 0.0 {
                    return Err(fail(format!("negative weight {a} at ({i}, {j})")));
                }
                if j > i && a != adjacency.get(j, i) {
                    return Err(fail(format!(
                        "asymmetric adjacency: A[{i}][{j}] = {a} but A[{j}][{i}] = {}",
                        adjacency.get(j, i)
                    )));
                }
            }
        }
        Ok(Self {
            id,
            features,
            adjacency,
            label,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Signal length per node.
    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn label(&self) -> usize {
        self.label
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Real,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    networks: Vec<BrainNetwork>,
    class_names: Vec<String>,
    provenance: Provenance,
}

impl Dataset {
    /// Checks that all networks share node count and signal length and
    /// that labels index into `class_names`.
    pub fn new(networks: Vec<BrainNetwork>, class_names: Vec<String>, provenance: Provenance) -> Result<Self> {
        if let Some(first) = networks.first() {
            let (n, f) = (first.n_nodes(), first.n_features());
            for net in &networks {
                if net.n_nodes() != n || net.n_features() != f {
                    return Err(Error::Validation {
                        subject: net.id.clone(),
                        detail: format!(
                            "shape {}x{} differs from dataset shape {n}x{f}",
                            net.n_nodes(),
                            net.n_features()
                        ),
                    });
                }
            }
        }
        for net in &networks {
            if net.label >= class_names.len() {
                return Err(Error::Validation {
                    subject: net.id.clone(),
                    detail: format!("label {} outside {} classes", net.label, class_names.len()),
                });
            }
        }
        Ok(Self {
            networks,
            class_names,
            provenance,
        })
    }

    pub fn networks(&self) -> &[BrainNetwork] {
        &self.networks
    }

    pub fn len(&self) -> usize {
        self.networks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.networks.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `(n_nodes, n_features)`, or `None` for an empty dataset.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.networks.first().map(|n| (n.n_nodes(), n.n_features()))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.networks.iter().map(BrainNetwork::label).collect()
    }
}

pub fn default_class_names(n_classes: usize) -> Vec<String> {
    match n_classes {
        2 => vec!["NC".into(), "AD".into()],
        4 => vec!["NC".into(), "EMCI".into(), "LMCI".into(), "AD".into()],
        n => (0..n).map(|c| format!("class{c}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adj(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn rejects_invalid_adjacency() {
        let x = Tensor::zeros(3, 2);
        let asym = adj(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 2.0], vec![0.0, 2.5, 0.0]]);
        let err = BrainNetwork::new("s7", x.clone(), asym, 0).unwrap_err();
        assert!(err.to_string().contains("s7"), "{err}");
        let neg = adj(&[vec![0.0, -1.0, 0.0], vec![-1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        assert!(BrainNetwork::new("s", x.clone(), neg, 0).is_err());
        let diag = adj(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        assert!(BrainNetwork::new("s", x, diag, 0).is_err());
    }

    #[test]
    fn dataset_checks_shapes_and_labels() {
        let a = BrainNetwork::new("a", Tensor::zeros(2, 3), Tensor::zeros(2, 2), 0).unwrap();
        let b = BrainNetwork::new("b", Tensor::zeros(2, 4), Tensor::zeros(2, 2), 1).unwrap();
        assert!(Dataset::new(vec![a.clone(), b], default_class_names(2), Provenance::Real).is_err());
        let c = BrainNetwork::new("c", Tensor::zeros(2, 3), Tensor::zeros(2, 2), 5).unwrap();
        assert!(Dataset::new(vec![a, c], default_class_names(2), Provenance::Real).is_err());
    }
}
