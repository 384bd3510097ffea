//! Circuit collections as hypergraphs: incidence, the normalized
//! hypergraph Laplacian, spatial (Jaccard) and spectral similarity, and
//! the differentiable sparse capacity loss built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sym_eig, Tape, Tensor, Var};

/// Degrees at or below this are treated as zero: the vertex counts as
/// isolated, the hyperedge as empty.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Guards the soft Jaccard denominator.
pub const UNION_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub n_vertices: usize,
    pub hyperedges: Vec<Vec<usize>>,
}

/// Ascending eigenvalues of a hypergraph Laplacian.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
}

impl Hypergraph {
    /// Hyperedge `p` is circuit `p`; order is preserved.
    pub fn embed_circuits(circuits: &[Vec<usize>], n_vertices: usize) -> Result<Self> {
        for (p, c) in circuits.iter().enumerate() {
            if let Some(&v) = c.iter().find(|&&v| v >= n_vertices) {
                return Err(Error::Invalid(format!(
                    "hyperedge {p} has vertex {v}, outside {n_vertices} vertices"
                )));
            }
        }
        Ok(Self {
            n_vertices,
            hyperedges: circuits.to_vec(),
        })
    }

    pub fn n_edges(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn has_empty_edge(&self) -> bool {
        self.hyperedges.iter().any(Vec::is_empty)
    }

    /// `n_vertices × n_edges` binary matrix.
    pub fn incidence(&self) -> Tensor {
        let mut h = Tensor::zeros(self.n_vertices, self.hyperedges.len());
        for (e, edge) in self.hyperedges.iter().enumerate() {
            for &v in edge {
                h.set(v, e, 1.0);
            }
        }
        h
    }

    /// `d(v)`: number of hyperedges containing each vertex.
    pub fn vertex_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_vertices];
        for edge in &self.hyperedges {
            for &v in edge {
                d[v] += 1;
            }
        }
        d
    }

    /// `d(e)`: size of each hyperedge.
    pub fn edge_degrees(&self) -> Vec<usize> {
        self.hyperedges.iter().map(Vec::len).collect()
    }

    /// `I − D_V^{-1/2} H D_E^{-1} Hᵀ D_V^{-1/2}`.
    ///
    /// Isolated vertices get a zero `D_V^{-1/2}` entry, so their row and
    /// column are those of the identity. Empty hyperedges contribute
    /// nothing. Fails when no hyperedge has a vertex.
    pub fn laplacian(&self) -> Result<Tensor> {
        if self.hyperedges.iter().all(Vec::is_empty) {
            return Err(Error::Invalid("laplacian of a hypergraph without nonempty hyperedges".into()));
        }
        let tape = Tape::new();
        let h = tape.constant(self.incidence());
        Ok((*laplacian_var(h)?.value()).clone())
    }

    pub fn spectrum(&self) -> Result<SpectralReport> {
        let eigenvalues = sym_eig(&self.laplacian()?)?.values;
        Ok(SpectralReport { eigenvalues })
    }
}

/// Normalized Laplacian of a (possibly soft) `n × t` incidence matrix.
pub fn laplacian_var<'t>(h: Var<'t>) -> Result<Var<'t>> {
    let tape = h.tape();
    let (n, _) = h.shape();
    let dv_inv_sqrt = h.sum_rows()?.pow_or_zero(-0.5, DEGREE_FLOOR)?;
    let de_inv = h.sum_cols()?.pow_or_zero(-1.0, DEGREE_FLOOR)?;
    let hn = h.mul_rows(dv_inv_sqrt)?;
    let p = hn.mul_cols(de_inv)?.matmul(hn.t())?;
    // Exact symmetry keeps the eigensolver's symmetry check happy.
    Ok(tape.constant(Tensor::eye(n)).sub(p.symmetrize()?)?)
}

/// `(1/n) Σ_i (λ_i − λ'_i)²` over ascending Laplacian spectra.
pub fn spectral_similarity(h1: &Hypergraph, h2: &Hypergraph) -> Result<f64> {
    if h1.n_vertices != h2.n_vertices {
        return Err(Error::Invalid(format!(
            "vertex counts differ: {} vs {}",
            h1.n_vertices, h2.n_vertices
        )));
    }
    let (a, b) = (h1.spectrum()?, h2.spectrum()?);
    Ok(spectral_distance(&a.eigenvalues, &b.eigenvalues))
}

fn spectral_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Mean positional Jaccard index `|N_p ∩ N'_p| / |N_p ∪ N'_p|`; two empty
/// circuits count as identical.
pub fn spatial_similarity(c1: &[Vec<usize>], c2: &[Vec<usize>]) -> Result<f64> {
    if c1.len() != c2.len() {
        return Err(Error::Invalid(format!(
            "collections have {} and {} circuits",
            c1.len(),
            c2.len()
        )));
    }
    if c1.is_empty() {
        return Ok(1.0);
    }
    let total: f64 = c1.iter().zip(c2).map(|(a, b)| jaccard(a, b)).sum();
    Ok(total / c1.len() as f64)
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|v| b.contains(v)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Hard values logged alongside the soft loss.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardCapacityReport {
    pub spatial_similarity: f64,
    pub spectral_similarity: f64,
}

/// Hard spatial and spectral similarity of two circuit collections. A
/// collection whose circuits are all empty has every vertex isolated, so
/// its spectrum is all ones.
pub fn hard_capacity_report(c1: &[Vec<usize>], c2: &[Vec<usize>], n_vertices: usize) -> Result<HardCapacityReport> {
    let spatial = spatial_similarity(c1, c2)?;
    let spectrum = |c: &[Vec<usize>]| -> Result<Vec<f64>> {
        let h = Hypergraph::embed_circuits(c, n_vertices)?;
        if h.hyperedges.iter().all(Vec::is_empty) {
            Ok(vec![1.0; n_vertices])
        } else {
            Ok(h.spectrum()?.eigenvalues)
        }
    };
    let spectral = spectral_distance(&spectrum(c1)?, &spectrum(c2)?);
    Ok(HardCapacityReport {
        spatial_similarity: spatial,
        spectral_similarity: spectral,
    })
}

/// The two terms of the soft sparse capacity loss and their sum.
pub struct CapacityLoss<'t> {
    /// `1 − mean_p SoftJaccard_p`.
    pub spatial: Var<'t>,
    /// Spectral distance between the soft-incidence Laplacians.
    pub spectral: Var<'t>,
    pub total: Var<'t>,
}

/// Differentiable distance between two `t × n` soft membership matrices.
///
/// `SoftJaccard_p = Σ_i min(m_pi, m'_pi) / max(Σ_i max(m_pi, m'_pi), ε)`,
/// or 1 when that union is below `ε`;
/// the spectral term applies the hard formula to Laplacians built from the
/// soft incidence `H[i][p] = m_pi`. Both terms vanish when the memberships
/// agree.
pub fn sparse_capacity_loss<'t>(soft1: Var<'t>, soft2: Var<'t>) -> Result<CapacityLoss<'t>> {
    let tape = soft1.tape();
    if soft1.shape() != soft2.shape() {
        return Err(Error::Invalid(format!(
            "membership shapes differ: {:?} vs {:?}",
            soft1.shape(),
            soft2.shape()
        )));
    }
    let (t, n) = soft1.shape();
    if t == 0 {
        return Err(Error::Invalid("empty membership matrices".into()));
    }
    let inter = soft1.minimum(soft2)?.sum_rows()?;
    let union = soft1.maximum(soft2)?.sum_rows()?;
    // rows whose union is (numerically) empty agree trivially, as in the
    // hard `jaccard`
    let empty = union.value().map(|u| if u < UNION_EPS { 1.0 } else { 0.0 });
    let union = union.maximum(tape.constant(Tensor::filled(t, 1, UNION_EPS)))?;
    let ratio = inter
        .div(union)?
        .mul(tape.constant(empty.map(|e| 1.0 - e)))?
        .add(tape.constant(empty))?;
    let soft_jaccard = ratio.mean()?;
    let spatial = soft_jaccard.neg().add_scalar(1.0)?;

    let l1 = laplacian_var(soft1.t())?.sym_eigvals()?;
    let l2 = laplacian_var(soft2.t())?.sym_eigvals()?;
    let spectral = l1.sub(l2)?.square()?.sum()?.scale(1.0 / n as f64)?;
    let total = spatial.add(spectral)?;
    Ok(CapacityLoss { spatial, spectral, total })
}

/// Mean squared difference of two membership matrices.
pub fn membership_mse<'t>(soft1: Var<'t>, soft2: Var<'t>) -> Result<Var<'t>> {
    Ok(soft1.sub(soft2)?.square()?.mean()?)
}
