//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use super::{Result, Tensor, TensorError};

/// Eigenvalues closer than this to a neighbour get no gradient.
pub const DEGENERATE_GAP: f64 = 1e-6;

const MAX_SWEEPS: usize = 100;
const OFF_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigen-decomposition `M = V diag(values) Vᵀ`.
#[derive(Clone, Debug)]
pub struct EigPair {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal; column `i` belongs to `values[i]`.
    pub vectors: Tensor,
}

impl EigPair {
    pub fn reconstruct(&self) -> Tensor {
        let n = self.values.len();
        Tensor::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k))
                .sum()
        })
    }
}

/// Eigen-decomposition of a symmetric matrix.
///
/// The input must be symmetric to within `1e-9` (scaled by its largest
/// entry when that exceeds one); it is averaged with its transpose before
/// rotating so rounding asymmetry does not leak into the result.
pub fn sym_eig(m: &Tensor) -> Result<EigPair> {
    let n = m.rows();
    if m.cols() != n {
        return Err(TensorError::Dimension {
            op: "sym_eig",
            lhs: m.shape(),
            rhs: (n, n),
        });
    }
    if !m.is_finite() {
        return Err(TensorError::Domain {
            op: "sym_eig",
            detail: "non-finite entry".into(),
        });
    }
    let scale = m.data().iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if !m.is_symmetric(SYMMETRY_TOL * scale) {
        return Err(TensorError::Domain {
            op: "sym_eig",
            detail: "matrix is not symmetric; symmetrize it first".into(),
        });
    }

    let mut a: Vec<f64> = Tensor::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i))).into_data();
    let mut v = Tensor::eye(n).into_data();
    let tol = OFF_TOL * m.frobenius_norm().max(1.0);

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    let mut off = off_norm(&a);
    while off >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(TensorError::NoConvergence { sweeps, off });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        off = off_norm(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Tensor::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(EigPair { values, vectors })
}
