use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pearson correlation between node signals.
#[derive(Clone, Debug)]
pub struct FunctionalConnectivity {
    pub matrix: Tensor,
    /// Nodes whose signal is constant; their correlations are reported as 0.
    pub constant_rows: Vec<usize>,
}

/// Row-wise Pearson correlation of an `n × f` signal matrix.
pub fn pearson_fc(x: &Tensor) -> Result<FunctionalConnectivity> {
    let (n, f) = x.shape();
    if f < 2 {
        return Err(Error::Invalid(format!("need at least 2 samples per row, got {f}")));
    }
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = x.row_slice(i);
            let mean = row.iter().sum::<f64>() / f as f64;
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let constant_rows: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();

    let mut m = Tensor::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let r = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            m.set(i, j, r);
            m.set(j, i, r);
        }
    }
    Ok(FunctionalConnectivity { matrix: m, constant_rows })
}
