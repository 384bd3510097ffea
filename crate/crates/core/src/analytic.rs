//! The analytic module A: hyperedge-neuron message passing over the circuit
//! hypergraph and a mean-pool softmax readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, BoundParams, ParamSet};
use crate::tensor::{Tensor, TensorError, Var};

/// Added inside the log of the analytic loss.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticConfig {
    pub hidden: usize,
    pub layers: usize,
    pub n_classes: usize,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            layers: 2,
            n_classes: 2,
        }
    }
}

/// `X_H = (1/t) Σ_p X_p`.
pub fn hypergraph_feature_init<'t>(features: &[Var<'t>]) -> Result<Var<'t>> {
    let (first, rest) = features
        .split_first()
        .ok_or_else(|| Error::Invalid("no sparse feature matrices".into()))?;
    let mut acc = *first;
    for &f in rest {
        acc = acc.add(f)?;
    }
    Ok(acc.scale(1.0 / features.len() as f64)?)
}

/// One hyperedge-neuron layer:
/// `X_E = σ(Hᵀ X_H W_E + b_E)`, then `X_H' = σ(H X_E W_V + b_V)`.
pub fn hen_layer<'t>(
    x_h: Var<'t>,
    h: Var<'t>,
    w_e: Var<'t>,
    b_e: Var<'t>,
    w_v: Var<'t>,
    b_v: Var<'t>,
    act: Activation,
) -> std::result::Result<Var<'t>, TensorError> {
    let x_e = act.apply(h.t().matmul(x_h)?.matmul(w_e)?.add_row(b_e)?);
    Ok(act.apply(h.matmul(x_e)?.matmul(w_v)?.add_row(b_v)?))
}

/// Mean-pools vertex rows, applies `x W + b` and a softmax: `1 × classes`.
pub fn classify<'t>(x_h: Var<'t>, w: Var<'t>, b: Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
    Ok(x_h.mean_rows()?.matmul(w)?.add(b)?.softmax_rows())
}

/// `−log(p[label] + 1e-12)` for a `1 × classes` probability row.
pub fn analytic_loss<'t>(probs: Var<'t>, label: usize) -> Result<Var<'t>> {
    let c = probs.shape().1;
    if label >= c {
        return Err(Error::Invalid(format!("label {label} outside {c} classes")));
    }
    let onehot = probs.tape().constant(Tensor::from_fn(1, c, |_, j| if j == label { 1.0 } else { 0.0 }));
    Ok(probs.mul(onehot)?.sum()?.add_scalar(LOG_CLAMP)?.log()?.neg())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analytic {
    pub config: AnalyticConfig,
    pub in_dim: usize,
    pub params: ParamSet,
}

impl Analytic {
    pub fn new<R: Rng>(config: AnalyticConfig, in_dim: usize, rng: &mut R) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || in_dim == 0 {
            return Err(Error::Invalid("analytic layers and widths must be positive".into()));
        }
        if config.n_classes < 2 {
            return Err(Error::Invalid("at least two classes are needed".into()));
        }
        let mut params = ParamSet::new();
        let h = config.hidden;
        for l in 0..config.layers {
            let input = if l == 0 { in_dim } else { h };
            params.insert_uniform(format!("hen{l}.w_e"), input, h, rng);
            params.insert_uniform(format!("hen{l}.b_e"), 1, h, rng);
            params.insert_uniform(format!("hen{l}.w_v"), h, h, rng);
            params.insert_uniform(format!("hen{l}.b_v"), 1, h, rng);
        }
        params.insert_uniform("readout.w", h, config.n_classes, rng);
        params.insert_uniform("readout.b", 1, config.n_classes, rng);
        Ok(Self { config, in_dim, params })
    }

    /// Class probabilities from the sparse feature matrices and the
    /// `n × t` incidence of the circuit hypergraph.
    pub fn forward<'t>(&self, params: &BoundParams<'t>, sparse_features: &[Var<'t>], incidence: Var<'t>) -> Result<Var<'t>> {
        let mut x = hypergraph_feature_init(sparse_features)?;
        for l in 0..self.config.layers {
            x = hen_layer(
                x,
                incidence,
                params.get(&format!("hen{l}.w_e")),
                params.get(&format!("hen{l}.b_e")),
                params.get(&format!("hen{l}.w_v")),
                params.get(&format!("hen{l}.b_v")),
                Activation::Relu,
            )?;
        }
        Ok(classify(x, params.get("readout.w"), params.get("readout.b"))?)
    }
}
