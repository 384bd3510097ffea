//! Named parameter sets, their binding onto a tape, and graph convolution.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var};

/// Ordered, uniquely named trainable tensors of one module.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
    }

    /// `uniform(-a, a)` with `a = 1/sqrt(rows)`.
    pub fn insert_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) {
        let a = 1.0 / (rows.max(1) as f64).sqrt();
        self.insert(name, Tensor::from_fn(rows, cols, |_, _| rng.random_range(-a..a)));
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor on `tape`, as gradient leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundParams<'t> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        BoundParams {
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
            vars,
        }
    }

    /// Wraps caller-supplied vars (one per parameter, in order), for
    /// example leaves created by a gradient check.
    pub fn bind_vars<'t>(&self, vars: &[Var<'t>]) -> Result<BoundParams<'t>> {
        if vars.len() != self.entries.len() {
            return Err(Error::Invalid(format!(
                "expected {} vars, got {}",
                self.entries.len(),
                vars.len()
            )));
        }
        for ((name, t), v) in self.entries.iter().zip(vars) {
            if t.shape() != v.shape() {
                return Err(Error::Invalid(format!("var for {name} has shape {:?}", v.shape())));
            }
        }
        Ok(BoundParams {
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
            vars: vars.to_vec(),
        })
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces values by name, checking that the names and shapes match
    /// exactly.
    pub fn load(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Invalid(format!(
                "expected {} tensors, got {}",
                self.entries.len(),
                values.len()
            )));
        }
        for (name, value) in values {
            let slot = self
                .get_mut(name)
                .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))?;
            if slot.shape() != value.shape() {
                return Err(Error::Invalid(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value.clone();
        }
        Ok(())
    }
}

/// A [`ParamSet`] recorded on a tape.
pub struct BoundParams<'t> {
    names: Vec<String>,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    /// Panics on an unknown name: names are fixed at module construction.
    pub fn get(&self, name: &str) -> Var<'t> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        self.vars[i]
    }

    /// Gradients in parameter order; zeros where the loss did not depend
    /// on a parameter.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`.
pub fn normalized_adjacency<'t>(a: Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
    let (n, m) = a.shape();
    if n != m {
        return Err(TensorError::Dimension {
            op: "normalized_adjacency",
            lhs: (n, m),
            rhs: (n, n),
        });
    }
    let tilde = a.add(a.tape().constant(Tensor::eye(n)))?;
    let inv_sqrt = tilde.sum_rows()?.powf(-0.5)?;
    tilde.mul_rows(inv_sqrt)?.mul_cols(inv_sqrt.t())
}

/// One propagation step `σ(N X W)` given the normalized operator `N`.
pub fn gcn_layer<'t>(norm: Var<'t>, x: Var<'t>, w: Var<'t>, act: Activation) -> std::result::Result<Var<'t>, TensorError> {
    Ok(act.apply(norm.matmul(x)?.matmul(w)?))
}

/// `σ(D̃^{-1/2} Ã D̃^{-1/2} X W)` from raw adjacency.
pub fn gcn_forward<'t>(x: Var<'t>, a: Var<'t>, w: Var<'t>, act: Activation) -> std::result::Result<Var<'t>, TensorError> {
    if x.shape().0 != a.shape().0 {
        return Err(TensorError::Dimension {
            op: "gcn_forward",
            lhs: x.shape(),
            rhs: a.shape(),
        });
    }
    gcn_layer(normalized_adjacency(a)?, x, w, act)
}
