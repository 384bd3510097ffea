use std::cell::RefCell;
use std::rc::Rc;

use super::eig::{sym_eig, DEGENERATE_GAP};
use super::{matmul_raw, Result, Tensor, TensorError};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    Broadcast(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Log(usize),
    Exp(usize),
    Pow { x: usize, p: f64 },
    PowOrZero { x: usize, p: f64, floor: f64 },
    SoftmaxRows(usize),
    Min(usize, usize),
    Max(usize, usize),
    MaskedSelect(usize, Rc<[bool]>),
    HStack(Vec<usize>),
    VStack(Vec<usize>),
    SymFromUpper(usize),
    EigVals { input: usize, vectors: Rc<Tensor>, values: Rc<[f64]> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Linear record of the forward computation.
///
/// Node ids are assigned in creation order, so every op's inputs have
/// smaller ids than the op itself; walking ids downwards is a valid reverse
/// topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of one scalar w.r.t. every node that required them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when the output did not
    /// depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn leaf(&self, value: Rc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse replay from a `1 × 1` root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        let shape = nodes[root.id].value.shape();
        if shape != (1, 1) {
            return Err(TensorError::Usage(format!(
                "backward requires a scalar root, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::scalar(1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut send = |target: usize, contribution: Tensor| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            let out = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        send(*a, matmul_raw(&g, &val(*b).transpose()));
                    }
                    if nodes[*b].requires_grad {
                        send(*b, matmul_raw(&val(*a).transpose(), &g));
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Hadamard(a, b) => {
                    send(*a, zip(&g, val(*b), |g, b| g * b));
                    send(*b, zip(&g, val(*a), |g, a| g * a));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    send(*a, zip(&g, bv, |g, b| g / b));
                    let gb = Tensor::from_raw(
                        g.rows,
                        g.cols,
                        (0..g.len()).map(|i| -g.data[i] * av.data[i] / (bv.data[i] * bv.data[i])).collect(),
                    );
                    send(*b, gb);
                }
                Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
                Op::AddScalar(a) => send(*a, g),
                Op::SumAll(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Tensor::filled(r, c, g.data[0]));
                }
                Op::SumRows(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Tensor::from_fn(r, c, |i, _| g.data[i]));
                }
                Op::SumCols(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Tensor::from_fn(r, c, |_, j| g.data[j]));
                }
                Op::Broadcast(a) => {
                    let (r0, c0) = val(*a).shape();
                    let mut acc = Tensor::zeros(r0, c0);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            let (ii, jj) = (if r0 == 1 { 0 } else { i }, if c0 == 1 { 0 } else { j });
                            acc.data[ii * c0 + jj] += g.data[i * g.cols + j];
                        }
                    }
                    send(*a, acc);
                }
                Op::Relu(a) => send(*a, zip(&g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::Sigmoid(a) => send(*a, zip(&g, out, |g, y| g * y * (1.0 - y))),
                Op::Tanh(a) => send(*a, zip(&g, out, |g, y| g * (1.0 - y * y))),
                Op::Log(a) => send(*a, zip(&g, val(*a), |g, x| g / x)),
                Op::Exp(a) => send(*a, zip(&g, out, |g, y| g * y)),
                Op::Pow { x, p } => {
                    let p = *p;
                    send(*x, zip(&g, val(*x), |g, x| g * p * x.powf(p - 1.0)));
                }
                Op::PowOrZero { x, p, floor } => {
                    let (p, floor) = (*p, *floor);
                    send(
                        *x,
                        zip(&g, val(*x), |g, x| if x > floor { g * p * x.powf(p - 1.0) } else { 0.0 }),
                    );
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Tensor::zeros(out.rows, out.cols);
                    for i in 0..out.rows {
                        let y = out.row_slice(i);
                        let gr = g.row_slice(i);
                        let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..out.cols {
                            ga.data[i * out.cols + j] = y[j] * (gr[j] - dot);
                        }
                    }
                    send(*a, ga);
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    let is_min = matches!(node.op, Op::Min(..));
                    let (av, bv) = (val(*a), val(*b));
                    let pick_a: Vec<bool> = av
                        .data
                        .iter()
                        .zip(&bv.data)
                        .map(|(x, y)| if is_min { x <= y } else { x >= y })
                        .collect();
                    let ga = Tensor::from_raw(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&pick_a).map(|(&g, &p)| if p { g } else { 0.0 }).collect(),
                    );
                    let gb = Tensor::from_raw(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&pick_a).map(|(&g, &p)| if p { 0.0 } else { g }).collect(),
                    );
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::MaskedSelect(a, mask) => {
                    let (r, c) = val(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    let mut k = 0;
                    for (slot, &m) in ga.data.iter_mut().zip(mask.iter()) {
                        if m {
                            *slot = g.data[k];
                            k += 1;
                        }
                    }
                    send(*a, ga);
                }
                Op::HStack(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = val(p).cols;
                        send(p, Tensor::from_fn(g.rows, c, |i, j| g.get(i, offset + j)));
                        offset += c;
                    }
                }
                Op::VStack(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let r = val(p).rows;
                        let chunk = g.data[offset * g.cols..(offset + r) * g.cols].to_vec();
                        send(p, Tensor::from_raw(r, g.cols, chunk));
                        offset += r;
                    }
                }
                Op::SymFromUpper(a) => {
                    let n = out.rows;
                    let mut gv = Vec::with_capacity(val(*a).len());
                    for i in 0..n {
                        for j in i + 1..n {
                            gv.push(g.get(i, j) + g.get(j, i));
                        }
                    }
                    send(*a, Tensor::from_raw(gv.len(), 1, gv));
                }
                Op::EigVals { input, vectors, values } => {
                    send(*input, eigval_backward(&g, vectors, values));
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Symmetric `n × n` matrix with zero diagonal whose strict upper
    /// triangle is read row by row from the `n(n-1)/2 × 1` column `upper`.
    pub fn symmetric_from_upper<'t>(&'t self, upper: Var<'t>, n: usize) -> Result<Var<'t>> {
        let v = upper.value();
        if v.shape() != (n * n.saturating_sub(1) / 2, 1) {
            return Err(TensorError::Dimension {
                op: "symmetric_from_upper",
                lhs: v.shape(),
                rhs: (n * n.saturating_sub(1) / 2, 1),
            });
        }
        let mut out = Tensor::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                out.data[i * n + j] = v.data[k];
                out.data[j * n + i] = v.data[k];
                k += 1;
            }
        }
        self.push("symmetric_from_upper", out, Op::SymFromUpper(upper.id), &[upper.id])
    }

    pub fn hstack<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Usage("hstack of nothing".into()))?
            .value();
        let rows = first.rows;
        let mut cols = 0;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        for v in &values {
            if v.rows != rows {
                return Err(TensorError::Dimension {
                    op: "hstack",
                    lhs: first.shape(),
                    rhs: v.shape(),
                });
            }
            cols += v.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for v in &values {
            for i in 0..rows {
                for j in 0..v.cols {
                    out.data[i * cols + offset + j] = v.get(i, j);
                }
            }
            offset += v.cols;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push("hstack", out, Op::HStack(ids.clone()), &ids)
    }

    pub fn vstack<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Usage("vstack of nothing".into()))?
            .value();
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            if v.cols != cols {
                return Err(TensorError::Dimension {
                    op: "vstack",
                    lhs: first.shape(),
                    rhs: v.shape(),
                });
            }
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push("vstack", Tensor::from_raw(rows, cols, data), Op::VStack(ids.clone()), &ids)
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_raw(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

/// dλ_i/dM = u_i u_iᵀ, except eigenvalues within [`DEGENERATE_GAP`] of a
/// neighbour, whose contribution is dropped.
fn eigval_backward(g: &Tensor, vectors: &Tensor, values: &[f64]) -> Tensor {
    let n = values.len();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        let gi = g.data[i];
        if gi == 0.0 {
            continue;
        }
        let close_below = i > 0 && values[i] - values[i - 1] < DEGENERATE_GAP;
        let close_above = i + 1 < n && values[i + 1] - values[i] < DEGENERATE_GAP;
        if close_below || close_above {
            continue;
        }
        for r in 0..n {
            let ur = vectors.get(r, i) * gi;
            if ur == 0.0 {
                continue;
            }
            for c in 0..n {
                out.data[r * n + c] += ur * vectors.get(c, i);
            }
        }
    }
    out
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Dimension {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

// fallible ops (shape checks) cannot implement the std operator traits
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Value of a `1 × 1` var.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.shape(), (1, 1));
        v.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut off from the gradient path.
    pub fn detach(self) -> Var<'t> {
        self.tape.leaf(self.value(), false)
    }

    fn unary(self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'t>> {
        self.tape.push(name, value, op, &[self.id])
    }

    fn binary(self, rhs: Var<'t>, name: &'static str, value: Tensor, op: Op) -> Result<Var<'t>> {
        self.tape.push(name, value, op, &[self.id, rhs.id])
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().matmul(&rhs.value())?;
        self.binary(rhs, "matmul", out, Op::MatMul(self.id, rhs.id))
    }

    pub fn t(self) -> Var<'t> {
        let out = self.value().transpose();
        self.unary("transpose", out, Op::Transpose(self.id)).expect("transpose is finite")
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("add", &a, &b)?;
        self.binary(rhs, "add", zip(&a, &b, |x, y| x + y), Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("sub", &a, &b)?;
        self.binary(rhs, "sub", zip(&a, &b, |x, y| x - y), Op::Sub(self.id, rhs.id))
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("hadamard", &a, &b)?;
        self.binary(rhs, "hadamard", zip(&a, &b, |x, y| x * y), Op::Hadamard(self.id, rhs.id))
    }

    /// Elementwise quotient; zero divisors are a domain error.
    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("div", &a, &b)?;
        if b.data.contains(&0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary(rhs, "div", zip(&a, &b, |x, y| x / y), Op::Div(self.id, rhs.id))
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v * s);
        self.unary("scale", out, Op::Scale(self.id, s))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0).expect("negation is finite")
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v + s);
        self.unary("add_scalar", out, Op::AddScalar(self.id))
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value().sum());
        self.unary("sum", out, Op::SumAll(self.id))
    }

    /// Mean of all entries, `1 × 1`.
    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Per-row sums, `rows × 1`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let v = self.value();
        let out = Tensor::from_raw(v.rows, 1, (0..v.rows).map(|i| v.row_slice(i).iter().sum()).collect());
        self.unary("sum_rows", out, Op::SumRows(self.id))
    }

    /// Per-column sums, `1 × cols`.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        let v = self.value();
        let mut out = vec![0.0; v.cols];
        for i in 0..v.rows {
            for (o, x) in out.iter_mut().zip(v.row_slice(i)) {
                *o += x;
            }
        }
        self.unary("sum_cols", Tensor::from_raw(1, v.cols, out), Op::SumCols(self.id))
    }

    /// Mean over rows, `1 × cols`.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let n = self.shape().0.max(1) as f64;
        self.sum_cols()?.scale(1.0 / n)
    }

    /// Expands a `1 × 1`, `1 × cols` or `rows × 1` var to `rows × cols`.
    pub fn broadcast_to(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        let ok_r = v.rows == rows || v.rows == 1;
        let ok_c = v.cols == cols || v.cols == 1;
        if !(ok_r && ok_c) {
            return Err(TensorError::Dimension {
                op: "broadcast_to",
                lhs: v.shape(),
                rhs: (rows, cols),
            });
        }
        let out = Tensor::from_fn(rows, cols, |i, j| {
            v.get(if v.rows == 1 { 0 } else { i }, if v.cols == 1 { 0 } else { j })
        });
        self.unary("broadcast_to", out, Op::Broadcast(self.id))
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        self.add(row.broadcast_to(r, c)?)
    }

    /// Scales row `i` by `v[i]` for a `rows × 1` column `v`.
    pub fn mul_rows(self, v: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        self.mul(v.broadcast_to(r, c)?)
    }

    /// Scales column `j` by `v[j]` for a `1 × cols` row `v`.
    pub fn mul_cols(self, v: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        self.mul(v.broadcast_to(r, c)?)
    }

    pub fn relu(self) -> Var<'t> {
        let out = self.value().map(|v| v.max(0.0));
        self.unary("relu", out, Op::Relu(self.id)).expect("relu is finite")
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = self.value().map(stable_sigmoid);
        self.unary("sigmoid", out, Op::Sigmoid(self.id)).expect("sigmoid is finite")
    }

    pub fn tanh(self) -> Var<'t> {
        let out = self.value().map(f64::tanh);
        self.unary("tanh", out, Op::Tanh(self.id)).expect("tanh is finite")
    }

    pub fn log(self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(bad) = v.data.iter().find(|&&x| x <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        self.unary("log", v.map(f64::ln), Op::Log(self.id))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let out = self.value().map(f64::exp);
        self.unary("exp", out, Op::Exp(self.id))
    }

    /// Elementwise power. Negative bases are rejected for non-integer
    /// exponents, zero bases for negative exponents.
    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        let v = self.value();
        let bad = v
            .data
            .iter()
            .find(|&&x| (x < 0.0 && p.fract() != 0.0) || (x == 0.0 && p < 0.0));
        if let Some(bad) = bad {
            return Err(TensorError::Domain {
                op: "powf",
                detail: format!("{bad} ^ {p}"),
            });
        }
        self.unary("powf", v.map(|x| x.powf(p)), Op::Pow { x: self.id, p })
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.powf(0.5)
    }

    /// `x^p` where `x > floor`, `0` (with zero gradient) elsewhere.
    pub fn pow_or_zero(self, p: f64, floor: f64) -> Result<Var<'t>> {
        let out = self.value().map(|x| if x > floor { x.powf(p) } else { 0.0 });
        self.unary("pow_or_zero", out, Op::PowOrZero { x: self.id, p, floor })
    }

    pub fn softmax_rows(self) -> Var<'t> {
        let v = self.value();
        let mut out = Tensor::zeros(v.rows, v.cols);
        for i in 0..v.rows {
            let row = v.row_slice(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                out.data[i * v.cols + j] = e / z;
            }
        }
        self.unary("softmax_rows", out, Op::SoftmaxRows(self.id))
            .expect("softmax is finite")
    }

    pub fn minimum(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("minimum", &a, &b)?;
        self.binary(rhs, "minimum", zip(&a, &b, f64::min), Op::Min(self.id, rhs.id))
    }

    pub fn maximum(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("maximum", &a, &b)?;
        self.binary(rhs, "maximum", zip(&a, &b, f64::max), Op::Max(self.id, rhs.id))
    }

    /// Entries where `mask` is true, in row-major order, as a column.
    pub fn masked_select(self, mask: &[bool]) -> Result<Var<'t>> {
        let v = self.value();
        if mask.len() != v.len() {
            return Err(TensorError::Dimension {
                op: "masked_select",
                lhs: v.shape(),
                rhs: (mask.len(), 1),
            });
        }
        let picked: Vec<f64> = v.data.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
        let out = Tensor::from_raw(picked.len(), 1, picked);
        self.unary("masked_select", out, Op::MaskedSelect(self.id, mask.into()))
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(self) -> Result<Var<'t>> {
        self.add(self.t())?.scale(0.5)
    }

    /// Ascending eigenvalues (`n × 1`) of a symmetric matrix.
    pub fn sym_eigvals(self) -> Result<Var<'t>> {
        let m = self.value();
        let pair = sym_eig(&m)?;
        let out = Tensor::from_raw(m.rows, 1, pair.values.clone());
        let op = Op::EigVals {
            input: self.id,
            vectors: Rc::new(pair.vectors),
            values: pair.values.into(),
        };
        self.unary("sym_eigvals", out, op)
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().item(), 0.5);
    }

    #[test]
    fn matmul_identity_on_tape() {
        let tape = Tape::new();
        let m = Tensor::from_fn(3, 3, |i, j| (i as f64) - 2.0 * j as f64);
        let out = tape.constant(Tensor::eye(3)).matmul(tape.constant(m.clone())).unwrap();
        assert_eq!(*out.value(), m);
    }

    #[test]
    fn shape_and_domain_errors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(a.matmul(b), Err(TensorError::Dimension { .. })));
        assert!(matches!(a.log(), Err(TensorError::Domain { .. })));
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(matches!(a.add(c), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let a = tape.param(Tensor::ones(2, 2));
        assert!(matches!(tape.backward(a), Err(TensorError::Usage(_))));
    }

    #[test]
    fn sum_of_squares_of_product_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 4, 4);
        let w = random(&mut rng, 4, 4);
        let err = grad_check(
            |tape, leaves| {
                let xv = tape.constant(x.clone());
                xv.matmul(leaves[0])?.square()?.sum()
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..=8);
            let m = rng.random_range(2..=8);
            let a = random(&mut rng, n, m);
            let b = random(&mut rng, n, m);
            let c = random(&mut rng, m, n);
            let pos = a.map(|v| v.abs() + 0.5);
            let weights = random(&mut rng, n, m);
            let wv = weights.clone();
            let checks: Vec<(&str, f64)> = vec![
                (
                    "matmul",
                    grad_check(|_, l| l[0].matmul(l[1])?.mul(l[0].matmul(l[1])?)?.sum(), &[a.clone(), c.clone()], 1e-5)
                        .unwrap(),
                ),
                (
                    "add/sub/hadamard/transpose",
                    grad_check(
                        |t, l| {
                            let w = t.constant(wv.clone());
                            l[0].add(l[1])?.sub(l[1].mul(l[0])?)?.mul(w)?.t().sum()
                        },
                        &[a.clone(), b.clone()],
                        1e-5,
                    )
                    .unwrap(),
                ),
                (
                    "div/log/exp/powf",
                    grad_check(
                        |t, l| {
                            let w = t.constant(wv.clone());
                            let q = l[1].div(l[0])?;
                            q.add(l[0].log()?)?.add(l[1].exp()?)?.add(l[0].powf(-0.5)?)?.mul(w)?.sum()
                        },
                        &[pos.clone(), b.clone()],
                        1e-5,
                    )
                    .unwrap(),
                ),
                (
                    "sigmoid/tanh/relu",
                    grad_check(
                        |t, l| {
                            let w = t.constant(wv.clone());
                            l[0].sigmoid().add(l[0].tanh())?.add(l[0].scale(3.0)?.relu())?.mul(w)?.sum()
                        },
                        std::slice::from_ref(&a),
                        1e-5,
                    )
                    .unwrap(),
                ),
                (
                    "softmax/sum_rows/sum_cols/mean",
                    grad_check(
                        |t, l| {
                            let w = t.constant(wv.clone());
                            let s = l[0].softmax_rows().mul(w)?;
                            let r = s.sum_rows()?.square()?.sum()?;
                            let c = s.sum_cols()?.square()?.mean()?;
                            r.add(c)
                        },
                        std::slice::from_ref(&a),
                        1e-5,
                    )
                    .unwrap(),
                ),
                (
                    "min/max/broadcast",
                    grad_check(
                        |t, l| {
                            let w = t.constant(wv.clone());
                            let lo = l[0].minimum(l[1])?;
                            let hi = l[0].maximum(l[1])?;
                            let row = l[0].sum_cols()?.broadcast_to(n, m)?;
                            lo.mul(w)?.add(hi.square()?)?.add(row.mul(w)?)?.sum()
                        },
                        &[a.clone(), b.clone()],
                        1e-5,
                    )
                    .unwrap(),
                ),
                (
                    "masked_select/stack",
                    grad_check(
                        |t, l| {
                            let mask: Vec<bool> = (0..n * m).map(|i| i % 3 != 1).collect();
                            let sel = l[0].masked_select(&mask)?.square()?.sum()?;
                            let h = t.hstack(&[l[0], l[1]])?.square()?.mean()?;
                            let v = t.vstack(&[l[0], l[1]])?.sigmoid().sum()?;
                            sel.add(h)?.add(v)
                        },
                        &[a.clone(), b.clone()],
                        1e-5,
                    )
                    .unwrap(),
                ),
            ];
            for (name, err) in checks {
                assert!(err < 1e-4, "seed {seed}: {name} relative error {err}");
            }
        }
    }

    #[test]
    fn symmetric_from_upper_mirrors_and_has_zero_diagonal() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::column(&[1.0, 2.0, 3.0]).unwrap());
        let m = tape.symmetric_from_upper(v, 3).unwrap().value();
        assert_eq!(m.data(), &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let tape = Tape::new();
            let a = tape.param(random(&mut rng, 5, 5));
            let b = tape.constant(random(&mut rng, 5, 5));
            let loss = a.matmul(b).unwrap().sigmoid().softmax_rows().square().unwrap().sum().unwrap();
            tape.backward(loss).unwrap().wrt(a)
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let a = tape.param(Tensor::scalar(2.0));
        let loss = a.mul(a.detach()).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[2.0]);
    }
}
