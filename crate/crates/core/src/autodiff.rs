//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built by running the forward computation: every operation
//! appends a node holding its value, its adjoint accumulator and a record of
//! its operands. Nodes are stored in creation order, which is a topological
//! order, so [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use asllm_core::autodiff::Graph;
//!
//! let mut g = Graph::new();
//! let x = g.param(&[1], vec![2.0]).unwrap();
//! let y = g.param(&[1], vec![3.0]).unwrap();
//! let z = g.mul(x, y).unwrap();
//! g.backward(z).unwrap();
//! assert_eq!(g.grad(x), &[3.0]);
//! assert_eq!(g.grad(y), &[2.0]);
//! ```
//!
//! Graphs are rebuilt for every forward pass and are meant to be driven by a
//! single thread; independent graphs share nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cosine similarity refuses vectors whose norm is below this.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("cosine similarity needs non-zero vectors")]
    ZeroVector,
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Owned dense tensor: a shape plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; numel],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LogSigmoid(Var),
    SoftmaxPair { a: Var, b: Var, first: bool },
    Gather(Var, Vec<usize>),
    Row(Var, usize),
    Sum(Var),
    Mean(Var),
    Cosine(Var, Var),
    Mse(Var, Var),
    Bce { logit: Var, label: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            shape,
            value,
            grad,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "leaf",
                left: shape.to_vec(),
                right: vec![values.len()],
            });
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, requires_grad))
    }

    pub fn param(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, true)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    /// Leaf copied from an owned tensor.
    pub fn tensor(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(t.shape.clone(), t.values.clone(), Op::Leaf, requires_grad)
    }

    pub fn vector(&mut self, values: &[f64]) -> Var {
        self.push(vec![values.len()], values.to_vec(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.node(v).grad
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: self.node(a).shape.clone(),
                right: self.node(b).shape.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        let (m, n, p) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for k in 0..n {
                let aik = av[i * n + k];
                for j in 0..p {
                    out[i * p + j] += aik * bv[k * p + j];
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, p], out, Op::MatMul(a, b), rg))
    }

    /// Matrix `[r, c]` times vector `[c]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (&self.node(w).shape, &self.node(x).shape);
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matvec",
                left: sw.clone(),
                right: sx.clone(),
            });
        }
        let (r, c) = (sw[0], sw[1]);
        let (wv, xv) = (&self.node(w).value, &self.node(x).value);
        let out: Vec<f64> = (0..r)
            .map(|i| wv[i * c..(i + 1) * c].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(&[w, x]);
        Ok(self.push(vec![r], out, Op::MatVec(w, x), rg))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, out, rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, rec: Op) -> Var {
        let out = self.node(a).value.iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        let shape = self.node(a).shape.clone();
        self.push(shape, out, rec, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    /// Adds constant values elementwise; the offset carries no gradient.
    pub fn offset(&mut self, a: Var, values: &[f64]) -> Result<Var> {
        if values.len() != self.node(a).value.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "offset",
                left: self.node(a).shape.clone(),
                right: vec![values.len()],
            });
        }
        let out = self.node(a).value.iter().zip(values).map(|(x, c)| x + c).collect();
        let rg = self.rg(&[a]);
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, out, Op::Offset(a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// `ln(sigmoid(x))`, stable for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| -softplus(-x), Op::LogSigmoid(a))
    }

    /// Elementwise two-way softmax: returns `(e^a, e^b) / (e^a + e^b)`.
    pub fn softmax_pair(&mut self, a: Var, b: Var) -> Result<(Var, Var)> {
        self.same_shape("softmax_pair", a, b)?;
        let first: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| {
                let m = x.max(y);
                let (ex, ey) = ((x - m).exp(), (y - m).exp());
                ex / (ex + ey)
            })
            .collect();
        let second: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| {
                let m = x.max(y);
                let (ex, ey) = ((x - m).exp(), (y - m).exp());
                ey / (ex + ey)
            })
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.node(a).shape.clone();
        let s1 = self.push(shape.clone(), first, Op::SoftmaxPair { a, b, first: true }, rg);
        let s2 = self.push(shape, second, Op::SoftmaxPair { a, b, first: false }, rg);
        Ok((s1, s2))
    }

    /// Concatenates 1-D tensors (axis 0) or 2-D tensors along axis 0 or 1.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat",
            left: vec![],
            right: vec![],
        })?;
        let base = self.node(*first).shape.clone();
        if axis >= base.len() || base.len() > 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                left: base,
                right: vec![axis],
            });
        }
        for p in parts {
            let s = &self.node(*p).shape;
            let ok = s.len() == base.len() && s.iter().enumerate().all(|(d, &n)| d == axis || n == base[d]);
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.clone(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| self.node(*p).shape[axis]).sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(shape.iter().product());
        if axis == 0 {
            for p in parts {
                out.extend_from_slice(&self.node(*p).value);
            }
        } else {
            for r in 0..base[0] {
                for p in parts {
                    let n = self.node(*p);
                    let c = n.shape[1];
                    out.extend_from_slice(&n.value[r * c..(r + 1) * c]);
                }
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Selects coordinates of a 1-D tensor.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let n = self.node(a);
        if n.shape.len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                left: n.shape.clone(),
                right: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n.value.len()) {
            return Err(AutodiffError::IndexOutOfRange {
                index: bad,
                len: n.value.len(),
            });
        }
        let out = indices.iter().map(|&i| n.value[i]).collect();
        let rg = n.requires_grad;
        Ok(self.push(vec![indices.len()], out, Op::Gather(a, indices.to_vec()), rg))
    }

    /// Row `i` of a 2-D tensor, as a 1-D tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.node(a);
        if n.shape.len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "row",
                left: n.shape.clone(),
                right: vec![i],
            });
        }
        let (r, c) = (n.shape[0], n.shape[1]);
        if i >= r {
            return Err(AutodiffError::IndexOutOfRange { index: i, len: r });
        }
        let out = n.value[i * c..(i + 1) * c].to_vec();
        let rg = n.requires_grad;
        Ok(self.push(vec![c], out, Op::Row(a, i), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a).value.len() as f64;
        let s: f64 = self.node(a).value.iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s / n], Op::Mean(a), rg)
    }

    /// Mean of a list of single-element tensors.
    pub fn mean_of(&mut self, items: &[Var]) -> Result<Var> {
        let c = self.concat(items, 0)?;
        Ok(self.mean(c))
    }

    /// `u·v / (‖u‖‖v‖)` for equal-length vectors.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", u, v)?;
        let (uv, vv) = (&self.node(u).value, &self.node(v).value);
        let nu = uv.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = vv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu < MIN_NORM || nv < MIN_NORM {
            return Err(AutodiffError::ZeroVector);
        }
        let dot: f64 = uv.iter().zip(vv).map(|(a, b)| a * b).sum();
        let d = (dot / (nu * nv)).clamp(-1.0, 1.0);
        let rg = self.rg(&[u, v]);
        Ok(self.push(vec![1], vec![d], Op::Cosine(u, v), rg))
    }

    /// Mean squared error between equal-shape tensors.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (&self.node(pred).value, &self.node(target).value);
        let l = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(vec![1], vec![l], Op::Mse(pred, target), rg))
    }

    /// Binary cross-entropy of a single logit against a `{0, 1}` label.
    pub fn bce_loss(&mut self, logit: Var, label: f64) -> Result<Var> {
        let n = self.node(logit);
        if n.value.len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_loss",
                left: n.shape.clone(),
                right: vec![1],
            });
        }
        let z = n.value[0];
        let l = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        let rg = n.requires_grad;
        Ok(self.push(vec![1], vec![l], Op::Bce { logit, label }, rg))
    }

    /// Accumulates `∂root/∂node` into every node reachable from `root`.
    ///
    /// Intended to run once per graph; a second call would add the same
    /// contributions again.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.node(root).value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(self.node(root).shape.clone()));
        }
        if !self.node(root).requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad[0] += 1.0;
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let grad = std::mem::take(&mut self.nodes[i].grad);
            if grad.iter().all(|&g| g == 0.0) {
                self.nodes[i].grad = grad;
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &grad);
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl Fn(usize) -> f64) {
        let n = &mut self.nodes[v.0];
        if !n.requires_grad {
            return;
        }
        for (j, g) in n.grad.iter_mut().enumerate() {
            *g += f(j);
        }
    }

    fn propagate(&mut self, i: usize, op: &Op, grad: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let p = self.nodes[b.0].shape[1];
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].value.clone();
                    let ga = &mut self.nodes[a.0].grad;
                    for r in 0..m {
                        for k in 0..n {
                            let mut s = 0.0;
                            for j in 0..p {
                                s += grad[r * p + j] * bv[k * p + j];
                            }
                            ga[r * n + k] += s;
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].value.clone();
                    let gb = &mut self.nodes[b.0].grad;
                    for r in 0..m {
                        for k in 0..n {
                            let aik = av[r * n + k];
                            for j in 0..p {
                                gb[k * p + j] += aik * grad[r * p + j];
                            }
                        }
                    }
                }
            }
            Op::MatVec(w, x) => {
                let (r, c) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                if self.nodes[w.0].requires_grad {
                    let xv = self.nodes[x.0].value.clone();
                    let gw = &mut self.nodes[w.0].grad;
                    for a in 0..r {
                        let ga = grad[a];
                        if ga == 0.0 {
                            continue;
                        }
                        for (gwb, xb) in gw[a * c..(a + 1) * c].iter_mut().zip(&xv) {
                            *gwb += ga * xb;
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let wv = self.nodes[w.0].value.clone();
                    let gx = &mut self.nodes[x.0].grad;
                    for a in 0..r {
                        let ga = grad[a];
                        if ga == 0.0 {
                            continue;
                        }
                        for (gxb, wab) in gx.iter_mut().zip(&wv[a * c..(a + 1) * c]) {
                            *gxb += ga * wab;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(*a, |j| grad[j]);
                self.acc(*b, |j| grad[j]);
            }
            Op::Sub(a, b) => {
                self.acc(*a, |j| grad[j]);
                self.acc(*b, |j| -grad[j]);
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                self.acc(*a, |j| grad[j] * bv[j]);
                self.acc(*b, |j| grad[j] * av[j]);
            }
            Op::Scale(a, c) => self.acc(*a, |j| c * grad[j]),
            Op::Offset(a) => self.acc(*a, |j| grad[j]),
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        self.acc(*p, |j| grad[off + j]);
                        off += len;
                    }
                } else {
                    let total = self.nodes[i].shape[1];
                    let mut col = 0;
                    for p in parts {
                        let c = self.nodes[p.0].shape[1];
                        self.acc(*p, |j| grad[(j / c) * total + col + j % c]);
                        col += c;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.clone();
                self.acc(*a, |j| grad[j] * y[j] * (1.0 - y[j]));
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.clone();
                self.acc(*a, |j| grad[j] * (1.0 - y[j] * y[j]));
            }
            Op::Relu(a) => {
                let x = self.nodes[a.0].value.clone();
                self.acc(*a, |j| if x[j] > 0.0 { grad[j] } else { 0.0 });
            }
            Op::LogSigmoid(a) => {
                let x = self.nodes[a.0].value.clone();
                self.acc(*a, |j| grad[j] * sigmoid(-x[j]));
            }
            Op::SoftmaxPair { a, b, first } => {
                // s_a(1 - s_a) = s_a s_b, so both partials share one factor.
                let y = self.nodes[i].value.clone();
                let sign = if *first { 1.0 } else { -1.0 };
                self.acc(*a, |j| sign * grad[j] * y[j] * (1.0 - y[j]));
                self.acc(*b, |j| -sign * grad[j] * y[j] * (1.0 - y[j]));
            }
            Op::Gather(a, idx) => {
                let n = &mut self.nodes[a.0];
                if n.requires_grad {
                    for (k, &j) in idx.iter().enumerate() {
                        n.grad[j] += grad[k];
                    }
                }
            }
            Op::Row(a, r) => {
                let n = &mut self.nodes[a.0];
                if n.requires_grad {
                    let c = n.shape[1];
                    for (k, g) in n.grad[r * c..(r + 1) * c].iter_mut().enumerate() {
                        *g += grad[k];
                    }
                }
            }
            Op::Sum(a) => self.acc(*a, |_| grad[0]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                self.acc(*a, |_| grad[0] / n);
            }
            Op::Cosine(u, v) => {
                let uv = self.nodes[u.0].value.clone();
                let vv = self.nodes[v.0].value.clone();
                let nu = uv.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = vv.iter().map(|x| x * x).sum::<f64>().sqrt();
                let dot: f64 = uv.iter().zip(&vv).map(|(a, b)| a * b).sum();
                let d = dot / (nu * nv);
                let g = grad[0];
                self.acc(*u, |j| g * (vv[j] / (nu * nv) - d * uv[j] / (nu * nu)));
                self.acc(*v, |j| g * (uv[j] / (nu * nv) - d * vv[j] / (nv * nv)));
            }
            Op::Mse(p, t) => {
                let pv = self.nodes[p.0].value.clone();
                let tv = self.nodes[t.0].value.clone();
                let n = pv.len() as f64;
                let g = grad[0];
                self.acc(*p, |j| g * 2.0 * (pv[j] - tv[j]) / n);
                self.acc(*t, |j| -g * 2.0 * (pv[j] - tv[j]) / n);
            }
            Op::Bce { logit, label } => {
                let z = self.nodes[logit.0].value[0];
                let g = grad[0];
                self.acc(*logit, |_| g * (sigmoid(z) - label));
            }
        }
    }
}

/// Compares reverse-mode gradients of `f` at `x` with central differences.
///
/// Returns the maximum over coordinates of
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F, E>(f: F, x: &Tensor, epsilon: f64) -> std::result::Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> std::result::Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut g = Graph::new();
    let xv = g.tensor(x, true);
    let root = f(&mut g, xv)?;
    g.backward(root)?;
    let analytic = g.grad(xv).to_vec();

    let eval = |values: Vec<f64>| -> std::result::Result<f64, E> {
        let mut g = Graph::new();
        let xv = g.leaf(&x.shape, values, false)?;
        let root = f(&mut g, xv)?;
        if g.value(root).len() != 1 {
            return Err(AutodiffError::NonScalarRoot(g.shape(root).to_vec()).into());
        }
        Ok(g.scalar(root))
    };

    let mut worst: f64 = 0.0;
    for j in 0..x.numel() {
        let mut plus = x.values.clone();
        plus[j] += epsilon;
        let mut minus = x.values.clone();
        minus[j] -= epsilon;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
        let ad = analytic[j];
        let err = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(g: &mut Graph, xs: &[f64]) -> Var {
        g.param(&[xs.len()], xs.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.shape(p), &[2, 2]);
    }

    #[test]
    fn add_and_concat() {
        let mut g = Graph::new();
        let a = v(&mut g, &[1.0, 2.0]);
        let b = v(&mut g, &[3.0, 4.0]);
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s), &[4.0, 6.0]);
        let c1 = v(&mut g, &[1.0]);
        let c2 = v(&mut g, &[2.0, 3.0]);
        let c = g.concat(&[c1, c2], 0).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = v(&mut g, &[1.0, 2.0]);
        let b = v(&mut g, &[1.0, 2.0, 3.0]);
        assert!(matches!(g.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        let m = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(g.matvec(m, b).is_err());
        assert!(g.leaf(&[3], vec![1.0], false).is_err());
    }

    #[test]
    fn concat_columns() {
        let mut g = Graph::new();
        let a = g.param(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = g.param(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = g.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m = g.mul(c, w).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a), &[1.0, 4.0]);
        assert_eq!(g.grad(b), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn activations() {
        let mut g = Graph::new();
        let x = v(&mut g, &[0.0, -3.0, 3.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s)[0], 0.5);
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 0.0, 3.0]);
        for a in [-700.0, -2.0, 0.0, 5.0, 700.0] {
            let x = v(&mut g, &[a]);
            let y = v(&mut g, &[a]);
            let (p, q) = g.softmax_pair(x, y).unwrap();
            assert_eq!(g.value(p)[0], 0.5);
            assert_eq!(g.value(q)[0], 0.5);
        }
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = v(&mut g, &[0.0]);
        let r = g.relu(x);
        g.backward(r).unwrap();
        assert_eq!(g.grad(x), &[0.0]);
    }

    #[test]
    fn cosine_examples() {
        let mut g = Graph::new();
        let cases = [
            ([1.0, 0.0], [1.0, 0.0], 1.0),
            ([1.0, 0.0], [0.0, 1.0], 0.0),
            ([1.0, 1.0], [1.0, 0.0], std::f64::consts::FRAC_1_SQRT_2),
        ];
        for (a, b, want) in cases {
            let a = v(&mut g, &a);
            let b = v(&mut g, &b);
            let d = g.cosine_similarity(a, b).unwrap();
            assert!((g.scalar(d) - want).abs() < 1e-12);
        }
        let z = v(&mut g, &[0.0, 0.0]);
        let o = v(&mut g, &[1.0, 0.0]);
        assert_eq!(g.cosine_similarity(z, o), Err(AutodiffError::ZeroVector));
    }

    #[test]
    fn losses() {
        let mut g = Graph::new();
        let a = v(&mut g, &[1.0, 1.0]);
        let b = v(&mut g, &[1.0, 1.0]);
        let l = g.mse_loss(a, b).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        let p = v(&mut g, &[2.0]);
        let t = g.constant(&[1], vec![0.0]).unwrap();
        let l = g.mse_loss(p, t).unwrap();
        assert_eq!(g.scalar(l), 4.0);
        let z = v(&mut g, &[0.0]);
        let l = g.bce_loss(z, 1.0).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
        // large logits stay finite
        let z = v(&mut g, &[800.0]);
        let l = g.bce_loss(z, 0.0).unwrap();
        assert!((g.scalar(l) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn product_rule_and_sigmoid_gradient() {
        let mut g = Graph::new();
        let x = v(&mut g, &[2.0]);
        let y = v(&mut g, &[3.0]);
        let z = g.mul(x, y).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x), &[3.0]);
        assert_eq!(g.grad(y), &[2.0]);

        let mut g = Graph::new();
        let x = v(&mut g, &[0.0]);
        let s = g.sigmoid(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), &[0.25]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = v(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn adjoint_untouched_before_backward() {
        let mut g = Graph::new();
        let x = v(&mut g, &[1.0, 2.0]);
        let y = g.tanh(x);
        assert!(g.grad(x).iter().all(|&v| v == 0.0));
        assert!(g.grad(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_subgraph_accumulates() {
        // root = tanh(x) * x + sigmoid(x): x feeds three consumers.
        let x0 = 0.37;
        let mut g = Graph::new();
        let x = v(&mut g, &[x0]);
        let t = g.tanh(x);
        let p = g.mul(t, x).unwrap();
        let s = g.sigmoid(x);
        let r = g.add(p, s).unwrap();
        g.backward(r).unwrap();
        let sig = 1.0 / (1.0 + (-x0).exp());
        let want = (1.0 - x0.tanh().powi(2)) * x0 + x0.tanh() + sig * (1.0 - sig);
        assert!((g.grad(x)[0] - want).abs() < 1e-14);
    }

    #[test]
    fn grad_check_square() {
        let x = Tensor::vector(vec![3.0]);
        let err = grad_check::<_, AutodiffError>(|g, x| g.mul(x, x), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn gather_and_row_gradients() {
        let mut g = Graph::new();
        let t = g.param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = g.row(t, 1).unwrap();
        assert_eq!(g.value(r), &[4.0, 5.0, 6.0]);
        let s = g.gather(r, &[2, 0]).unwrap();
        assert_eq!(g.value(s), &[6.0, 4.0]);
        let l = g.sum(s);
        g.backward(l).unwrap();
        assert_eq!(g.grad(t), &[0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(matches!(g.row(t, 2), Err(AutodiffError::IndexOutOfRange { .. })));
    }
}
