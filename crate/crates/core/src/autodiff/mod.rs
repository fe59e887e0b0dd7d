//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! Nodes are appended to the [`Tape`] as operations run, so node order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.

mod adam;
mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState, Parameter};
pub use tensor::Tensor;
use tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    Sum(Var),
    RowMean(Var),
    ConcatRows(Vec<Var>),
    ScaleRows(Var, Var),
    Pick(Var, usize, usize),
    /// Inverted-dropout multiplier per element.
    Dropout(Var, Vec<f64>),
    /// Softmax probabilities and target class.
    SoftmaxCrossEntropy(Var, Vec<f64>, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Single-threaded operation record.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new(Mode::Eval, 0)
    }
}

fn shape_error(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension(format!("{op} of {:?} and {:?}", a.shape(), b.shape()))
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    /// `seed` drives the dropout masks.
    pub fn new(mode: Mode, seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Moves a value out of the tape, leaving an empty tensor behind.
    /// Only valid once no further forward or backward work needs it.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(0, 0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_error(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let rg = self.needs(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        let rg = self.needs(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        let rg = self.needs(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.needs(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Natural logarithm; inputs must be positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Contract("ln of a non-positive value".into()));
        }
        let out = self.value(a).map(f64::ln);
        let rg = self.needs(a);
        Ok(self.push(out, Op::Ln(a), rg))
    }

    /// Sum of all elements, as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Column-wise mean over rows: `n × d → 1 × d`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).row_mean()?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::RowMean(a), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_error("concat_rows", self.value(*first), t));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Multiplies row `i` of `x` (`n × d`) by `s[i]` (`s`: `n × 1`).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xt, st) = (self.value(x), self.value(s));
        if st.shape() != (xt.rows(), 1) {
            return Err(shape_error("scale_rows", xt, st));
        }
        let d = xt.cols();
        let mut out = xt.clone();
        for (r, chunk) in out.data_mut().chunks_mut(d.max(1)).enumerate() {
            let f = st.get(r, 0);
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.needs(x) || self.needs(s);
        Ok(self.push(out, Op::ScaleRows(x, s), rg))
    }

    /// Single element as a `1 × 1` tensor.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let x = self.value(a);
        if r >= x.rows() || c >= x.cols() {
            return Err(Error::Dimension(format!("pick ({r}, {c}) from {:?}", x.shape())));
        }
        let out = Tensor::scalar(x.get(r, c));
        let rg = self.needs(a);
        Ok(self.push(out, Op::Pick(a, r, c), rg))
    }

    /// Inverted dropout in train mode; identity when `p == 0` or in eval mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param("dropout", "probability must lie in [0, 1)"));
        }
        if p == 0.0 || self.mode == Mode::Eval {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let x = self.value(a);
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    /// Mean cross-entropy of softmax(logits) against `class`; logits are `1 × C`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.rows() != 1 || class >= x.cols() {
            return Err(Error::Dimension(format!(
                "cross-entropy target {class} for logits {:?}",
                x.shape()
            )));
        }
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let loss = z.ln() + max - x.get(0, class);
        let rg = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy(logits, probs, class), rg))
    }

    /// Reverse sweep from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let l = self.value(loss);
        if l.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                l.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let mut da = Tensor::zeros(m, k);
                    matmul_nt_acc(g.data(), bv.data(), m, n, k, da.data_mut());
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(k, n);
                    matmul_tn_acc(av.data(), g.data(), m, k, n, db.data_mut());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n, k) = (av.rows(), av.cols(), bv.rows());
                if self.needs(*a) {
                    let mut da = Tensor::zeros(m, n);
                    matmul_acc(g.data(), bv.data(), m, k, n, da.data_mut());
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(k, n);
                    matmul_tn_acc(g.data(), av.data(), m, k, n, db.data_mut());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, elementwise(g, bv, |x, y| x * y));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, elementwise(g, av, |x, y| x * y));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * f)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = elementwise(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = elementwise(g, out, |gv, s| gv * s * (1.0 - s));
                self.accumulate(grads, *a, d);
            }
            Op::Ln(a) => {
                let d = elementwise(g, self.value(*a), |gv, x| gv / x);
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::RowMean(a) => {
                let (n, d) = self.value(*a).shape();
                let inv = 1.0 / n as f64;
                let mut da = Tensor::zeros(n, d);
                for chunk in da.data_mut().chunks_mut(d.max(1)) {
                    for (o, gv) in chunk.iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    self.accumulate(grads, p, Tensor::new(rows, cols, slice).expect("slice shape"));
                }
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let d = xv.cols();
                if self.needs(*x) {
                    let mut dx = g.clone();
                    for (r, chunk) in dx.data_mut().chunks_mut(d.max(1)).enumerate() {
                        let f = sv.get(r, 0);
                        chunk.iter_mut().for_each(|v| *v *= f);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*s) {
                    let mut ds = Tensor::zeros(xv.rows(), 1);
                    for r in 0..xv.rows() {
                        let dot: f64 = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                        ds.set(r, 0, dot);
                    }
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::Pick(a, r, c) => {
                let (rows, cols) = self.value(*a).shape();
                let mut da = Tensor::zeros(rows, cols);
                da.set(*r, *c, g.item());
                self.accumulate(grads, *a, da);
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(v, m)| v * m).collect();
                let da = Tensor::new(g.rows(), g.cols(), data).expect("mask shape");
                self.accumulate(grads, *a, da);
            }
            Op::SoftmaxCrossEntropy(a, probs, class) => {
                let gv = g.item();
                let mut d: Vec<f64> = probs.iter().map(|p| p * gv).collect();
                d[*class] -= gv;
                self.accumulate(grads, *a, Tensor::row_vector(d));
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("matching shapes")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
