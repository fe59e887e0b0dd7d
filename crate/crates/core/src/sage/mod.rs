//! GraphSAGE graph classifier: two mean-aggregator layers over full
//! neighborhoods, mean-pool readout and a dense head.
//!
//! Each layer computes `ReLU(P · (H · Wᵀ))` where row `v` of `P` averages
//! node `v` with its in-neighbors. Projecting before aggregating keeps the
//! first layer cheap when the feature length is large.

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Mode, Parameter, Tape, Tensor, Var};
use crate::causal::{AdjacencyMatrix, CausalGraphInstance};
use crate::error::{Error, Result};
use crate::waveform::derive_seed;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use train::{
    evaluate, loss_gradients, predict, stratified_split, train, EpochMetrics, EpochRecord, LossGradients, Metrics,
    TrainOutcome,
    METRICS_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Each node averages itself with its causal parents.
    #[default]
    InNeighbors,
    /// Parents and children alike.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub head_dims: Vec<usize>,
    pub classes: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub test_split: f64,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 6001,
            hidden1: 256,
            hidden2: 128,
            head_dims: vec![64],
            classes: 9,
            lr: 1e-5,
            epochs: 100,
            batch_size: 1,
            dropout: 0.0,
            test_split: 0.2,
            seed: 0,
            aggregation: Aggregation::InNeighbors,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("batch_size", self.batch_size),
        ];
        for (field, v) in dims {
            if v == 0 {
                return Err(Error::param(field, "must be at least 1"));
            }
        }
        if self.head_dims.contains(&0) {
            return Err(Error::param("head_dims", "every width must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::param("classes", "need at least 2 classes"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout", "must lie in [0, 1)"));
        }
        if !(self.test_split > 0.0 && self.test_split < 1.0) {
            return Err(Error::param("test_split", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// Hash of the fields that determine parameter shapes and the forward pass.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!(
            "sage;input={};h1={};h2={};head={:?};classes={};agg={:?}",
            self.input_dim, self.hidden1, self.hidden2, self.head_dims, self.classes, self.aggregation
        );
        let digest = Sha256::digest(canonical.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    /// `(name, rows, cols)` of every parameter, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = vec![
            ("sage1.weight".to_string(), self.hidden1, self.input_dim),
            ("sage2.weight".to_string(), self.hidden2, self.hidden1),
        ];
        let mut fan_in = self.hidden2;
        let widths = self.head_dims.iter().copied().chain(std::iter::once(self.classes));
        for (i, out) in widths.enumerate() {
            shapes.push((format!("head{i}.weight"), out, fan_in));
            shapes.push((format!("head{i}.bias"), 1, out));
            fan_in = out;
        }
        shapes
    }
}

/// Model weights. Matrices are stored `out × in`; biases are `1 × out` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    params: Vec<Parameter>,
}

impl SageParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
        let params = cfg
            .parameter_shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                let value = if name.ends_with(".bias") {
                    Tensor::zeros(rows, cols)
                } else {
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
                    Tensor::new(rows, cols, data).expect("shape from config")
                };
                Parameter::new(name, value)
            })
            .collect();
        Ok(SageParams { params })
    }

    /// Checks names and shapes against `cfg`.
    pub fn from_parameters(cfg: &ModelConfig, params: Vec<Parameter>) -> Result<Self> {
        let shapes = cfg.parameter_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, rows, cols), p) in shapes.iter().zip(&params) {
            if *name != p.name || p.value.shape() != (*rows, *cols) {
                return Err(Error::Dimension(format!(
                    "parameter `{}` {:?} where `{name}` ({rows}, {cols}) was expected",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(SageParams { params })
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn w1(&self) -> &Tensor {
        &self.params[0].value
    }

    pub fn w2(&self) -> &Tensor {
        &self.params[1].value
    }

    /// `(weight, bias)` pairs of the head, input side first.
    pub fn head(&self) -> impl Iterator<Item = (&Tensor, &Tensor)> {
        self.params[2..].chunks(2).map(|c| (&c[0].value, &c[1].value))
    }

    pub fn head_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &mut Tensor)> {
        self.params[2..].chunks_mut(2).map(|c| {
            let (w, b) = c.split_at_mut(1);
            (&mut w[0].value, &mut b[0].value)
        })
    }

    pub fn w1_mut(&mut self) -> &mut Tensor {
        &mut self.params[0].value
    }

    pub fn w2_mut(&mut self) -> &mut Tensor {
        &mut self.params[1].value
    }
}

/// Row-stochastic mean-aggregation matrix: `P[v][v] = P[v][u] = 1 / (1 + |N(v)|)`.
pub fn aggregation_matrix(adj: &AdjacencyMatrix, aggregation: Aggregation) -> Tensor {
    let n = adj.n();
    let mut p = Tensor::zeros(n, n);
    for v in 0..n {
        let neighbors: Vec<usize> = (0..n)
            .filter(|&u| {
                u != v
                    && match aggregation {
                        Aggregation::InNeighbors => adj.has_edge(u, v),
                        Aggregation::Symmetric => adj.has_edge(u, v) || adj.has_edge(v, u),
                    }
            })
            .collect();
        let w = 1.0 / (1 + neighbors.len()) as f64;
        p.set(v, v, w);
        for u in neighbors {
            p.set(v, u, w);
        }
    }
    p
}

/// One mean-aggregator layer: row `v` is `ReLU(W · mean({h_v} ∪ {h_u : u → v}))`.
pub fn sage_layer_forward(
    h: &Tensor,
    adj: &AdjacencyMatrix,
    w: &Tensor,
    aggregation: Aggregation,
) -> Result<Tensor> {
    if h.rows() != adj.n() {
        return Err(Error::Dimension(format!(
            "{} node rows for a {}-node graph",
            h.rows(),
            adj.n()
        )));
    }
    let p = aggregation_matrix(adj, aggregation);
    Ok(p.matmul(&h.matmul_t(w)?)?.relu())
}

/// Dense model input for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    /// `n × input_dim` node features.
    pub x: Tensor,
    /// `n × n` aggregation matrix.
    pub p: Tensor,
}

impl GraphInput {
    pub fn new(g: &CausalGraphInstance, cfg: &ModelConfig) -> Result<Self> {
        if g.node_count() == 0 {
            return Err(Error::Dimension(format!("graph {} has no nodes", g.instance_id)));
        }
        if g.feature_len() != cfg.input_dim {
            return Err(Error::Dimension(format!(
                "graph {} has feature length {}, model expects {}",
                g.instance_id,
                g.feature_len(),
                cfg.input_dim
            )));
        }
        Ok(GraphInput {
            x: Tensor::from_rows(&g.node_features)?,
            p: aggregation_matrix(&g.adjacency, cfg.aggregation),
        })
    }
}

/// Evaluation-mode logits from an `n × hidden1` first-layer projection.
pub(crate) fn infer_from_projection(params: &SageParams, proj: &Tensor, p: &Tensor) -> Result<Tensor> {
    let h1 = p.matmul(proj)?.relu();
    let z = h1.matmul_t(params.w2())?;
    let h2 = p.matmul(&z)?.relu();
    let mut y = h2.row_mean()?;
    let layers = params.params.len() / 2 - 1;
    for (i, (w, b)) in params.head().enumerate() {
        y = y.matmul_t(w)?.add(b)?;
        if i + 1 < layers {
            y = y.relu();
        }
    }
    Ok(y)
}

/// Evaluation-mode logits as a `1 × classes` row.
pub fn infer(params: &SageParams, input: &GraphInput) -> Result<Tensor> {
    let proj = input.x.matmul_t(params.w1())?;
    infer_from_projection(params, &proj, &input.p)
}

/// Logits for one graph. Train mode applies dropout seeded by `cfg.seed`.
pub fn forward_graph(
    g: &CausalGraphInstance,
    params: &SageParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Vec<f64>> {
    let input = GraphInput::new(g, cfg)?;
    if mode == Mode::Eval || cfg.dropout == 0.0 {
        return Ok(infer(params, &input)?.into_data());
    }
    let mut tape = Tape::new(mode, cfg.seed);
    let x = tape.constant(input.x);
    let p = tape.constant(input.p);
    let w1 = tape.constant(params.w1().clone());
    let proj = tape.matmul_t(x, w1)?;
    let tail = TailVars::bind_cloned(&mut tape, params, false);
    let logits = tail.forward(&mut tape, proj, p, cfg.dropout)?;
    Ok(tape.value(logits).data().to_vec())
}

/// Tape handles for everything after the first projection.
pub(crate) struct TailVars {
    w2: Var,
    head: Vec<(Var, Var)>,
}

impl TailVars {
    pub(crate) fn bind_cloned(tape: &mut Tape, params: &SageParams, requires_grad: bool) -> Self {
        let w2 = tape.leaf(params.w2().clone(), requires_grad);
        let head = params
            .head()
            .map(|(w, b)| (tape.leaf(w.clone(), requires_grad), tape.leaf(b.clone(), requires_grad)))
            .collect();
        TailVars { w2, head }
    }

    /// Same arithmetic order as [`infer_from_projection`].
    pub(crate) fn forward(&self, tape: &mut Tape, proj: Var, p: Var, dropout: f64) -> Result<Var> {
        let agg = tape.matmul(p, proj)?;
        let h1 = tape.relu(agg);
        let z = tape.matmul_t(h1, self.w2)?;
        let agg2 = tape.matmul(p, z)?;
        let h2 = tape.relu(agg2);
        let mut y = tape.row_mean(h2)?;
        for (i, &(w, b)) in self.head.iter().enumerate() {
            let lin = tape.matmul_t(y, w)?;
            y = tape.add(lin, b)?;
            if i + 1 < self.head.len() {
                y = tape.relu(y);
                y = tape.dropout(y, dropout)?;
            }
        }
        Ok(y)
    }
}

/// Moves every parameter into `tape` as a gradient-tracked leaf.
pub(crate) struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub(crate) fn bind(tape: &mut Tape, params: &mut SageParams) -> Self {
        let vars = params
            .params
            .iter_mut()
            .map(|p| tape.param(std::mem::replace(&mut p.value, Tensor::zeros(0, 0))))
            .collect();
        BoundParams { vars }
    }

    pub(crate) fn w1(&self) -> Var {
        self.vars[0]
    }

    pub(crate) fn tail(&self) -> TailVars {
        TailVars {
            w2: self.vars[1],
            head: self.vars[2..].chunks(2).map(|c| (c[0], c[1])).collect(),
        }
    }

    /// Returns the values to `params`.
    pub(crate) fn unbind(self, tape: &mut Tape, params: &mut SageParams) {
        for (v, p) in self.vars.iter().zip(params.params.iter_mut()) {
            p.value = tape.take(*v);
        }
    }

    pub(crate) fn vars(&self) -> &[Var] {
        &self.vars
    }
}
