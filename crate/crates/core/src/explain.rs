//! Node attributions for trained SAGE classifiers.
//!
//! Two explainers score every node of a graph: Integrated Gradients on the
//! predicted-class logit and a GNNExplainer-style learned soft mask. Both
//! score vectors are min-max normalized, averaged, and ranked; rankings are
//! counted per class into a node × rank histogram.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Mode, Parameter, Tape, Tensor};
use crate::causal::CausalGraphInstance;
use crate::error::{Error, Result};
use crate::sage::{infer, infer_from_projection, GraphInput, ModelConfig, SageParams, TailVars};
use crate::waveform::{Channel, FaultClass, CHANNEL_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub ig_steps: usize,
    pub mask_epochs: usize,
    pub mask_lr: f64,
    pub lambda_sparsity: f64,
    pub lambda_entropy: f64,
    /// Both explainers are deterministic; the seed is recorded with the run.
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            ig_steps: 50,
            mask_epochs: 100,
            mask_lr: 0.01,
            lambda_sparsity: 0.005,
            lambda_entropy: 0.1,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::param("ig_steps", "must be at least 1"));
        }
        if !(self.mask_lr > 0.0 && self.mask_lr.is_finite()) {
            return Err(Error::param("mask_lr", "must be positive and finite"));
        }
        if !(self.lambda_sparsity >= 0.0 && self.lambda_sparsity.is_finite()) {
            return Err(Error::param("lambda_sparsity", "must be nonnegative"));
        }
        if !(self.lambda_entropy >= 0.0 && self.lambda_entropy.is_finite()) {
            return Err(Error::param("lambda_entropy", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    GnnExplainer,
    IntegratedGradients,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScores {
    pub source: ScoreSource,
    pub values: Vec<f64>,
}

impl NodeScores {
    pub fn new(source: ScoreSource, values: Vec<f64>) -> Self {
        NodeScores { source, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(s − min) / (max − min)`; a constant vector maps to all 0.5.
pub fn minmax_normalize(s: &NodeScores) -> NodeScores {
    let min = s.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let values = if !(span > 1e-12 * max.abs().max(min.abs())) {
        vec![0.5; s.values.len()]
    } else {
        s.values.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect()
    };
    NodeScores::new(s.source, values)
}

/// Elementwise mean of two normalized score vectors.
pub fn combine_scores(a: &NodeScores, b: &NodeScores) -> Result<NodeScores> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("combining {} scores with {}", a.len(), b.len())));
    }
    let values = a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect();
    Ok(NodeScores::new(ScoreSource::Combined, values))
}

/// Node indices by descending score; ties go to the lower index.
pub fn rank_nodes(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order
}

/// A differentiable scalar function of a tensor.
pub trait ScalarField {
    fn value(&self, x: &Tensor) -> Result<f64>;
    fn gradient(&self, x: &Tensor) -> Result<Tensor>;
}

/// Midpoint-rule path integral of the gradient from `baseline` to `x`, times `x − baseline`.
pub fn integrated_gradients(f: &impl ScalarField, x: &Tensor, baseline: &Tensor, steps: usize) -> Result<Tensor> {
    if x.shape() != baseline.shape() {
        return Err(Error::Dimension(format!(
            "input {:?} and baseline {:?}",
            x.shape(),
            baseline.shape()
        )));
    }
    if steps == 0 {
        return Err(Error::param("ig_steps", "must be at least 1"));
    }
    let (rows, cols) = x.shape();
    let mut mean = Tensor::zeros(rows, cols);
    for i in 0..steps {
        let alpha = (i as f64 + 0.5) / steps as f64;
        let data = baseline.data().iter().zip(x.data()).map(|(b, v)| b + alpha * (v - b)).collect();
        let g = f.gradient(&Tensor::new(rows, cols, data)?)?;
        for (m, gv) in mean.data_mut().iter_mut().zip(g.data()) {
            *m += gv;
        }
    }
    let inv = 1.0 / steps as f64;
    let data = mean
        .data()
        .iter()
        .zip(x.data().iter().zip(baseline.data()))
        .map(|(g, (v, b))| g * inv * (v - b))
        .collect();
    Tensor::new(rows, cols, data)
}

/// One class logit of a SAGE model as a function of the node features.
pub struct SageLogit<'a> {
    pub params: &'a SageParams,
    /// Aggregation matrix of the graph.
    pub p: Tensor,
    pub class: usize,
}

impl ScalarField for SageLogit<'_> {
    fn value(&self, x: &Tensor) -> Result<f64> {
        let proj = x.matmul_t(self.params.w1())?;
        Ok(infer_from_projection(self.params, &proj, &self.p)?.get(0, self.class))
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(Mode::Eval, 0);
        let xv = tape.param(x.clone());
        let w1 = tape.constant(self.params.w1().clone());
        let p = tape.constant(self.p.clone());
        let proj = tape.matmul_t(xv, w1)?;
        let logits = TailVars::bind_cloned(&mut tape, self.params, false).forward(&mut tape, proj, p, 0.0)?;
        let out = tape.pick(logits, 0, self.class)?;
        let mut grads = tape.backward(out)?;
        Ok(grads.take(xv).expect("input tracks gradients"))
    }
}

/// Integrated Gradients of one logit, with the endpoint values for completeness checks.
#[derive(Debug, Clone, PartialEq)]
pub struct IgAttribution {
    pub class: usize,
    /// `n × input_dim`
    pub attributions: Tensor,
    pub output: f64,
    pub baseline_output: f64,
}

impl IgAttribution {
    /// Sum over each node's row of `|A|`.
    pub fn node_scores(&self) -> NodeScores {
        let values = (0..self.attributions.rows())
            .map(|r| self.attributions.row(r).iter().map(|a| a.abs()).sum())
            .collect();
        NodeScores::new(ScoreSource::IntegratedGradients, values)
    }

    pub fn total(&self) -> f64 {
        self.attributions.sum()
    }
}

/// Integrated Gradients for a SAGE logit.
///
/// The first layer is linear in the features before its ReLU, so the path
/// integral is taken over the `n × hidden1` projection and mapped back to
/// feature space with a single product by `W1`. The result equals
/// [`integrated_gradients`] applied to [`SageLogit`].
pub fn sage_integrated_gradients(
    params: &SageParams,
    input: &GraphInput,
    class: usize,
    baseline: &Tensor,
    steps: usize,
) -> Result<IgAttribution> {
    if steps == 0 {
        return Err(Error::param("ig_steps", "must be at least 1"));
    }
    if baseline.shape() != input.x.shape() {
        return Err(Error::Dimension(format!(
            "input {:?} and baseline {:?}",
            input.x.shape(),
            baseline.shape()
        )));
    }
    let proj_x = input.x.matmul_t(params.w1())?;
    let proj_b = baseline.matmul_t(params.w1())?;
    let (n, h) = proj_x.shape();
    let mut mean = Tensor::zeros(n, h);
    for i in 0..steps {
        let alpha = (i as f64 + 0.5) / steps as f64;
        let data = proj_b.data().iter().zip(proj_x.data()).map(|(b, v)| b + alpha * (v - b)).collect();
        let mut tape = Tape::new(Mode::Eval, 0);
        let proj = tape.param(Tensor::new(n, h, data)?);
        let p = tape.constant(input.p.clone());
        let logits = TailVars::bind_cloned(&mut tape, params, false).forward(&mut tape, proj, p, 0.0)?;
        let out = tape.pick(logits, 0, class)?;
        let grads = tape.backward(out)?;
        for (m, g) in mean.data_mut().iter_mut().zip(grads.get(proj).expect("tracked").data()) {
            *m += g;
        }
    }
    let inv = 1.0 / steps as f64;
    mean.data_mut().iter_mut().for_each(|m| *m *= inv);
    let grad_x = mean.matmul(params.w1())?;
    let data = grad_x
        .data()
        .iter()
        .zip(input.x.data().iter().zip(baseline.data()))
        .map(|(g, (v, b))| g * (v - b))
        .collect();
    Ok(IgAttribution {
        class,
        attributions: Tensor::new(n, input.x.cols(), data)?,
        output: infer_from_projection(params, &proj_x, &input.p)?.get(0, class),
        baseline_output: infer_from_projection(params, &proj_b, &input.p)?.get(0, class),
    })
}

/// Learned masks and the objective trace of one GNNExplainer run.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskExplanation {
    /// Per-node feature mask in (0, 1).
    pub node_mask: Vec<f64>,
    /// `n × n`; entry `[v][u]` weights neighbor `u` in node `v`'s mean. Zero off the neighbor pattern.
    pub edge_mask: Tensor,
    /// Objective before the first update and after each update.
    pub objective: Vec<f64>,
}

impl MaskExplanation {
    pub fn node_scores(&self) -> NodeScores {
        NodeScores::new(ScoreSource::GnnExplainer, self.node_mask.clone())
    }
}

/// Neighbor pattern scaled by `1 / (1 + |N(v)|)` and the matching diagonal.
fn split_aggregation(p: &Tensor) -> (Tensor, Tensor, Tensor) {
    let n = p.rows();
    let mut diag = Tensor::zeros(n, n);
    let mut neighbors = Tensor::zeros(n, n);
    let mut pattern = Tensor::zeros(n, n);
    for v in 0..n {
        for u in 0..n {
            let w = p.get(v, u);
            if u == v {
                diag.set(v, v, w);
            } else if w != 0.0 {
                neighbors.set(v, u, w);
                pattern.set(v, u, 1.0);
            }
        }
    }
    (diag, neighbors, pattern)
}

/// Learns a node feature mask and an edge mask that preserve the prediction
/// `target` under sparsity and entropy penalties.
pub fn gnn_explainer(
    params: &SageParams,
    input: &GraphInput,
    target: usize,
    cfg: &ExplainConfig,
) -> Result<MaskExplanation> {
    cfg.validate()?;
    let n = input.x.rows();
    let proj_x = input.x.matmul_t(params.w1())?;
    let (diag, neighbors, pattern) = split_aggregation(&input.p);
    let mut masks = vec![
        Parameter::new("node_mask", Tensor::zeros(n, 1)),
        Parameter::new("edge_mask", Tensor::zeros(n, n)),
    ];
    let mut adam = AdamState::new(cfg.mask_lr);
    let mut objective = Vec::with_capacity(cfg.mask_epochs + 1);

    for epoch in 0..=cfg.mask_epochs {
        let mut tape = Tape::new(Mode::Eval, 0);
        let node_logits = tape.param(masks[0].value.clone());
        let edge_logits = tape.param(masks[1].value.clone());
        let node_mask = tape.sigmoid(node_logits);
        let edge_sig = tape.sigmoid(edge_logits);

        let proj_c = tape.constant(proj_x.clone());
        let proj = tape.scale_rows(proj_c, node_mask)?;
        let neigh = tape.constant(neighbors.clone());
        let weighted = tape.mul(edge_sig, neigh)?;
        let d = tape.constant(diag.clone());
        let p = tape.add(d, weighted)?;
        let tail = TailVars::bind_cloned(&mut tape, params, false);
        let logits = tail.forward(&mut tape, proj, p, 0.0)?;
        let ce = tape.softmax_cross_entropy(logits, target)?;

        let pat = tape.constant(pattern.clone());
        let edge_mask = tape.mul(edge_sig, pat)?;
        let node_sum = tape.sum(node_mask);
        let edge_sum = tape.sum(edge_mask);
        let mass = tape.add(node_sum, edge_sum)?;
        let sparsity = tape.scale(mass, cfg.lambda_sparsity);

        let node_entropy = element_entropy(&mut tape, node_mask)?;
        let node_entropy = tape.sum(node_entropy);
        let edge_entropy = element_entropy(&mut tape, edge_sig)?;
        let edge_entropy = tape.mul(edge_entropy, pat)?;
        let edge_entropy = tape.sum(edge_entropy);
        let entropy = tape.add(node_entropy, edge_entropy)?;
        let entropy = tape.scale(entropy, cfg.lambda_entropy);

        let reg = tape.add(sparsity, entropy)?;
        let loss = tape.add(ce, reg)?;
        objective.push(tape.value(loss).item());
        if epoch == cfg.mask_epochs {
            break;
        }
        let mut grads = tape.backward(loss)?;
        masks[0].grad = grads.take(node_logits);
        masks[1].grad = grads.take(edge_logits);
        adam_step(&mut masks, &mut adam)?;
    }

    let node_mask = masks[0].value.data().iter().map(|&l| crate::autodiff::sigmoid(l)).collect();
    let mut edge_mask = masks[1].value.map(crate::autodiff::sigmoid);
    for (e, pat) in edge_mask.data_mut().iter_mut().zip(pattern.data()) {
        *e *= pat;
    }
    Ok(MaskExplanation {
        node_mask,
        edge_mask,
        objective,
    })
}

/// `−(m ln m + (1 − m) ln(1 − m))`, elementwise.
fn element_entropy(tape: &mut Tape, m: crate::autodiff::Var) -> Result<crate::autodiff::Var> {
    let ln_m = tape.ln(m)?;
    let a = tape.mul(m, ln_m)?;
    let neg = tape.scale(m, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let ln_1m = tape.ln(one_minus)?;
    let b = tape.mul(one_minus, ln_1m)?;
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, -1.0))
}

/// Display names of graph nodes: channel labels for six-node graphs.
pub fn node_names(n: usize) -> Vec<String> {
    if n == CHANNEL_COUNT {
        Channel::ALL.iter().map(|c| c.label().to_string()).collect()
    } else {
        (0..n).map(|i| format!("node{i}")).collect()
    }
}

/// Per-graph explanation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub instance_id: String,
    pub label: FaultClass,
    pub predicted: FaultClass,
    pub nodes: Vec<String>,
    pub ig_raw: Vec<f64>,
    pub gnn_raw: Vec<f64>,
    pub ig_normalized: Vec<f64>,
    pub gnn_normalized: Vec<f64>,
    pub combined: Vec<f64>,
    pub ranking: Vec<usize>,
}

/// Runs both explainers on one graph against the model's own prediction.
pub fn explain_graph(
    g: &CausalGraphInstance,
    params: &SageParams,
    model: &ModelConfig,
    cfg: &ExplainConfig,
) -> Result<ExplanationRecord> {
    cfg.validate()?;
    let input = GraphInput::new(g, model)?;
    let logits = infer(params, &input)?;
    let predicted = rank_nodes(logits.data())[0];
    let baseline = Tensor::zeros(input.x.rows(), input.x.cols());
    let ig = sage_integrated_gradients(params, &input, predicted, &baseline, cfg.ig_steps)?.node_scores();
    let gnn = gnn_explainer(params, &input, predicted, cfg)?.node_scores();
    let ig_n = minmax_normalize(&ig);
    let gnn_n = minmax_normalize(&gnn);
    let combined = combine_scores(&gnn_n, &ig_n)?;
    Ok(ExplanationRecord {
        instance_id: g.instance_id.clone(),
        label: g.label,
        predicted: FaultClass::from_index(predicted)
            .ok_or_else(|| Error::Contract(format!("predicted class index {predicted} has no name")))?,
        nodes: node_names(g.node_count()),
        ranking: rank_nodes(&combined.values),
        ig_raw: ig.values,
        gnn_raw: gnn.values,
        ig_normalized: ig_n.values,
        gnn_normalized: gnn_n.values,
        combined: combined.values,
    })
}

/// Explains every graph in parallel, preserving input order.
pub fn explain_all(
    graphs: &[CausalGraphInstance],
    params: &SageParams,
    model: &ModelConfig,
    cfg: &ExplainConfig,
) -> Result<Vec<ExplanationRecord>> {
    graphs.par_iter().map(|g| explain_graph(g, params, model, cfg)).collect()
}

/// How often each node lands at each rank, over one class's graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub class: FaultClass,
    pub nodes: Vec<String>,
    /// `counts[node][rank]`
    pub counts: Vec<Vec<u64>>,
}

impl RankHistogram {
    pub fn new(class: FaultClass, n: usize) -> Self {
        RankHistogram {
            class,
            nodes: node_names(n),
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn add_ranking(&mut self, ranking: &[usize]) -> Result<()> {
        let n = self.counts.len();
        let mut seen = vec![false; n];
        if ranking.len() != n || ranking.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Contract(format!("{ranking:?} is not a ranking of {n} nodes")));
        }
        for (rank, &node) in ranking.iter().enumerate() {
            self.counts[node][rank] += 1;
        }
        Ok(())
    }

    pub fn from_records(class: FaultClass, records: &[ExplanationRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Contract(format!("no graphs to aggregate for class {class}")))?;
        let mut h = RankHistogram::new(class, first.ranking.len());
        for r in records {
            if r.label != class {
                return Err(Error::Contract(format!(
                    "graph {} has label {}, expected {class}",
                    r.instance_id, r.label
                )));
            }
            h.add_ranking(&r.ranking)?;
        }
        Ok(h)
    }

    pub fn graph_count(&self) -> u64 {
        self.counts.iter().map(|row| row[0]).sum()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let n = self.counts.len();
        (0..n).map(|r| self.counts.iter().map(|row| row[r]).sum()).collect()
    }

    /// Nodes by how often they ranked first, then second, and so on.
    pub fn top_nodes(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.counts.len()).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    }

    /// `node,rank0,…` header, then one row per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node");
        for r in 0..self.counts.len() {
            write!(out, ",rank{r}").unwrap();
        }
        out.push('\n');
        for (name, row) in self.nodes.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Explains every graph of one class and counts the resulting ranks.
pub fn aggregate_rank_histogram(
    graphs: &[CausalGraphInstance],
    params: &SageParams,
    model: &ModelConfig,
    cfg: &ExplainConfig,
) -> Result<RankHistogram> {
    let class = graphs
        .first()
        .ok_or_else(|| Error::Contract("no graphs to aggregate".into()))?
        .label;
    let records = explain_all(graphs, params, model, cfg)?;
    RankHistogram::from_records(class, &records)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::causal::{AdjacencyMatrix, TeMatrix};
    use crate::sage::tests::{random_graph, small_config};

    fn scores(v: &[f64]) -> NodeScores {
        NodeScores::new(ScoreSource::IntegratedGradients, v.to_vec())
    }

    #[test]
    fn minmax_hand_cases() {
        let n = minmax_normalize(&scores(&[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]));
        let expected = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (a, b) in n.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(minmax_normalize(&scores(&[3.0; 6])).values, vec![0.5; 6]);
        assert_eq!(minmax_normalize(&scores(&[0.0; 6])).values, vec![0.5; 6]);
        assert_eq!(n.source, ScoreSource::IntegratedGradients);
    }

    #[test]
    fn combine_hand_cases() {
        let c = combine_scores(&scores(&[0.2, 0.8]), &scores(&[0.4, 0.6])).unwrap();
        assert!((c.values[0] - 0.3).abs() < 1e-15 && (c.values[1] - 0.7).abs() < 1e-15);
        assert_eq!(c.source, ScoreSource::Combined);
        let c = combine_scores(&scores(&[1.0, 0.0, 0.0]), &scores(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(c.values, vec![0.5, 0.5, 0.0]);
        let a = scores(&[0.1, 0.9, 0.4]);
        assert_eq!(combine_scores(&a, &a).unwrap().values, a.values);
        assert!(matches!(combine_scores(&a, &scores(&[1.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn ranking_tie_rule() {
        assert_eq!(rank_nodes(&[0.9, 0.1, 0.5, 0.5, 0.2, 0.95]), vec![5, 0, 2, 3, 4, 1]);
        assert_eq!(rank_nodes(&[0.3; 6]), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(rank_nodes(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]), vec![0, 1, 2, 3, 4, 5]);
    }

    struct Linear;

    impl ScalarField for Linear {
        fn value(&self, x: &Tensor) -> Result<f64> {
            Ok(2.0 * x.data()[0] + 3.0 * x.data()[1])
        }
        fn gradient(&self, _: &Tensor) -> Result<Tensor> {
            Ok(Tensor::row_vector(vec![2.0, 3.0]))
        }
    }

    #[test]
    fn linear_model_attributions_are_exact() {
        let x = Tensor::row_vector(vec![1.0, 1.0]);
        let b = Tensor::zeros(1, 2);
        for steps in [1, 7, 50] {
            let a = integrated_gradients(&Linear, &x, &b, steps).unwrap();
            assert_eq!(a.data(), &[2.0, 3.0]);
        }
        assert!(integrated_gradients(&Linear, &x, &b, 0).is_err());
    }

    fn trained_like(seed: u64, input_dim: usize) -> (SageParams, ModelConfig) {
        let mut cfg = small_config(input_dim);
        cfg.seed = seed;
        let mut params = SageParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, b) in params.head_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        (params, cfg)
    }

    #[test]
    fn zero_path_gives_zero_scores() {
        let (params, cfg) = trained_like(1, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = random_graph(&mut rng, 6, 10, FaultClass::AG);
        g.node_features = vec![vec![0.0; 10]; 6];
        let input = GraphInput::new(&g, &cfg).unwrap();
        let ig = sage_integrated_gradients(&params, &input, 3, &Tensor::zeros(6, 10), 20).unwrap();
        assert_eq!(ig.node_scores().values, vec![0.0; 6]);
    }

    #[test]
    fn fast_path_matches_generic_path_integral() {
        let (params, cfg) = trained_like(3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(&mut rng, 6, 12, FaultClass::BCG);
        let input = GraphInput::new(&g, &cfg).unwrap();
        let baseline = Tensor::zeros(6, 12);
        let fast = sage_integrated_gradients(&params, &input, 4, &baseline, 30).unwrap();
        let f = SageLogit {
            params: &params,
            p: input.p.clone(),
            class: 4,
        };
        let slow = integrated_gradients(&f, &input.x, &baseline, 30).unwrap();
        for (a, b) in fast.attributions.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
        assert!((fast.output - f.value(&input.x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn completeness_at_two_hundred_steps_on_a_trained_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let graphs: Vec<_> = FaultClass::ALL
            .iter()
            .flat_map(|&c| (0..3).map(|_| random_graph(&mut rng, 6, 16, c)).collect::<Vec<_>>())
            .collect();
        let cfg = crate::sage::ModelConfig {
            epochs: 30,
            lr: 1e-2,
            ..small_config(16)
        };
        let params = crate::sage::train(&graphs, &cfg).unwrap().checkpoint.params;
        for g in &graphs[..9] {
            let input = GraphInput::new(g, &cfg).unwrap();
            let class = rank_nodes(infer(&params, &input).unwrap().data())[0];
            let ig = sage_integrated_gradients(&params, &input, class, &Tensor::zeros(6, 16), 200).unwrap();
            let delta = ig.output - ig.baseline_output;
            assert!(
                (ig.total() - delta).abs() <= 0.01 * delta.abs(),
                "{}: sum {} delta {delta}",
                g.instance_id,
                ig.total()
            );
        }
    }

    /// Only node 0 carries features and no edges mix nodes, so the pooled
    /// embedding depends on node 0 alone.
    fn node_zero_only(t: usize) -> CausalGraphInstance {
        let mut feats = vec![vec![0.0; t]; 6];
        feats[0] = (0..t).map(|i| (i as f64 * 0.7).sin() + 0.5).collect();
        CausalGraphInstance {
            instance_id: "n0".into(),
            label: FaultClass::AG,
            node_features: feats,
            adjacency: AdjacencyMatrix::empty(6),
            normalized_te: TeMatrix::zeros(6),
        }
    }

    fn softmax_prob(logits: &[f64], c: usize) -> f64 {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        (logits[c] - m).exp() / z
    }

    #[test]
    fn node_zero_model_ranks_node_zero_first() {
        let cfg = small_config(10);
        let params = SageParams::init(&cfg).unwrap();
        let g = node_zero_only(10);
        let input = GraphInput::new(&g, &cfg).unwrap();
        let logits = infer(&params, &input).unwrap();
        let target = rank_nodes(logits.data())[0];

        // Occlusion oracle: drop each node and measure the change in the predicted probability.
        let base = softmax_prob(logits.data(), target);
        let occlusion: Vec<f64> = (0..6)
            .map(|i| {
                let mut h = g.clone();
                h.node_features[i] = vec![0.0; 10];
                let l = infer(&params, &GraphInput::new(&h, &cfg).unwrap()).unwrap();
                (base - softmax_prob(l.data(), target)).abs()
            })
            .collect();
        assert_eq!(rank_nodes(&occlusion)[0], 0);

        let ex = gnn_explainer(&params, &input, target, &ExplainConfig::default()).unwrap();
        assert_eq!(rank_nodes(&ex.node_mask)[0], 0, "{:?}", ex.node_mask);
        assert!(ex.node_mask.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn mask_objective_does_not_increase() {
        let (params, cfg) = trained_like(5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            let g = random_graph(&mut rng, 6, 10, FaultClass::BG);
            let input = GraphInput::new(&g, &cfg).unwrap();
            let ex = gnn_explainer(&params, &input, 2, &ExplainConfig::default()).unwrap();
            assert_eq!(ex.objective.len(), 101);
            assert!(ex.objective.last().unwrap() <= ex.objective.first().unwrap());
            let edge_count = g.adjacency.edge_count();
            let masked = ex.edge_mask.data().iter().filter(|&&v| v > 0.0).count();
            assert_eq!(masked, edge_count);
        }
    }

    #[test]
    fn constant_model_gives_equal_node_scores() {
        let cfg = small_config(10);
        let mut params = SageParams::init(&cfg).unwrap();
        let (w, b) = params.head_mut().last().unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_graph(&mut rng, 6, 10, FaultClass::CG);
        let input = GraphInput::new(&g, &cfg).unwrap();
        let ex = gnn_explainer(&params, &input, 8, &ExplainConfig::default()).unwrap();
        let first = ex.node_mask[0];
        assert!(ex.node_mask.iter().all(|m| (m - first).abs() < 1e-6), "{:?}", ex.node_mask);
        assert!(first < 0.5);
    }

    #[test]
    fn record_and_histogram_integrity() {
        let (params, cfg) = trained_like(7, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let graphs: Vec<_> = (0..5).map(|_| random_graph(&mut rng, 6, 10, FaultClass::ABG)).collect();
        let ecfg = ExplainConfig {
            mask_epochs: 20,
            ig_steps: 10,
            ..ExplainConfig::default()
        };
        let records = explain_all(&graphs, &params, &cfg, &ecfg).unwrap();
        for r in &records {
            assert!(r.combined.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(r.nodes[0], "V_A");
            let mut sorted = r.ranking.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        }
        assert_eq!(records, explain_all(&graphs, &params, &cfg, &ecfg).unwrap());
        let h = aggregate_rank_histogram(&graphs, &params, &cfg, &ecfg).unwrap();
        assert_eq!(h, RankHistogram::from_records(FaultClass::ABG, &records).unwrap());
        assert_eq!(h.column_sums(), vec![5; 6]);
        assert!(h.counts.iter().all(|row| row.iter().sum::<u64>() == 5));
        let csv = h.to_csv();
        assert!(csv.starts_with("node,rank0,rank1,rank2,rank3,rank4,rank5\nV_A,"));
        assert_eq!(csv.lines().count(), 7);
        assert!(RankHistogram::from_records(FaultClass::AG, &records).is_err());
    }

    #[test]
    fn histogram_rejects_non_permutations() {
        let mut h = RankHistogram::new(FaultClass::AB, 3);
        assert!(h.add_ranking(&[0, 0, 1]).is_err());
        assert!(h.add_ranking(&[0, 1]).is_err());
        h.add_ranking(&[2, 0, 1]).unwrap();
        assert_eq!(h.top_nodes(1), vec![2]);
    }

    #[test]
    fn config_validation() {
        assert!(ExplainConfig::default().validate().is_ok());
        let bad = ExplainConfig {
            ig_steps: 0,
            ..ExplainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Param { field: "ig_steps", .. })));
        let bad = ExplainConfig {
            lambda_entropy: -1.0,
            ..ExplainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Param { field: "lambda_entropy", .. })));
    }

    proptest! {
        #[test]
        fn ranking_is_scale_invariant(
            raw in proptest::collection::vec(0.0f64..100.0, 6),
            factor in 1e-3f64..1e3,
        ) {
            let s = scores(&raw);
            let scaled = scores(&raw.iter().map(|v| v * factor).collect::<Vec<_>>());
            let a = minmax_normalize(&s);
            let b = minmax_normalize(&scaled);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(rank_nodes(&a.values), rank_nodes(&b.values));
        }

        #[test]
        fn normalized_and_combined_lie_in_unit_interval(
            a in proptest::collection::vec(-50.0f64..50.0, 6),
            b in proptest::collection::vec(-50.0f64..50.0, 6),
        ) {
            let na = minmax_normalize(&scores(&a));
            let nb = minmax_normalize(&scores(&b));
            let c = combine_scores(&na, &nb).unwrap();
            prop_assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let lo = na.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = na.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((lo == 0.0 && hi == 1.0) || na.values.iter().all(|&v| v == 0.5));
        }
    }
}
