use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{infer, BoundParams, Checkpoint, GraphInput, ModelConfig, SageParams, TailVars};
use crate::autodiff::{adam_step, AdamState, Mode, Tape, Tensor};
use crate::causal::CausalGraphInstance;
use crate::error::{Error, Result};
use crate::waveform::{derive_seed, FaultClass};

pub const METRICS_HEADER: &str = "epoch,train_acc,test_acc,precision,recall,f1";

/// Accuracy plus macro-averaged precision, recall and F1.
///
/// Macro averages run over classes that occur in the truth or the
/// predictions. A class never predicted has precision 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension(format!(
                "{} labels against {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Dimension(format!("class index out of range 0..{classes}")));
            }
            confusion[t][p] += 1;
        }
        let total = truth.len() as f64;
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let (mut precision, mut recall, mut f1, mut present) = (0.0, 0.0, 0.0, 0usize);
        for c in 0..classes {
            let tp = confusion[c][c] as f64;
            let support: u64 = confusion[c].iter().sum();
            let predicted_c: u64 = confusion.iter().map(|row| row[c]).sum();
            if support == 0 && predicted_c == 0 {
                continue;
            }
            present += 1;
            let p = if predicted_c > 0 { tp / predicted_c as f64 } else { 0.0 };
            let r = if support > 0 { tp / support as f64 } else { 0.0 };
            precision += p;
            recall += r;
            f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let k = present as f64;
        Ok(Metrics {
            accuracy: correct as f64 / total,
            precision: precision / k,
            recall: recall / k,
            f1: f1 / k,
            confusion,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Metrics after one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train: Metrics,
    pub test: Metrics,
}

/// Scalar summary of one epoch, as stored in checkpoints and metric files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EpochRecord {
    /// Row matching [`METRICS_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.train_accuracy, self.test_accuracy, self.precision, self.recall, self.f1
        )
    }
}

impl From<&EpochMetrics> for EpochRecord {
    fn from(m: &EpochMetrics) -> Self {
        EpochRecord {
            epoch: m.epoch,
            train_loss: m.mean_loss,
            train_accuracy: m.train.accuracy,
            test_accuracy: m.test.accuracy,
            precision: m.test.precision,
            recall: m.test.recall,
            f1: m.test.f1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Per-class shuffled split. Each class contributes `round(count · test_split)`
/// instances to the test side, clamped so both sides get at least one.
pub fn stratified_split(labels: &[FaultClass], test_split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut present = 0;
    for class in FaultClass::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        present += 1;
        if members.len() < 2 {
            return Err(Error::Stratification {
                class: class.to_string(),
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64 * test_split).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    if present < 2 {
        return Err(Error::Contract(format!("training needs at least 2 classes, found {present}")));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class index (first maximum on ties).
pub fn predict(g: &CausalGraphInstance, params: &SageParams, cfg: &ModelConfig) -> Result<usize> {
    let input = GraphInput::new(g, cfg)?;
    Ok(argmax(infer(params, &input)?.data()))
}

fn metrics_on(params: &SageParams, inputs: &[GraphInput], labels: &[usize], subset: &[usize], classes: usize) -> Result<Metrics> {
    let predicted = subset
        .iter()
        .map(|&i| infer(params, &inputs[i]).map(|l| argmax(l.data())))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = subset.iter().map(|&i| labels[i]).collect();
    Metrics::from_predictions(&truth, &predicted, classes)
}

/// Forward and backward for one graph; gradients accumulate into `params`.
pub(crate) fn accumulate_gradients(
    params: &mut SageParams,
    input: &GraphInput,
    label: usize,
    cfg: &ModelConfig,
    dropout_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new(Mode::Train, dropout_seed);
    let x = tape.constant(input.x.clone());
    let p = tape.constant(input.p.clone());
    let bound = BoundParams::bind(&mut tape, params);
    let result = (|| {
        let proj = tape.matmul_t(x, bound.w1())?;
        let logits = bound.tail().forward(&mut tape, proj, p, cfg.dropout)?;
        let loss = tape.softmax_cross_entropy(logits, label)?;
        Ok::<_, Error>((loss, tape.backward(loss)?))
    })();
    let vars = bound.vars().to_vec();
    bound.unbind(&mut tape, params);
    let (loss, mut grads) = result?;
    for (v, param) in vars.into_iter().zip(params.parameters_mut()) {
        let g = grads
            .take(v)
            .ok_or_else(|| Error::Contract(format!("no gradient reached `{}`", param.name)))?;
        param.accumulate_grad(g)?;
    }
    Ok(tape.value(loss).item())
}

/// Loss and exact gradients for one graph in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub loss: f64,
    /// One tensor per entry of [`SageParams::parameters`], same order.
    pub params: Vec<Tensor>,
    /// Gradient with respect to the node feature matrix.
    pub features: Tensor,
}

/// Cross-entropy of `label` and its gradients, without touching `params`.
pub fn loss_gradients(params: &SageParams, input: &GraphInput, label: usize) -> Result<LossGradients> {
    let mut tape = Tape::new(Mode::Eval, 0);
    let x = tape.leaf(input.x.clone(), true);
    let p = tape.constant(input.p.clone());
    let w1 = tape.leaf(params.w1().clone(), true);
    let tail = TailVars::bind_cloned(&mut tape, params, true);
    let proj = tape.matmul_t(x, w1)?;
    let logits = tail.forward(&mut tape, proj, p, 0.0)?;
    let loss = tape.softmax_cross_entropy(logits, label)?;
    let mut grads = tape.backward(loss)?;
    let mut vars = vec![w1, tail.w2];
    for &(w, b) in &tail.head {
        vars.extend([w, b]);
    }
    let mut take = |v| {
        grads
            .take(v)
            .ok_or_else(|| Error::Contract("gradient missing from the backward pass".into()))
    };
    let features = take(x)?;
    let params = vars.into_iter().map(&mut take).collect::<Result<Vec<_>>>()?;
    Ok(LossGradients {
        loss: tape.value(loss).item(),
        params,
        features,
    })
}

fn check_labels(graphs: &[CausalGraphInstance], cfg: &ModelConfig) -> Result<Vec<usize>> {
    graphs
        .iter()
        .map(|g| {
            let c = g.label.index();
            if c >= cfg.classes {
                Err(Error::Contract(format!(
                    "label {} of {} is outside the model's {} classes",
                    g.label, g.instance_id, cfg.classes
                )))
            } else {
                Ok(c)
            }
        })
        .collect()
}

/// Stratified split, then per-epoch shuffled Adam updates on cross-entropy.
pub fn train(graphs: &[CausalGraphInstance], cfg: &ModelConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels = check_labels(graphs, cfg)?;
    let classes: Vec<FaultClass> = graphs.iter().map(|g| g.label).collect();
    let (train_idx, test_idx) = stratified_split(&classes, cfg.test_split, cfg.seed)?;
    let inputs = graphs
        .iter()
        .map(|g| GraphInput::new(g, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut params = SageParams::init(cfg)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                loss_sum += accumulate_gradients(&mut params, &inputs[i], labels[i], cfg, rng.next_u64())?;
            }
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f64;
                for p in params.parameters_mut() {
                    if let Some(g) = &mut p.grad {
                        g.data_mut().iter_mut().for_each(|v| *v *= inv);
                    }
                }
            }
            adam_step(params.parameters_mut(), &mut adam)?;
        }
        let record = EpochMetrics {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            train: metrics_on(&params, &inputs, &labels, &train_idx, cfg.classes)?,
            test: metrics_on(&params, &inputs, &labels, &test_idx, cfg.classes)?,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train acc {:.4} test acc {:.4} f1 {:.4}",
            record.mean_loss,
            record.train.accuracy,
            record.test.accuracy,
            record.test.f1
        );
        epochs.push(record);
    }
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        params,
        optimizer: adam,
        epoch: cfg.epochs,
        history: epochs.iter().map(EpochRecord::from).collect(),
    };
    Ok(TrainOutcome {
        checkpoint,
        epochs,
        train_indices: train_idx,
        test_indices: test_idx,
    })
}

/// Argmax predictions of `checkpoint` on `graphs`, scored against their labels.
pub fn evaluate(graphs: &[CausalGraphInstance], checkpoint: &Checkpoint, cfg: &ModelConfig) -> Result<Metrics> {
    checkpoint.check_compatible(cfg)?;
    if graphs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let labels = check_labels(graphs, cfg)?;
    let inputs = graphs
        .iter()
        .map(|g| GraphInput::new(g, cfg))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..graphs.len()).collect();
    metrics_on(&checkpoint.params, &inputs, &labels, &all, cfg.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{AdjacencyMatrix, TeMatrix};
    use crate::sage::tests::{random_graph, small_config};

    #[test]
    fn hand_computed_metrics() {
        let m = Metrics::from_predictions(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.f1, 0.5);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![1, 1]]);

        let perfect = Metrics::from_predictions(&[0, 3, 8, 3], &[0, 3, 8, 3], 9).unwrap();
        assert_eq!((perfect.accuracy, perfect.f1), (1.0, 1.0));

        // Class 2 never predicted: precision 0 for it.
        let m = Metrics::from_predictions(&[0, 2], &[0, 0], 3).unwrap();
        assert_eq!(m.precision, (0.5 + 0.0) / 2.0);
        assert_eq!(m.recall, (1.0 + 0.0) / 2.0);
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        assert!(matches!(Metrics::from_predictions(&[], &[], 9), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn accuracy_is_confusion_trace_over_total() {
        let truth = [0, 1, 2, 2, 1, 0, 0, 2];
        let pred = [0, 2, 2, 1, 1, 0, 1, 2];
        let m = Metrics::from_predictions(&truth, &pred, 3).unwrap();
        let trace: u64 = (0..3).map(|c| m.confusion[c][c]).sum();
        assert_eq!(m.total(), 8);
        assert_eq!(m.accuracy, trace as f64 / 8.0);
        for v in [m.precision, m.recall, m.f1] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<FaultClass> = FaultClass::ALL.iter().flat_map(|&c| std::iter::repeat_n(c, 10)).collect();
        let (train, test) = stratified_split(&labels, 0.2, 4).unwrap();
        assert_eq!((train.len(), test.len()), (72, 18));
        for c in FaultClass::ALL {
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..90).collect::<Vec<_>>());
        assert_eq!(stratified_split(&labels, 0.2, 4).unwrap(), (train, test.clone()));
        assert_ne!(stratified_split(&labels, 0.2, 5).unwrap().1, test);
    }

    #[test]
    fn singleton_class_cannot_be_stratified() {
        let labels = [FaultClass::AB, FaultClass::AB, FaultClass::CG];
        match stratified_split(&labels, 0.2, 0) {
            Err(Error::Stratification { class, count }) => assert_eq!((class.as_str(), count), ("CG", 1)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(stratified_split(&labels[..2], 0.2, 0), Err(Error::Contract(_))));
    }

    fn loss_of(params: &SageParams, input: &GraphInput, label: usize) -> f64 {
        let logits = infer(params, input).unwrap();
        let mut tape = Tape::default();
        let l = tape.constant(logits);
        let ce = tape.softmax_cross_entropy(l, label).unwrap();
        tape.value(ce).item()
    }

    #[test]
    fn one_adam_step_lowers_the_loss() {
        for seed in 0..5 {
            let mut cfg = small_config(16);
            cfg.seed = seed;
            let mut params = SageParams::init(&cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let g = random_graph(&mut rng, 6, 16, FaultClass::ABG);
            let input = GraphInput::new(&g, &cfg).unwrap();
            let label = g.label.index();
            let before = loss_of(&params, &input, label);
            let mut adam = AdamState::new(1e-5);
            let reported = accumulate_gradients(&mut params, &input, label, &cfg, 0).unwrap();
            assert_eq!(reported, before);
            adam_step(params.parameters_mut(), &mut adam).unwrap();
            let after = loss_of(&params, &input, label);
            assert!(after < before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn loss_gradients_match_the_training_pass() {
        let cfg = small_config(16);
        let mut params = SageParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 6, 16, FaultClass::CG);
        let input = GraphInput::new(&g, &cfg).unwrap();
        let lg = loss_gradients(&params, &input, 4).unwrap();
        let loss = accumulate_gradients(&mut params, &input, 4, &cfg, 0).unwrap();
        assert_eq!(lg.loss, loss);
        for (p, g) in params.parameters().iter().zip(&lg.params) {
            assert_eq!(p.grad.as_ref().unwrap(), g, "{}", p.name);
        }
        assert_eq!(lg.features.shape(), input.x.shape());
    }

    /// Two classes whose node features are constant and distinct.
    fn separable(per_class: usize, t: usize) -> Vec<CausalGraphInstance> {
        let mut out = Vec::new();
        for (label, level) in [(FaultClass::AB, 1.0), (FaultClass::ABG, -1.0)] {
            for i in 0..per_class {
                out.push(CausalGraphInstance {
                    instance_id: format!("{label}-{i}"),
                    label,
                    node_features: vec![vec![level; t]; 6],
                    adjacency: AdjacencyMatrix::from_edges(6, &[(0, 3), (1, 4)]).unwrap(),
                    normalized_te: TeMatrix::zeros(6),
                });
            }
        }
        out
    }

    #[test]
    fn separable_classes_are_learned() {
        let cfg = ModelConfig {
            classes: 2,
            lr: 1e-3,
            epochs: 100,
            ..small_config(8)
        };
        let out = train(&separable(5, 8), &cfg).unwrap();
        let last = out.epochs.last().unwrap();
        assert_eq!(last.train.accuracy, 1.0);
        assert_eq!(out.checkpoint.history.len(), 100);
    }

    #[test]
    fn same_seed_same_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let graphs: Vec<_> = FaultClass::ALL
            .iter()
            .flat_map(|&c| (0..3).map(|_| random_graph(&mut rng, 6, 10, c)).collect::<Vec<_>>())
            .collect();
        let cfg = ModelConfig {
            epochs: 4,
            lr: 1e-3,
            dropout: 0.3,
            ..small_config(10)
        };
        let a = train(&graphs, &cfg).unwrap();
        let b = train(&graphs, &cfg).unwrap();
        assert_eq!(a.checkpoint.history, b.checkpoint.history);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
        let metrics = evaluate(&graphs, &a.checkpoint, &cfg).unwrap();
        assert_eq!(metrics.total(), 27);
    }

    #[test]
    fn batches_average_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let graphs: Vec<_> = [FaultClass::AB, FaultClass::BC]
            .iter()
            .flat_map(|&c| (0..4).map(|_| random_graph(&mut rng, 6, 6, c)).collect::<Vec<_>>())
            .collect();
        let cfg = ModelConfig {
            epochs: 2,
            batch_size: 3,
            ..small_config(6)
        };
        let out = train(&graphs, &cfg).unwrap();
        // Six training graphs in batches of three: two steps per epoch.
        assert_eq!(out.checkpoint.optimizer.step, 4);
    }

    #[test]
    fn labels_outside_the_model_are_rejected() {
        let cfg = ModelConfig {
            classes: 2,
            ..small_config(8)
        };
        let mut graphs = separable(3, 8);
        graphs[0].label = FaultClass::CG;
        assert!(matches!(train(&graphs, &cfg), Err(Error::Contract(_))));
    }
}
