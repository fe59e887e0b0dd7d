//! Pipeline stages behind the `faultsage` command line: generate, discover,
//! train, eval, explain and report. Each stage reads its inputs from disk and
//! writes its outputs next to them, so any stage can be rerun on its own.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use faultsage::causal::GRAPH_FORMAT_VERSION;
use faultsage::explain::{explain_all, ExplanationRecord, RankHistogram};
use faultsage::sage::{self, stratified_split, EpochRecord, METRICS_HEADER};
use faultsage::waveform::{read_dataset, write_dataset, FORMAT_VERSION};
use faultsage::{
    discover, synth_dataset, CausalGraphInstance, Checkpoint, DatasetManifest, FaultClass, GraphRecord, Metrics,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Overrides, PipelineConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const REPORT_FILE: &str = "report.txt";
pub const EXPLANATIONS_DIR: &str = "explanations";
pub const HISTOGRAMS_DIR: &str = "histograms";

/// Tool and on-disk format versions, as printed by `--version`.
pub fn version_string() -> String {
    format!(
        "{} (dataset format {FORMAT_VERSION}, graph format {GRAPH_FORMAT_VERSION}, checkpoint format {})",
        env!("CARGO_PKG_VERSION"),
        sage::CHECKPOINT_VERSION
    )
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "{} not found; run `faultsage {stage}` first",
            path.display()
        );
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn graph_path(cfg: &PipelineConfig, instance_id: &str) -> PathBuf {
    cfg.paths.graphs_dir.join(format!("{instance_id}.json"))
}

fn explanation_path(cfg: &PipelineConfig, instance_id: &str) -> PathBuf {
    cfg.paths.reports_dir.join(EXPLANATIONS_DIR).join(format!("{instance_id}.json"))
}

pub fn histogram_path(cfg: &PipelineConfig, class: FaultClass) -> PathBuf {
    cfg.paths.reports_dir.join(HISTOGRAMS_DIR).join(format!("{class}.csv"))
}

/// Synthesizes the waveform dataset.
pub fn run_generate(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let dataset = synth_dataset(&cfg.dataset.synth, cfg.dataset.per_class)?;
    fs::create_dir_all(&cfg.paths.dataset_dir)
        .with_context(|| format!("creating {}", cfg.paths.dataset_dir.display()))?;
    write_dataset(&dataset, &cfg.paths.dataset_dir)?;
    log::info!(
        "generated {} instances in {}",
        dataset.instances.len(),
        cfg.paths.dataset_dir.display()
    );
    Ok(dataset.manifest)
}

fn load_dataset(cfg: &PipelineConfig) -> Result<(DatasetManifest, Vec<faultsage::WaveformInstance>)> {
    require(&cfg.paths.dataset_dir.join(faultsage::waveform::MANIFEST_FILE), "generate")?;
    Ok(read_dataset(&cfg.paths.dataset_dir)?)
}

/// Builds one causal graph per instance and writes it as JSON.
pub fn run_discover(cfg: &PipelineConfig) -> Result<Vec<CausalGraphInstance>> {
    let (_, instances) = load_dataset(cfg)?;
    let graphs = instances
        .par_iter()
        .map(|inst| discover(inst, &cfg.te).with_context(|| format!("discovering {}", inst.instance_id)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&cfg.paths.graphs_dir)
        .with_context(|| format!("creating {}", cfg.paths.graphs_dir.display()))?;
    for g in &graphs {
        write(&graph_path(cfg, &g.instance_id), GraphRecord::from_graph(g).to_json())?;
    }
    let edges: usize = graphs.iter().map(|g| g.adjacency.edge_count()).sum();
    log::info!(
        "discovered {} graphs ({:.2} edges on average)",
        graphs.len(),
        edges as f64 / graphs.len().max(1) as f64
    );
    Ok(graphs)
}

/// Graphs in manifest order, with node features recomputed from the dataset.
pub fn load_graphs(cfg: &PipelineConfig) -> Result<(DatasetManifest, Vec<CausalGraphInstance>)> {
    let (manifest, instances) = load_dataset(cfg)?;
    let graphs = instances
        .into_par_iter()
        .map(|inst| {
            let path = graph_path(cfg, &inst.instance_id);
            require(&path, "discover")?;
            Ok(GraphRecord::read(&path)?.into_graph(&inst)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, graphs))
}

fn load_checkpoint(cfg: &PipelineConfig) -> Result<Checkpoint> {
    require(&cfg.paths.checkpoint, "train")?;
    Ok(Checkpoint::load(&cfg.paths.checkpoint, &cfg.model)?)
}

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Trains the classifier, then writes the checkpoint and the metric history.
pub fn run_train(cfg: &PipelineConfig) -> Result<Vec<EpochRecord>> {
    let (_, graphs) = load_graphs(cfg)?;
    log::info!("training on {} graphs for {} epochs", graphs.len(), cfg.model.epochs);
    let outcome = sage::train(&graphs, &cfg.model)?;
    outcome.checkpoint.save(&cfg.paths.checkpoint)?;
    let history = outcome.checkpoint.history;
    write(&cfg.paths.reports_dir.join(METRICS_FILE), metrics_csv(&history))?;
    if let Some(last) = history.last() {
        log::info!(
            "final epoch: train acc {:.4}, test acc {:.4}, macro F1 {:.4}",
            last.train_accuracy,
            last.test_accuracy,
            last.f1
        );
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub instances: usize,
    pub metrics: Metrics,
}

/// Scores the checkpoint on the held-out split.
pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let (_, graphs) = load_graphs(cfg)?;
    let checkpoint = load_checkpoint(cfg)?;
    let labels: Vec<FaultClass> = graphs.iter().map(|g| g.label).collect();
    let (_, test) = stratified_split(&labels, cfg.model.test_split, cfg.model.seed)?;
    let held_out: Vec<CausalGraphInstance> = test.iter().map(|&i| graphs[i].clone()).collect();
    let metrics = sage::evaluate(&held_out, &checkpoint, &cfg.model)?;
    let report = EvalReport {
        split: "test".into(),
        instances: held_out.len(),
        metrics,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write(&cfg.paths.reports_dir.join(EVAL_FILE), json)?;
    log::info!(
        "test accuracy {:.4}, macro precision {:.4}, recall {:.4}, F1 {:.4}",
        report.metrics.accuracy,
        report.metrics.precision,
        report.metrics.recall,
        report.metrics.f1
    );
    Ok(report)
}

/// Explains every graph and aggregates rank histograms per class.
pub fn run_explain(cfg: &PipelineConfig) -> Result<(Vec<ExplanationRecord>, Vec<RankHistogram>)> {
    let (_, graphs) = load_graphs(cfg)?;
    let checkpoint = load_checkpoint(cfg)?;
    log::info!("explaining {} graphs", graphs.len());
    let records = explain_all(&graphs, &checkpoint.params, &cfg.model, &cfg.explain)?;
    for r in &records {
        write(&explanation_path(cfg, &r.instance_id), serde_json::to_string_pretty(r)? + "\n")?;
    }
    let mut histograms = Vec::new();
    for class in FaultClass::ALL {
        let of_class: Vec<ExplanationRecord> = records.iter().filter(|r| r.label == class).cloned().collect();
        if of_class.is_empty() {
            continue;
        }
        let h = RankHistogram::from_records(class, &of_class)?;
        write(&histogram_path(cfg, class), h.to_csv())?;
        histograms.push(h);
    }
    Ok((records, histograms))
}

fn read_histogram(path: &Path, class: FaultClass) -> Result<RankHistogram> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let n = header.split(',').count().saturating_sub(1);
    let mut h = RankHistogram::new(class, n);
    for (node, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default();
        if node >= n || name != h.nodes[node] {
            bail!("{}: unexpected row `{line}`", path.display());
        }
        for (rank, field) in fields.enumerate() {
            if rank >= n {
                bail!("{}: too many columns in `{line}`", path.display());
            }
            h.counts[node][rank] = field
                .trim()
                .parse()
                .with_context(|| format!("{}: bad count `{field}`", path.display()))?;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub eval: EvalReport,
    /// Class and its two most frequently top-ranked nodes.
    pub top_nodes: Vec<(FaultClass, Vec<String>)>,
    pub text: String,
}

/// Consolidates held-out metrics and the per-class top nodes.
pub fn run_report(cfg: &PipelineConfig) -> Result<Report> {
    let (manifest, _) = load_dataset(cfg)?;
    let eval_path = cfg.paths.reports_dir.join(EVAL_FILE);
    require(&eval_path, "eval")?;
    let eval: EvalReport = serde_json::from_str(
        &fs::read_to_string(&eval_path).with_context(|| format!("reading {}", eval_path.display()))?,
    )
    .with_context(|| format!("parsing {}", eval_path.display()))?;

    let mut top_nodes = Vec::new();
    for (&class, &count) in &manifest.per_class_count {
        if count == 0 {
            continue;
        }
        let path = histogram_path(cfg, class);
        require(&path, "explain")?;
        let h = read_histogram(&path, class)?;
        let names: Vec<String> = h.top_nodes(2).into_iter().map(|i| h.nodes[i].clone()).collect();
        top_nodes.push((class, names));
    }

    let m = &eval.metrics;
    let mut text = String::new();
    writeln!(text, "faultsage report").unwrap();
    writeln!(
        text,
        "dataset: {} instances, seed {}",
        manifest.entries.len(),
        manifest.seed
    )
    .unwrap();
    writeln!(text, "held-out {} instances: {}", eval.split, eval.instances).unwrap();
    writeln!(text, "accuracy   {:.4}", m.accuracy).unwrap();
    writeln!(text, "precision  {:.4}", m.precision).unwrap();
    writeln!(text, "recall     {:.4}", m.recall).unwrap();
    writeln!(text, "f1         {:.4}", m.f1).unwrap();
    writeln!(text).unwrap();
    writeln!(text, "class  top-1  top-2").unwrap();
    for (class, names) in &top_nodes {
        writeln!(text, "{:<6} {:<6} {}", class.to_string(), names[0], names.get(1).map_or("-", String::as_str)).unwrap();
    }
    write(&cfg.paths.reports_dir.join(REPORT_FILE), &text)?;
    Ok(Report { eval, top_nodes, text })
}

/// Runs every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<Report> {
    run_generate(cfg)?;
    run_discover(cfg)?;
    run_train(cfg)?;
    run_eval(cfg)?;
    run_explain(cfg)?;
    run_report(cfg)
}
