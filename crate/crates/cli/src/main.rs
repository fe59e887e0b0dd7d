use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use faultsage_cli::{
    run_all, run_discover, run_eval, run_explain, run_generate, run_report, run_train, version_string, Overrides,
    PipelineConfig,
};

/// Transfer-entropy causal graphs and GraphSAGE fault classification.
///
/// Log verbosity follows FAULTSAGE_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "faultsage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Master seed, replacing the one in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Normalized transfer-entropy edge threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the labeled waveform dataset.
    Generate(Common),
    /// Build a causal graph for every instance.
    Discover(Common),
    /// Train the classifier and record per-epoch metrics.
    Train(Common),
    /// Score the checkpoint on the held-out split.
    Eval(Common),
    /// Explain every graph and aggregate per-class rank histograms.
    Explain(Common),
    /// Summarize metrics and the top nodes per class.
    Report(Common),
    /// Run every stage in order.
    All(Common),
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    cfg.apply(Overrides {
        seed: common.seed,
        epochs: common.epochs,
        threshold: common.threshold,
    });
    cfg.resolve()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let m = run_generate(&load(&c)?)?;
            println!("generated {} instances", m.entries.len());
        }
        Command::Discover(c) => {
            let graphs = run_discover(&load(&c)?)?;
            println!("wrote {} graphs", graphs.len());
        }
        Command::Train(c) => {
            let history = run_train(&load(&c)?)?;
            if let Some(last) = history.last() {
                println!(
                    "epoch {}: train acc {:.4}, test acc {:.4}, macro F1 {:.4}",
                    last.epoch, last.train_accuracy, last.test_accuracy, last.f1
                );
            }
        }
        Command::Eval(c) => {
            let r = run_eval(&load(&c)?)?;
            let m = &r.metrics;
            println!(
                "{} instances: accuracy {:.4}, precision {:.4}, recall {:.4}, F1 {:.4}",
                r.instances, m.accuracy, m.precision, m.recall, m.f1
            );
        }
        Command::Explain(c) => {
            let (records, histograms) = run_explain(&load(&c)?)?;
            println!("explained {} graphs into {} class histograms", records.len(), histograms.len());
        }
        Command::Report(c) => print!("{}", run_report(&load(&c)?)?.text),
        Command::All(c) => print!("{}", run_all(&load(&c)?)?.text),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FAULTSAGE_LOG", "info")).init();
    let matches = Cli::command().version(version_string()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
