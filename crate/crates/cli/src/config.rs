use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use faultsage::explain::ExplainConfig;
use faultsage::{ModelConfig, SynthParams, TeConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub per_class: usize,
    pub synth: SynthParams,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            per_class: 100,
            synth: SynthParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub graphs_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset_dir: "artifacts/dataset".into(),
            graphs_dir: "artifacts/graphs".into(),
            checkpoint: "artifacts/model.ckpt".into(),
            reports_dir: "artifacts/reports".into(),
        }
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.dataset_dir,
            &mut self.graphs_dir,
            &mut self.checkpoint,
            &mut self.reports_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Every knob of the pipeline. The master `seed` replaces the per-section
/// seeds, and the model's `input_dim` always follows the dataset's
/// `sample_count`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub te: TeConfig,
    pub model: ModelConfig,
    pub explain: ExplainConfig,
    pub paths: Paths,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub threshold: Option<f64>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).context("invalid pipeline config")?;
        Ok(cfg)
    }

    /// Parses `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = PipelineConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.paths.rebase(base);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(epochs) = o.epochs {
            self.model.epochs = epochs;
        }
        if let Some(threshold) = o.threshold {
            self.te.threshold = threshold;
        }
    }

    /// Propagates the master seed and input length, then validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.dataset.synth.seed = self.seed;
        self.model.seed = self.seed;
        self.explain.seed = self.seed;
        self.model.input_dim = self.dataset.synth.sample_count;
        if self.dataset.per_class == 0 {
            bail!("invalid parameter `dataset.per_class`: must be at least 1");
        }
        self.dataset.synth.validate().context("in [dataset.synth]")?;
        self.te.validate().context("in [te]")?;
        self.model.validate().context("in [model]")?;
        self.explain.validate().context("in [explain]")?;
        if self.model.classes != faultsage::FaultClass::COUNT {
            bail!(
                "invalid parameter `model.classes`: the dataset has {} classes",
                faultsage::FaultClass::COUNT
            );
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
