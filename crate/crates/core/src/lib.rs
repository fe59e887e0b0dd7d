//! Fault classification on three-phase waveforms through transfer-entropy
//! causal graphs and a GraphSAGE classifier, with node-level explanations.

pub mod autodiff;
pub mod causal;
pub mod error;
pub mod explain;
pub mod infodyn;
pub mod sage;
pub mod waveform;

pub use causal::{discover, AdjacencyMatrix, CausalGraphInstance, GraphRecord, TeMatrix};
pub use error::{Error, Result};
pub use explain::{ExplainConfig, ExplanationRecord, NodeScores, RankHistogram};
pub use infodyn::{EdgeRule, TeConfig};
pub use sage::{Checkpoint, Metrics, ModelConfig, SageParams};
pub use waveform::{
    synth_dataset, synth_instance, Channel, DatasetManifest, FaultClass, Phase, SynthParams,
    SyntheticDataset, WaveformInstance, CHANNEL_COUNT,
};
