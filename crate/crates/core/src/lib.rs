//! Single-source sound event curation.
//!
//! The pipeline runs in four batch stages:
//!
//! ```text
//! clean clips -> synth (mixtures + manifest) -> featurize (embedding files)
//!             -> train (Bi-LSTM detector)    -> filter (clip/chunk metadata)
//! ```
//!
//! Each stage is a deterministic function of its inputs and a seed. The
//! [`embeddings`] module decouples the detector from the upstream audio
//! encoder: embeddings can be imported from files or computed with the
//! built-in log-mel featurizer.

pub mod audio;
pub mod classifier;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod mixture;
pub mod pipeline;
pub mod segmenter;
pub mod synthetic;
pub mod training;

use serde::{Deserialize, Serialize};

pub use audio::{AudioClip, NormalizeConfig};
pub use classifier::{ClassifierArch, ClassifierParams};
pub use config::PipelineConfig;
pub use embeddings::{EmbeddingSequence, FeaturizerConfig};
pub use error::{Error, Result};
pub use mixture::{MixCondition, MixtureRecord};
pub use segmenter::{Segment, SegmenterConfig};

/// Binary source-count label. `Single` is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Single,
    Multi,
}

impl Label {
    /// 1.0 for single-source, 0.0 for multi-source.
    pub fn target(self) -> f64 {
        match self {
            Label::Single => 1.0,
            Label::Multi => 0.0,
        }
    }

    pub fn from_probability(p: f64, threshold: f64) -> Label {
        if p >= threshold {
            Label::Single
        } else {
            Label::Multi
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Single => "single",
            Label::Multi => "multi",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" | "ss" | "1" => Ok(Label::Single),
            "multi" | "ms" | "0" => Ok(Label::Multi),
            other => Err(Error::Format(format!("unknown label `{other}`"))),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
