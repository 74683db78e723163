//! Pipeline configuration: one JSON document with a section per stage.
//!
//! Unknown keys are rejected and every error names the offending field path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::NormalizeConfig;
use crate::classifier::ClassifierArch;
use crate::embeddings::FeaturizerConfig;
use crate::error::{Error, Result};
use crate::evaluation::FilterConfig;
use crate::mixture::{AugmentConfig, MixConfig};
use crate::segmenter::SegmenterConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Records to generate; must be even.
    pub n_examples: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_examples: 1000 }
    }
}

/// Input locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub pool: Option<String>,
    pub noise: Option<String>,
    pub blocklist: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub normalize: NormalizeConfig,
    pub segmenter: SegmenterConfig,
    pub mix: MixConfig,
    pub augment: AugmentConfig,
    pub synth: SynthConfig,
    pub featurizer: FeaturizerConfig,
    pub classifier: ClassifierArch,
    pub train: TrainConfig,
    pub filter: FilterConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.normalize.validate()?;
        self.segmenter.validate()?;
        self.mix.validate()?;
        self.augment.validate()?;
        if self.synth.n_examples % 2 != 0 || self.synth.n_examples == 0 {
            return Err(Error::config("synth.n_examples", "must be a positive even number"));
        }
        self.featurizer.validate()?;
        self.classifier.validate()?;
        self.train.validate()?;
        self.filter.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(if field == "." { "<root>".into() } else { field }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Training seed: the train section's own seed, else the global one.
    pub fn train_seed(&self) -> u64 {
        self.train.seed.unwrap_or(self.seed)
    }
}
