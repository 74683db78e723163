//! Training-set synthesis: SNR-controlled mixtures under four conditions,
//! semantic blocklisting, repetition augmentation, and balanced dataset
//! assembly with per-record provenance.

mod augment;
mod blocklist;
mod dataset;
mod pool;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmenter::Segment;
use crate::Label;

pub use augment::{apply_repetition_aug, draw_repeat_count, repeat_capped, AugmentConfig};
pub use blocklist::Blocklist;
pub use dataset::{
    build_dataset, condition_histogram, read_manifest, record_rng, write_manifest, BuildOptions,
};
pub use pool::{read_pool_manifest, resolve, write_pool_manifest, PoolEntry, PooledClip, SourcePool};
pub use synth::{scale_for_snr, snr_db, snr_gain, synthesize_mixture, MixInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixCondition {
    SingleInterference,
    DualInterference,
    BackgroundNoise,
    InterferencePlusNoise,
}

impl MixCondition {
    pub const ALL: [MixCondition; 4] = [
        MixCondition::SingleInterference,
        MixCondition::DualInterference,
        MixCondition::BackgroundNoise,
        MixCondition::InterferencePlusNoise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MixCondition::SingleInterference => "single_interference",
            MixCondition::DualInterference => "dual_interference",
            MixCondition::BackgroundNoise => "background_noise",
            MixCondition::InterferencePlusNoise => "interference_plus_noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// Probabilities of the four conditions, in [`MixCondition::ALL`] order.
    pub condition_probabilities: [f64; 4],
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            snr_min_db: -10.0,
            snr_max_db: 15.0,
            condition_probabilities: [0.25; 4],
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_min_db <= self.snr_max_db) || !self.snr_min_db.is_finite() || !self.snr_max_db.is_finite() {
            return Err(Error::config("mix.snr_min_db", "need finite snr_min_db <= snr_max_db"));
        }
        let p = &self.condition_probabilities;
        if p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "mix.condition_probabilities",
                "must be non-negative and sum to 1",
            ));
        }
        Ok(())
    }

    /// Categorical draw over the four conditions.
    pub fn draw_condition<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> MixCondition {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (c, &p) in MixCondition::ALL.iter().zip(&self.condition_probabilities) {
            acc += p;
            if u < acc {
                return *c;
            }
        }
        // rounding leaves u just above the final cumulative sum
        *MixCondition::ALL
            .iter()
            .zip(&self.condition_probabilities)
            .rev()
            .find(|(_, &p)| p > 0.0)
            .map(|(c, _)| c)
            .unwrap_or(&MixCondition::SingleInterference)
    }
}

/// The target segment of a record. Sample positions are at the working rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSource {
    pub file: String,
    pub segment: Segment,
    pub class_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfererSource {
    pub file: String,
    /// Region of the source actually mixed in (after cropping).
    pub segment: Segment,
    pub class_label: String,
    pub applied_gain: f64,
    /// Start of the component within the mixture.
    pub placement_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub file: String,
    /// Start of the used region within the noise file.
    pub offset: usize,
    pub length_samples: usize,
    /// Start of the component within the mixture.
    pub placement_offset: usize,
    pub applied_gain: f64,
}

/// Provenance of one synthesized training example.
///
/// `snr_db` lists one value per additive component: interferers in order,
/// then the noise source if present. Every SNR is relative to `target_rms`,
/// the RMS of the preprocessed target before mixing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub id: String,
    pub label: Label,
    pub target_source: TargetSource,
    /// Gain from the raw target segment to the preprocessed target.
    pub target_gain: f64,
    pub target_rms: f64,
    pub interferer_sources: Vec<InterfererSource>,
    pub noise_source: Option<NoiseSource>,
    pub condition: Option<MixCondition>,
    pub snr_db: Vec<f64>,
    /// Gain applied to the summed waveform (level normalization and peak limit).
    pub output_gain: f64,
    pub peak_limited: bool,
    /// Repeat count when augmentation was baked into the stored waveform.
    pub augmentation: Option<u32>,
    pub duration_s: f64,
    /// Audio path relative to the manifest directory; absent in dry runs.
    pub output_path: Option<String>,
}

impl MixtureRecord {
    /// Checks the label/provenance invariants against `blocklist`.
    pub fn check(&self, blocklist: &Blocklist) -> Result<()> {
        let has_components = !self.interferer_sources.is_empty() || self.noise_source.is_some();
        match self.label {
            Label::Single if has_components || self.condition.is_some() => {
                return Err(Error::Format(format!("{}: single record with components", self.id)))
            }
            Label::Multi if !has_components || self.condition.is_none() => {
                return Err(Error::Format(format!("{}: multi record without components", self.id)))
            }
            _ => {}
        }
        let n_components = self.interferer_sources.len() + self.noise_source.is_some() as usize;
        if self.snr_db.len() != n_components {
            return Err(Error::Format(format!("{}: snr count mismatch", self.id)));
        }
        for i in &self.interferer_sources {
            if !blocklist.allows(&self.target_source.class_label, &i.class_label) {
                return Err(Error::Format(format!(
                    "{}: interferer class `{}` blocked for target `{}`",
                    self.id, i.class_label, self.target_source.class_label
                )));
            }
        }
        Ok(())
    }
}
