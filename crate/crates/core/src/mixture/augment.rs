use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Temporal repetition augmentation, applied to training inputs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub repeat_prob: f64,
    pub repeat_min: u32,
    pub repeat_max: u32,
    /// Cap on the length of any training input, in seconds.
    pub max_len_s: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            repeat_prob: 0.5,
            repeat_min: 1,
            repeat_max: 4,
            max_len_s: 10.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.repeat_prob) {
            return Err(Error::config("augment.repeat_prob", "must be in [0, 1]"));
        }
        if self.repeat_min < 1 || self.repeat_min > self.repeat_max {
            return Err(Error::config(
                "augment.repeat_min",
                "need 1 <= repeat_min <= repeat_max",
            ));
        }
        if !(self.max_len_s > 0.0) {
            return Err(Error::config("augment.max_len_s", "must be > 0"));
        }
        Ok(())
    }

    /// Disabled augmentation with the same length cap.
    pub fn disabled(&self) -> Self {
        Self {
            repeat_prob: 0.0,
            ..self.clone()
        }
    }
}

/// Number of copies: uniform on `[repeat_min, repeat_max]` with probability
/// `repeat_prob`, otherwise 1.
pub fn draw_repeat_count<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> u32 {
    if rng.gen_bool(cfg.repeat_prob) {
        rng.gen_range(cfg.repeat_min..=cfg.repeat_max)
    } else {
        1
    }
}

/// `n` back-to-back copies of `items`, truncated to `cap` elements.
pub fn repeat_capped<T: Clone>(items: &[T], n: u32, cap: usize) -> Vec<T> {
    items
        .iter()
        .cycle()
        .take((items.len() * n as usize).min(cap))
        .cloned()
        .collect()
}

/// Repeats the waveform a random number of times and caps it at `max_len_s`.
pub fn apply_repetition_aug<R: Rng + ?Sized>(
    clip: &AudioClip,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (AudioClip, u32) {
    let n = draw_repeat_count(cfg, rng);
    let cap = clip.samples_for(cfg.max_len_s);
    (
        AudioClip::new(repeat_capped(&clip.samples, n, cap), clip.sample_rate),
        n,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_probability_is_identity() {
        let cfg = AugmentConfig {
            repeat_prob: 0.0,
            ..Default::default()
        };
        let clip = AudioClip::new((0..100).map(|i| i as f32 / 100.0).collect(), 16000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (out, n) = apply_repetition_aug(&clip, &cfg, &mut rng);
            assert_eq!(n, 1);
            assert_eq!(out, clip);
        }
    }

    #[test]
    fn four_copies_of_three_seconds_hit_the_cap() {
        let cfg = AugmentConfig {
            repeat_prob: 1.0,
            repeat_min: 4,
            repeat_max: 4,
            max_len_s: 10.0,
        };
        let clip = AudioClip::new(vec![0.1; 3 * 16000], 16000);
        let (out, n) = apply_repetition_aug(&clip, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(n, 4);
        assert_eq!(out.len(), 10 * 16000);
    }

    #[test]
    fn repeat_preserves_order() {
        assert_eq!(repeat_capped(&[1, 2, 3], 2, 100), vec![1, 2, 3, 1, 2, 3]);
        assert_eq!(repeat_capped(&[1, 2, 3], 3, 4), vec![1, 2, 3, 1]);
    }

    #[test]
    fn validate_rejects_bad_ranges() {
        let bad = AugmentConfig {
            repeat_min: 3,
            repeat_max: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(AugmentConfig {
            repeat_prob: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
