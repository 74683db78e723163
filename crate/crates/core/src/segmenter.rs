//! Sliding-window energy analysis and maximum-energy target selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub window_min_s: f64,
    pub window_max_s: f64,
    pub top_k: usize,
    /// Hop as a fraction of the drawn window length.
    pub hop_fraction: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            window_min_s: 1.0,
            window_max_s: 10.0,
            top_k: 5,
            hop_fraction: 0.5,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_min_s > 0.0 && self.window_min_s < self.window_max_s) {
            return Err(Error::config(
                "segmenter.window_min_s",
                "need 0 < window_min_s < window_max_s",
            ));
        }
        if self.top_k < 1 {
            return Err(Error::config("segmenter.top_k", "must be >= 1"));
        }
        if !(self.hop_fraction > 0.0 && self.hop_fraction <= 1.0) {
            return Err(Error::config("segmenter.hop_fraction", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// A contiguous region of a clip and its energy (sum of squared amplitudes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_sample: usize,
    pub length_samples: usize,
    pub energy: f64,
}

impl Segment {
    pub fn end_sample(&self) -> usize {
        self.start_sample + self.length_samples
    }

    pub fn of(clip: &AudioClip, start_sample: usize, length_samples: usize) -> Segment {
        Segment {
            start_sample,
            length_samples,
            energy: energy(&clip.samples[start_sample..start_sample + length_samples]),
        }
    }
}

pub fn energy(samples: &[f32]) -> f64 {
    samples.iter().map(|&x| (x as f64) * (x as f64)).sum()
}

/// `(start, length)` of every analysis window over `len` samples.
///
/// Windows sit at multiples of `hop`; when the last full window stops short of
/// the end, one more window is placed flush with the end. A signal shorter than
/// one window yields a single window covering all of it.
pub fn window_bounds(len: usize, window: usize, hop: usize) -> Vec<(usize, usize)> {
    let window = window.max(1);
    let hop = hop.max(1);
    if len <= window {
        return vec![(0, len)];
    }
    let mut out: Vec<(usize, usize)> = (0..)
        .map(|k| k * hop)
        .take_while(|&s| s + window <= len)
        .map(|s| (s, window))
        .collect();
    let last_end = out.last().map(|&(s, w)| s + w).unwrap_or(0);
    if last_end < len {
        out.push((len - window, window));
    }
    out
}

/// Energies of sliding windows of `window_len_s` seconds at `hop_s` spacing.
pub fn chunk_energies(clip: &AudioClip, window_len_s: f64, hop_s: f64) -> Result<Vec<Segment>> {
    if clip.is_empty() {
        return Err(Error::Degenerate("chunk_energies on an empty clip".into()));
    }
    assert!(window_len_s > 0.0 && hop_s > 0.0);
    let window = clip.samples_for(window_len_s).max(1);
    let hop = clip.samples_for(hop_s).max(1);
    Ok(window_bounds(clip.len(), window, hop)
        .into_iter()
        .map(|(s, l)| Segment::of(clip, s, l))
        .collect())
}

/// Draws the analysis window length uniformly from `[window_min_s, window_max_s]`.
pub fn draw_window_len<R: Rng + ?Sized>(cfg: &SegmenterConfig, rng: &mut R) -> f64 {
    rng.gen_range(cfg.window_min_s..=cfg.window_max_s)
}

/// Picks uniformly among the `top_k` most energetic windows of length `window_s`.
/// Ties in energy rank the earlier window first.
pub fn select_with_window<R: Rng + ?Sized>(
    clip: &AudioClip,
    window_s: f64,
    cfg: &SegmenterConfig,
    rng: &mut R,
) -> Result<Segment> {
    let mut segments = chunk_energies(clip, window_s, cfg.hop_fraction * window_s)?;
    // stable: equal energies keep start order
    segments.sort_by(|a, b| b.energy.total_cmp(&a.energy));
    if segments[0].energy <= 0.0 {
        return Err(Error::Degenerate(
            "all-zero clip has no target segment".into(),
        ));
    }
    let k = cfg.top_k.min(segments.len());
    let pick = rng.gen_range(0..k);
    Ok(segments.swap_remove(pick))
}

/// Maximum-energy target selection: draws a window length, then picks one of the
/// `top_k` highest-energy windows at that length.
pub fn select_target_segment<R: Rng + ?Sized>(
    clip: &AudioClip,
    cfg: &SegmenterConfig,
    rng: &mut R,
) -> Result<Segment> {
    if clip.is_empty() {
        return Err(Error::Degenerate("cannot select from an empty clip".into()));
    }
    let window_s = draw_window_len(cfg, rng);
    select_with_window(clip, window_s, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_windows(xs: &[f32], window: usize, hop: usize) -> Vec<(usize, f64)> {
        // independent enumeration of window positions
        let mut out = Vec::new();
        if xs.len() <= window {
            let mut e = 0.0;
            for &x in xs {
                e += x as f64 * x as f64;
            }
            return vec![(0, e)];
        }
        let mut s = 0;
        loop {
            if s + window > xs.len() {
                break;
            }
            let mut e = 0.0;
            for &x in &xs[s..s + window] {
                e += x as f64 * x as f64;
            }
            out.push((s, e));
            s += hop;
        }
        let (ls, _) = *out.last().unwrap();
        if ls + window < xs.len() {
            let st = xs.len() - window;
            let mut e = 0.0;
            for &x in &xs[st..] {
                e += x as f64 * x as f64;
            }
            out.push((st, e));
        }
        out
    }

    #[test]
    fn zero_clip_energies() {
        let clip = AudioClip::new(vec![0.0; 100], 10);
        let segs = chunk_energies(&clip, 2.0, 1.0).unwrap();
        assert!(segs.iter().all(|s| s.energy == 0.0));
    }

    #[test]
    fn single_burst_hand_oracle() {
        let mut xs = vec![0.0f32; 8];
        xs.extend([1.0; 4]);
        xs.extend([0.0; 8]);
        // sample rate 1 Hz so seconds == samples
        let clip = AudioClip::new(xs, 1);
        let segs = chunk_energies(&clip, 4.0, 4.0).unwrap();
        assert_eq!(segs.len(), 5);
        let nonzero: Vec<_> = segs.iter().filter(|s| s.energy > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].energy, 4.0);
        assert_eq!(nonzero[0].start_sample, 8);
    }

    #[test]
    fn short_clip_single_window() {
        let clip = AudioClip::new(vec![0.5; 10], 10);
        let segs = chunk_energies(&clip, 5.0, 2.5).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_sample, segs[0].length_samples), (0, 10));
    }

    #[test]
    fn tail_window_clamped_to_end() {
        assert_eq!(window_bounds(10, 4, 4), vec![(0, 4), (4, 4), (6, 4)]);
        assert_eq!(window_bounds(8, 4, 2), vec![(0, 4), (2, 4), (4, 4)]);
    }

    #[test]
    fn empty_and_silent_errors() {
        let cfg = SegmenterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = AudioClip::new(vec![], 16000);
        assert!(chunk_energies(&empty, 1.0, 0.5).is_err());
        assert!(select_target_segment(&empty, &cfg, &mut rng).is_err());
        let silent = AudioClip::new(vec![0.0; 32000], 16000);
        assert!(matches!(
            select_target_segment(&silent, &cfg, &mut rng),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn burst_is_always_picked_with_top1() {
        let sr = 1000;
        let mut xs = vec![0.01f32; 20 * sr];
        for x in &mut xs[12_000..12_500] {
            *x = 0.9;
        }
        let clip = AudioClip::new(xs, sr as u32);
        let cfg = SegmenterConfig {
            top_k: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut probe = rng.clone();
            let window_s = draw_window_len(&cfg, &mut probe);
            let seg = select_target_segment(&clip, &cfg, &mut rng).unwrap();
            let window = (window_s * sr as f64).round() as usize;
            let hop = (0.5 * window_s * sr as f64).round() as usize;
            let best = naive_windows(&clip.samples, window, hop)
                .into_iter()
                .fold((0, f64::MIN), |b, (s, e)| if e > b.1 { (s, e) } else { b });
            assert_eq!(seg.start_sample, best.0);
            assert!(seg.start_sample <= 12_000 && seg.end_sample() >= 12_500);
        }
    }

    #[test]
    fn constant_clip_segments_have_equal_energy() {
        let clip = AudioClip::new(vec![0.3; 16000 * 12], 16000);
        let cfg = SegmenterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut probe = rng.clone();
            let window_s = draw_window_len(&cfg, &mut probe);
            let seg = select_target_segment(&clip, &cfg, &mut rng).unwrap();
            let full = chunk_energies(&clip, window_s, 0.5 * window_s).unwrap();
            for s in full {
                assert!((s.energy - seg.energy).abs() <= 1e-9 * seg.energy);
            }
        }
    }

    #[test]
    fn same_seed_same_segment() {
        let xs: Vec<f32> = (0..40_000).map(|i| ((i as f32) * 0.01).sin() * (i % 977) as f32 / 977.0).collect();
        let clip = AudioClip::new(xs, 16000);
        let cfg = SegmenterConfig::default();
        let a = select_target_segment(&clip, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = select_target_segment(&clip, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn energies_match_naive_oracle(xs in prop::collection::vec(-1.0f32..1.0, 1..300), w in 1usize..50, h in 1usize..50) {
            let clip = AudioClip::new(xs.clone(), 1);
            let segs = chunk_energies(&clip, w as f64, h as f64).unwrap();
            let oracle = naive_windows(&xs, w, h);
            prop_assert_eq!(segs.len(), oracle.len());
            for (s, (os, oe)) in segs.iter().zip(oracle) {
                prop_assert_eq!(s.start_sample, os);
                prop_assert!((s.energy - oe).abs() <= 1e-9 * oe.max(1.0));
                prop_assert!(s.end_sample() <= xs.len());
            }
        }

        #[test]
        fn selection_beats_everything_outside_top_k(xs in prop::collection::vec(-1.0f32..1.0, 200..4000), seed in 0u64..1000) {
            // 100 Hz toy rate: clips up to 40 s, windows 1..10 s
            let clip = AudioClip::new(xs, 100);
            let cfg = SegmenterConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut probe = rng.clone();
            let window_s = draw_window_len(&cfg, &mut probe);
            let seg = select_target_segment(&clip, &cfg, &mut rng).unwrap();
            prop_assert!(seg.end_sample() <= clip.len());
            let mut all: Vec<f64> = chunk_energies(&clip, window_s, 0.5 * window_s).unwrap().iter().map(|s| s.energy).collect();
            all.sort_by(|a, b| b.total_cmp(a));
            if all.len() > cfg.top_k {
                prop_assert!(seg.energy >= all[cfg.top_k]);
            }
        }
    }
}
