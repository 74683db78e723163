//! Mono audio buffers and the DSP substrate the rest of the pipeline builds on:
//! WAV I/O, linear resampling, RMS measurement, level normalization and
//! leading-silence removal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working sample rate of every stage after loading.
pub const WORKING_RATE: u32 = 16_000;

/// A mono sample buffer in linear amplitude, nominally within [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of samples spanned by `seconds` at this clip's rate (rounded).
    pub fn samples_for(&self, seconds: f64) -> usize {
        seconds_to_samples(seconds, self.sample_rate)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    /// Sub-clip `[start, start + len)`; panics when out of bounds.
    pub fn slice(&self, start: usize, len: usize) -> AudioClip {
        AudioClip::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip::new(
            self.samples
                .iter()
                .map(|&x| (x as f64 * gain) as f32)
                .collect(),
            self.sample_rate,
        )
    }
}

pub fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round().max(0.0) as usize
}

/// Level and silence parameters for preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeConfig {
    pub target_level_dbfs: f64,
    pub silence_threshold_dbfs: f64,
    pub silence_window_s: f64,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self {
            target_level_dbfs: -26.0,
            silence_threshold_dbfs: -50.0,
            silence_window_s: 0.010,
        }
    }
}

impl NormalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_level_dbfs <= 0.0) {
            return Err(Error::config(
                "normalize.target_level_dbfs",
                "must be <= 0 dBFS",
            ));
        }
        if !self.silence_threshold_dbfs.is_finite() {
            return Err(Error::config(
                "normalize.silence_threshold_dbfs",
                "must be finite",
            ));
        }
        if !(self.silence_window_s > 0.0) {
            return Err(Error::config("normalize.silence_window_s", "must be > 0"));
        }
        Ok(())
    }

    pub fn target_rms(&self) -> f64 {
        db_to_amplitude(self.target_level_dbfs)
    }
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// 20·log10(amplitude); `-inf` for zero.
pub fn amplitude_to_db(amplitude: f64) -> f64 {
    20.0 * amplitude.log10()
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => Error::UnsupportedFormat(format!(
            "{}: encoding not supported (expected PCM 16-bit integer or 32-bit float)",
            path.display()
        )),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a RIFF/WAVE file as mono.
///
/// Accepts PCM 16-bit integer and IEEE 32-bit float with any channel count;
/// channels are averaged with equal weights and integer samples are scaled by
/// 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }
    if spec.sample_rate == 0 {
        return Err(Error::Format(format!("{}: zero sample rate", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Int, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: PCM {bits}-bit integer (expected PCM 16-bit integer or 32-bit float)",
                path.display()
            )))
        }
        (hound::SampleFormat::Float, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit float (expected PCM 16-bit integer or 32-bit float)",
                path.display()
            )))
        }
    };
    let channels = spec.channels as usize;
    if interleaved.len() % channels != 0 {
        return Err(Error::Format(format!(
            "{}: sample count {} not a multiple of {channels} channels",
            path.display(),
            interleaved.len()
        )));
    }
    let samples: Vec<f32> = if channels == 1 {
        interleaved.iter().map(|&v| v as f32).collect()
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| (frame.iter().sum::<f64>() / channels as f64) as f32)
            .collect()
    };
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::Format(format!(
            "{}: non-finite sample at frame {i}",
            path.display()
        )));
    }
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes `clip` as a mono IEEE 32-bit float WAV.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer.write_sample(s).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Linear-interpolation resampler.
///
/// The output has `round(len * target / source)` samples and its first and last
/// samples coincide with the input's, so a ramp stays an exact ramp.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if target_rate == clip.sample_rate {
        return clip.clone();
    }
    let n_in = clip.len();
    let n_out = ((n_in as u64 * target_rate as u64 + clip.sample_rate as u64 / 2)
        / clip.sample_rate as u64) as usize;
    if n_in == 0 || n_out == 0 {
        return AudioClip::new(Vec::new(), target_rate);
    }
    if n_in == 1 || n_out == 1 {
        return AudioClip::new(vec![clip.samples[0]; n_out], target_rate);
    }
    let step = (n_in - 1) as f64 / (n_out - 1) as f64;
    let src = &clip.samples;
    let samples = (0..n_out)
        .map(|j| {
            let pos = j as f64 * step;
            let i = (pos.floor() as usize).min(n_in - 2);
            let frac = pos - i as f64;
            (src[i] as f64 * (1.0 - frac) + src[i + 1] as f64 * frac) as f32
        })
        .collect();
    AudioClip::new(samples, target_rate)
}

/// Root-mean-square amplitude; zero for an empty slice.
pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum_sq: f64 = samples.iter().map(|&x| (x as f64) * (x as f64)).sum();
    (sum_sq / samples.len() as f64).sqrt()
}

/// Applies the pure gain that brings the clip's RMS to `cfg.target_level_dbfs`.
pub fn normalize_rms(clip: &AudioClip, cfg: &NormalizeConfig) -> Result<AudioClip> {
    let level = rms(&clip.samples);
    if level <= 0.0 {
        return Err(Error::Degenerate(
            "cannot normalize a silent or empty clip".into(),
        ));
    }
    Ok(clip.scaled(cfg.target_rms() / level))
}

/// Drops everything before the first `silence_window_s` window whose RMS is at
/// or above `silence_threshold_dbfs`. An all-silent clip becomes empty.
pub fn trim_leading_silence(clip: &AudioClip, cfg: &NormalizeConfig) -> AudioClip {
    let window = clip.samples_for(cfg.silence_window_s).max(1);
    let onset = clip
        .samples
        .chunks(window)
        .position(|w| amplitude_to_db(rms(w)) >= cfg.silence_threshold_dbfs);
    match onset {
        Some(0) => clip.clone(),
        Some(k) => AudioClip::new(clip.samples[k * window..].to_vec(), clip.sample_rate),
        None => AudioClip::new(Vec::new(), clip.sample_rate),
    }
}

/// Normalize, drop leading silence, then normalize what remains.
///
/// Returns the processed clip together with the number of leading input
/// samples dropped and the overall gain applied to the kept samples, so
/// `out == clip[offset..] * gain` up to f32 rounding.
pub fn preprocess(clip: &AudioClip, cfg: &NormalizeConfig) -> Result<(AudioClip, usize, f64)> {
    let leveled = normalize_rms(clip, cfg)?;
    let trimmed = trim_leading_silence(&leveled, cfg);
    let offset = clip.len() - trimmed.len();
    let kept = &clip.samples[offset..];
    let level = rms(kept);
    if level <= 0.0 {
        return Err(Error::Degenerate("clip is silent after trimming".into()));
    }
    let gain = cfg.target_rms() / level;
    let out = AudioClip::new(
        kept.iter().map(|&x| (x as f64 * gain) as f32).collect(),
        clip.sample_rate,
    );
    Ok((out, offset, gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, amp: f64, secs: f64, sr: u32) -> Vec<f32> {
        (0..seconds_to_samples(secs, sr))
            .map(|n| (amp * (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn rms_analytic_cases() {
        assert!((rms(&[0.5; 100]) - 0.5).abs() < 1e-12);
        assert!((rms(&[1.0, -1.0, 1.0, -1.0]) - 1.0).abs() < 1e-12);
        assert_eq!(rms(&[]), 0.0);
    }

    #[test]
    fn normalize_constant_half() {
        let clip = AudioClip::new(vec![0.5; 1000], 16000);
        let out = normalize_rms(&clip, &NormalizeConfig::default()).unwrap();
        for &x in &out.samples {
            assert!((x as f64 - 0.050119).abs() < 1e-6);
        }
        let gain = out.samples[0] as f64 / 0.5;
        assert!((gain - 0.100237).abs() < 1e-6);
    }

    #[test]
    fn normalize_at_target_is_unit_gain() {
        let target = db_to_amplitude(-26.0) as f32;
        let clip = AudioClip::new(vec![target; 64], 16000);
        let out = normalize_rms(&clip, &NormalizeConfig::default()).unwrap();
        assert!(((out.samples[0] / target) as f64 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_rejects_silence() {
        let clip = AudioClip::new(vec![0.0; 10], 16000);
        assert!(matches!(
            normalize_rms(&clip, &NormalizeConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn resample_identity_and_constant() {
        let clip = AudioClip::new(vec![0.1, 0.2, 0.3], 16000);
        assert_eq!(resample(&clip, 16000), clip);
        let c = AudioClip::new(vec![0.3; 441], 44100);
        let out = resample(&c, 16000);
        assert_eq!(out.len(), 160);
        assert!(out.samples.iter().all(|&x| (x - 0.3).abs() < 1e-7));
    }

    #[test]
    fn resample_ramp_stays_ramp() {
        let n = 8000;
        let ramp: Vec<f32> = (0..n).map(|i| i as f32 / (n - 1) as f32).collect();
        let out = resample(&AudioClip::new(ramp, 8000), 16000);
        assert_eq!(out.len(), 16000);
        assert_eq!(out.sample_rate, 16000);
        let m = out.len();
        for (j, &y) in out.samples.iter().enumerate() {
            let expected = j as f64 / (m - 1) as f64;
            assert!((y as f64 - expected).abs() < 1e-6, "j={j} y={y} expected={expected}");
        }
    }

    #[test]
    fn trim_cases() {
        let cfg = NormalizeConfig::default();
        let loud = AudioClip::new(tone(440.0, 0.5, 0.2, 16000), 16000);
        assert_eq!(trim_leading_silence(&loud, &cfg), loud);

        let silent = AudioClip::new(vec![0.0; 1600], 16000);
        assert!(trim_leading_silence(&silent, &cfg).is_empty());

        // 0.5 s of zeros then a -20 dBFS tone
        let onset = 8000;
        let mut samples = vec![0.0f32; onset];
        let amp = db_to_amplitude(-20.0) * 2f64.sqrt();
        samples.extend(tone(440.0, amp, 0.5, 16000));
        let clip = AudioClip::new(samples, 16000);
        let out = trim_leading_silence(&clip, &cfg);
        let removed = clip.len() - out.len();
        let window = 160;
        assert!(removed <= onset && onset - removed < window, "removed {removed}");
    }

    #[test]
    fn wav_roundtrip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let clip = AudioClip::new(vec![0.25, -0.5, 0.123_456_79, 0.0], 22050);
        save_wav(&clip, &p).unwrap();
        assert_eq!(load_wav(&p).unwrap(), clip);

        let empty = AudioClip::new(vec![], 16000);
        save_wav(&empty, &p).unwrap();
        assert_eq!(load_wav(&p).unwrap(), empty);

        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for v in [16384i16, -16384, 1000, -1000] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, vec![0.0, 0.0]);

        let spec = hound::WavSpec {
            channels: 1,
            ..spec
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.finalize().unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn wav_rejects_unsupported_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(1i32).unwrap();
        w.finalize().unwrap();
        match load_wav(&p) {
            Err(Error::UnsupportedFormat(m)) => assert!(m.contains("24-bit"), "{m}"),
            other => panic!("expected unsupported, got {other:?}"),
        }
        std::fs::write(&p, b"RIFF\x04\x00\x00\x00JUNK").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Format(_))));
        assert!(matches!(
            load_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn save_reports_path_on_io_failure() {
        let clip = AudioClip::new(vec![0.0], 16000);
        let err = save_wav(&clip, "/nonexistent-dir/x.wav").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.wav"));
    }

    #[test]
    fn sine_frame_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sine.wav");
        save_wav(&AudioClip::new(tone(440.0, 0.5, 1.0, 16000), 16000), &p).unwrap();
        let reader = hound::WavReader::open(&p).unwrap();
        assert_eq!(reader.duration(), 16000);
    }

    proptest! {
        #[test]
        fn pcm16_roundtrip_within_one_lsb(values in prop::collection::vec(-32768i32..32768, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let src = dir.path().join("in.wav");
            let spec = hound::WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
            let mut w = hound::WavWriter::create(&src, spec).unwrap();
            for &v in &values { w.write_sample(v as i16).unwrap(); }
            w.finalize().unwrap();
            let loaded = load_wav(&src).unwrap();
            let dst = dir.path().join("out.wav");
            save_wav(&loaded, &dst).unwrap();
            let again = load_wav(&dst).unwrap();
            for (&v, &y) in values.iter().zip(&again.samples) {
                prop_assert!((y as f64 * 32768.0 - v as f64).abs() <= 1.0);
            }
        }

        #[test]
        fn rms_matches_two_pass_oracle(xs in prop::collection::vec(-1.0f32..1.0, 1..500)) {
            let mut acc = 0.0f64;
            for &x in &xs { acc += (x as f64).powi(2); }
            let oracle = (acc / xs.len() as f64).sqrt();
            let got = rms(&xs);
            prop_assert!((got - oracle).abs() <= 1e-9 * oracle.max(1e-300));
        }

        #[test]
        fn rms_of_concatenation(a in prop::collection::vec(-1.0f32..1.0, 64), b in prop::collection::vec(-1.0f32..1.0, 64)) {
            let mut ab = a.clone();
            ab.extend(&b);
            let expected = ((rms(&a).powi(2) + rms(&b).powi(2)) / 2.0).sqrt();
            prop_assert!((rms(&ab) - expected).abs() < 1e-9);
        }

        #[test]
        fn normalize_hits_target_and_is_idempotent(xs in prop::collection::vec(-1.0f32..1.0, 16..400)) {
            prop_assume!(rms(&xs) > 1e-3);
            let cfg = NormalizeConfig::default();
            let clip = AudioClip::new(xs, 16000);
            let once = normalize_rms(&clip, &cfg).unwrap();
            let target = db_to_amplitude(-26.0);
            prop_assert!((rms(&once.samples) / target - 1.0).abs() < 1e-6);
            let twice = normalize_rms(&once, &cfg).unwrap();
            for (a, b) in once.samples.iter().zip(&twice.samples) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-6));
            }
        }

        #[test]
        fn trim_is_idempotent(lead in 0usize..2000, xs in prop::collection::vec(-1.0f32..1.0, 0..800)) {
            let cfg = NormalizeConfig::default();
            let mut samples = vec![0.0; lead];
            samples.extend(xs);
            let clip = AudioClip::new(samples, 16000);
            let once = trim_leading_silence(&clip, &cfg);
            prop_assert_eq!(trim_leading_silence(&once, &cfg), once);
        }
    }
}
