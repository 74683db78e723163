//! Frame-embedding sequences: the `EMB1` file format for externally computed
//! encoder embeddings, and a built-in log-mel featurizer usable in their place.
//!
//! `EMB1` layout (little-endian):
//!
//! ```text
//! offset 0   4 bytes  magic "EMB1"
//! offset 4   u32      T (frames, >= 1)
//! offset 8   u32      D (dimension)
//! offset 12  u32      frame hop in microseconds (0 = unspecified)
//! offset 16  T*D f32  row-major frames
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, preprocess, resample, AudioClip, NormalizeConfig, WORKING_RATE};
use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_HEADER_LEN: usize = 16;

/// A `T x D` matrix of per-frame features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub dim: usize,
    pub frame_hop_s: f64,
}

impl EmbeddingSequence {
    pub fn new(frames: Vec<f32>, n_frames: usize, dim: usize, frame_hop_s: f64) -> Result<Self> {
        if frames.len() != n_frames * dim {
            return Err(Error::Shape(format!(
                "{} values for a {n_frames}x{dim} sequence",
                frames.len()
            )));
        }
        Ok(Self {
            frames,
            n_frames,
            dim,
            frame_hop_s,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice_frames(&self, start: usize, end: usize) -> EmbeddingSequence {
        EmbeddingSequence {
            frames: self.frames[start * self.dim..end * self.dim].to_vec(),
            n_frames: end - start,
            dim: self.dim,
            frame_hop_s: self.frame_hop_s,
        }
    }

    /// The sequence reversed in time.
    pub fn reversed(&self) -> EmbeddingSequence {
        let frames = (0..self.n_frames)
            .rev()
            .flat_map(|t| self.row(t).iter().copied())
            .collect();
        EmbeddingSequence {
            frames,
            n_frames: self.n_frames,
            dim: self.dim,
            frame_hop_s: self.frame_hop_s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|x| x.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Format("embedding sequence has no frames".into()));
        }
        if !self.is_finite() {
            return Err(Error::Format("embedding sequence has non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub log_floor: f64,
    /// Output is `(ln(power + log_floor) - log_offset) / log_scale`.
    pub log_offset: f64,
    pub log_scale: f64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            window_s: 0.025,
            hop_s: 0.010,
            n_mels: 64,
            fft_size: 512,
            log_floor: 1e-10,
            log_offset: 0.0,
            log_scale: 1.0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_s > 0.0 && self.window_s >= self.hop_s) {
            return Err(Error::config("featurizer.hop_s", "need window_s >= hop_s > 0"));
        }
        if self.n_mels < 1 {
            return Err(Error::config("featurizer.n_mels", "must be >= 1"));
        }
        let window = (self.window_s * WORKING_RATE as f64).round() as usize;
        if self.fft_size < window {
            return Err(Error::config(
                "featurizer.fft_size",
                format!("must be >= window length ({window} samples at 16 kHz)"),
            ));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("featurizer.log_floor", "must be > 0"));
        }
        if !(self.log_scale > 0.0 && self.log_scale.is_finite()) || !self.log_offset.is_finite() {
            return Err(Error::config("featurizer.log_scale", "need finite log_offset and log_scale > 0"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels` HTK-scale filters spanning 0 Hz to Nyquist.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|m| mel_to_hz(top * m as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters with unit peak, `n_mels` rows of `fft_size / 2 + 1` weights.
fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|m| mel_to_hz(top * m as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = fft_size / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / fft_size as f64;
                    if f >= lo && f <= mid && mid > lo {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f <= hi && hi > mid {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-mel featurizer with precomputed window, filterbank and FFT plan.
pub struct LogMel {
    cfg: FeaturizerConfig,
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(cfg: &FeaturizerConfig, sample_rate: u32) -> Self {
        let win_len = (cfg.window_s * sample_rate as f64).round() as usize;
        let hop = ((cfg.hop_s * sample_rate as f64).round() as usize).max(1);
        // periodic Hann
        let window = (0..win_len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win_len as f64).cos())
            .collect();
        let fft_size = cfg.fft_size.max(win_len);
        Self {
            cfg: FeaturizerConfig {
                fft_size,
                ..cfg.clone()
            },
            sample_rate,
            window,
            hop,
            filters: mel_filterbank(cfg.n_mels, fft_size, sample_rate),
            fft: FftPlanner::new().plan_fft_forward(fft_size),
        }
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window.len() {
            0
        } else {
            1 + (n_samples - self.window.len()) / self.hop
        }
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<EmbeddingSequence> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Shape(format!(
                "featurizer built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        let n_frames = self.n_frames(clip.len());
        if n_frames == 0 {
            return Err(Error::Degenerate(format!(
                "clip of {} samples is shorter than one {}-sample window",
                clip.len(),
                self.window.len()
            )));
        }
        let n_mels = self.cfg.n_mels;
        let n_bins = self.cfg.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let mut power = vec![0.0f64; n_bins];
        let mut frames = Vec::with_capacity(n_frames * n_mels);
        for t in 0..n_frames {
            let start = t * self.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (&x, &w)) in clip.samples[start..start + self.window.len()]
                .iter()
                .zip(&self.window)
                .enumerate()
            {
                buf[i] = Complex::new(x as f64 * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for filter in &self.filters {
                let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                frames.push((((e + self.cfg.log_floor).ln() - self.cfg.log_offset) / self.cfg.log_scale) as f32);
            }
        }
        EmbeddingSequence::new(frames, n_frames, n_mels, self.hop as f64 / self.sample_rate as f64)
    }
}

/// Hann-windowed power spectrogram, HTK mel filterbank, natural log.
/// `T = 1 + floor((len - window) / hop)`.
pub fn logmel_features(clip: &AudioClip, cfg: &FeaturizerConfig) -> Result<EmbeddingSequence> {
    LogMel::new(cfg, clip.sample_rate).compute(clip)
}

pub fn encode_embeddings(seq: &EmbeddingSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(EMB_HEADER_LEN + seq.frames.len() * 4);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(seq.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    let hop_us = (seq.frame_hop_s * 1e6).round();
    let hop_us = if hop_us.is_finite() && hop_us > 0.0 && hop_us <= u32::MAX as f64 {
        hop_us as u32
    } else {
        0
    };
    out.extend_from_slice(&hop_us.to_le_bytes());
    for v in &seq.frames {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSequence> {
    if bytes.len() < EMB_HEADER_LEN {
        return Err(Error::Format(format!(
            "embedding file truncated: {} bytes, header needs {EMB_HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != EMB_MAGIC {
        return Err(Error::Format("bad embedding magic (expected EMB1)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n_frames, dim, hop_us) = (word(4), word(8), word(12));
    if n_frames == 0 || dim == 0 {
        return Err(Error::Format(format!("empty embedding shape {n_frames}x{dim}")));
    }
    let expected = n_frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(EMB_HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("embedding shape {n_frames}x{dim} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header {n_frames}x{dim} needs {}",
            bytes.len() - EMB_HEADER_LEN,
            expected - EMB_HEADER_LEN
        )));
    }
    let frames: Vec<f32> = bytes[EMB_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let seq = EmbeddingSequence::new(frames, n_frames, dim, hop_us as f64 / 1e6)?;
    if !seq.is_finite() {
        return Err(Error::Format("embedding payload has non-finite values".into()));
    }
    Ok(seq)
}

pub fn write_embeddings(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_embeddings(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes).map_err(|e| e.context(path.display()))
}

/// A clip addressed by id (for embedding files) and path (for audio).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRef {
    pub id: String,
    pub path: PathBuf,
}

/// Source of embedding sequences for clips. Implementations must return the
/// same `dim()` for every clip.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;

    fn embed(&self, clip: &ClipRef) -> Result<EmbeddingSequence>;

    /// One sequence per `(start_s, end_s)` window; `None` when a window has no
    /// usable content (silent audio).
    fn embed_chunks(
        &self,
        clip: &ClipRef,
        chunks: &[(f64, f64)],
    ) -> Result<Vec<Option<EmbeddingSequence>>>;
}

/// Featurizes audio on the fly: load, resample to 16 kHz, preprocess, log-mel.
pub struct LogMelProvider {
    featurizer: LogMel,
    norm: NormalizeConfig,
    n_mels: usize,
}

impl LogMelProvider {
    pub fn new(cfg: &FeaturizerConfig, norm: &NormalizeConfig) -> Self {
        Self {
            featurizer: LogMel::new(cfg, WORKING_RATE),
            norm: norm.clone(),
            n_mels: cfg.n_mels,
        }
    }

    pub fn load(&self, path: &Path) -> Result<AudioClip> {
        Ok(resample(&load_wav(path)?, WORKING_RATE))
    }

    pub fn featurize(&self, clip: &AudioClip) -> Result<EmbeddingSequence> {
        let (clean, _, _) = preprocess(clip, &self.norm)?;
        self.featurizer.compute(&clean)
    }
}

impl EmbeddingProvider for LogMelProvider {
    fn dim(&self) -> usize {
        self.n_mels
    }

    fn embed(&self, clip: &ClipRef) -> Result<EmbeddingSequence> {
        self.featurize(&self.load(&clip.path)?)
    }

    fn embed_chunks(
        &self,
        clip: &ClipRef,
        chunks: &[(f64, f64)],
    ) -> Result<Vec<Option<EmbeddingSequence>>> {
        let audio = self.load(&clip.path)?;
        chunks
            .iter()
            .map(|&(s, e)| {
                let a = audio.samples_for(s).min(audio.len());
                let b = audio.samples_for(e).min(audio.len()).max(a);
                match self.featurize(&audio.slice(a, b - a)) {
                    Ok(seq) => Ok(Some(seq)),
                    Err(Error::Degenerate(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    }
}

/// Reads `<dir>/<id>.emb` files produced by an external encoder (or by the
/// `featurize` stage).
pub struct FileProvider {
    dir: PathBuf,
    dim: usize,
    /// Used when a file leaves its frame hop unspecified.
    default_hop_s: f64,
}

impl FileProvider {
    pub fn new(dir: impl Into<PathBuf>, dim: usize, default_hop_s: f64) -> Self {
        Self {
            dir: dir.into(),
            dim,
            default_hop_s,
        }
    }

    /// Takes the dimension from the first file; later files must agree.
    pub fn probe(dir: impl Into<PathBuf>, first_id: &str, default_hop_s: f64) -> Result<Self> {
        let dir = dir.into();
        let seq = read_embeddings(dir.join(format!("{first_id}.emb")))?;
        Ok(Self::new(dir, seq.dim, default_hop_s))
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.emb"))
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, clip: &ClipRef) -> Result<EmbeddingSequence> {
        let path = self.path_for(&clip.id);
        let mut seq = read_embeddings(&path)?;
        if seq.dim != self.dim {
            return Err(Error::Format(format!(
                "{}: dim {} differs from expected {}",
                path.display(),
                seq.dim,
                self.dim
            )));
        }
        if seq.frame_hop_s <= 0.0 {
            seq.frame_hop_s = self.default_hop_s;
        }
        Ok(seq)
    }

    fn embed_chunks(
        &self,
        clip: &ClipRef,
        chunks: &[(f64, f64)],
    ) -> Result<Vec<Option<EmbeddingSequence>>> {
        let seq = self.embed(clip)?;
        let hop = seq.frame_hop_s;
        Ok(chunks
            .iter()
            .map(|&(s, e)| {
                let a = ((s / hop).floor() as usize).min(seq.n_frames - 1);
                let b = ((e / hop).floor() as usize).clamp(a + 1, seq.n_frames);
                Some(seq.slice_frames(a, b))
            })
            .collect())
    }
}
