//! SNR-controlled mixing of a target segment with interference and noise.

use rand::Rng;

use crate::audio::{amplitude_to_db, db_to_amplitude, rms, AudioClip, NormalizeConfig};
use crate::error::{Error, Result};
use crate::segmenter::{select_target_segment, Segment, SegmenterConfig};

use super::{
    Blocklist, InterfererSource, MixCondition, MixConfig, MixtureRecord, NoiseSource,
    SourcePool, TargetSource,
};
use crate::Label;

/// Gain that places a component of RMS `component_rms` at `snr_db` below
/// (positive SNR) a target of RMS `target_rms`.
pub fn snr_gain(target_rms: f64, component_rms: f64, snr_db: f64) -> f64 {
    target_rms / (component_rms * db_to_amplitude(snr_db))
}

/// 20·log10(target_rms / component_rms).
pub fn snr_db(target_rms: f64, component_rms: f64) -> f64 {
    amplitude_to_db(target_rms / component_rms)
}

/// Scales `interferer` so that `20·log10(target_rms / rms(out)) == snr_db`.
/// Returns the scaled clip and the applied linear gain.
pub fn scale_for_snr(target_rms: f64, interferer: &AudioClip, snr_db: f64) -> Result<(AudioClip, f64)> {
    assert!(target_rms > 0.0, "target rms must be positive");
    let level = rms(&interferer.samples);
    if level <= 0.0 {
        return Err(Error::Degenerate("cannot scale a silent interferer".into()));
    }
    let gain = snr_gain(target_rms, level, snr_db);
    Ok((interferer.scaled(gain), gain))
}

/// Everything needed to mix against one target besides the random stream.
pub struct MixInputs<'a> {
    pub cfg: &'a MixConfig,
    pub seg_cfg: &'a SegmenterConfig,
    pub interferer_pool: &'a SourcePool,
    pub noise_pool: &'a SourcePool,
    pub blocklist: &'a Blocklist,
}

fn draw_snr<R: Rng + ?Sized>(cfg: &MixConfig, rng: &mut R) -> f64 {
    rng.gen_range(cfg.snr_min_db..=cfg.snr_max_db)
}

/// Region of a component laid against a target of `target_len` samples:
/// longer sources are cropped to `target_len`, shorter ones land at a uniform
/// offset. Returns `(source_start, length, placement_offset)`.
fn place<R: Rng + ?Sized>(
    source_start: usize,
    source_len: usize,
    target_len: usize,
    crop_offset: Option<usize>,
    rng: &mut R,
) -> (usize, usize, usize) {
    if source_len >= target_len {
        (source_start + crop_offset.unwrap_or(0), target_len, 0)
    } else {
        let slack = target_len - source_len;
        (source_start, source_len, rng.gen_range(0..=slack))
    }
}

fn add_into(mix: &mut [f64], component: &AudioClip, offset: usize) {
    for (m, &c) in mix[offset..offset + component.len()].iter_mut().zip(&component.samples) {
        *m += c as f64;
    }
}

/// Output normalization shared by single and multi records: bring the waveform
/// to the target level, then pull it back under full scale if it would clip.
/// Returns the output clip, the applied gain and whether the peak limit bound.
pub(crate) fn finalize_output(
    mix: &[f64],
    sample_rate: u32,
    norm: &NormalizeConfig,
) -> Result<(AudioClip, f64, bool)> {
    let sum_sq: f64 = mix.iter().map(|x| x * x).sum();
    let level = (sum_sq / mix.len().max(1) as f64).sqrt();
    if level <= 0.0 {
        return Err(Error::Degenerate("mixture is silent".into()));
    }
    let mut gain = norm.target_rms() / level;
    let peak = mix.iter().fold(0.0f64, |m, x| m.max(x.abs())) * gain;
    let limited = peak > 1.0;
    if limited {
        gain /= peak;
    }
    let samples = mix
        .iter()
        .map(|&x| ((x * gain) as f32).clamp(-1.0, 1.0))
        .collect();
    Ok((AudioClip::new(samples, sample_rate), gain, limited))
}

/// Mixes `target` (already preprocessed) with interference and/or noise
/// according to `condition`.
///
/// Interferers come from `interferer_pool` minus the target class and its
/// blocklisted neighbours; each uses its own max-energy segment and an
/// independent SNR draw against the target's RMS. The returned record has an
/// empty `id` and no `output_path`; the caller assigns both.
pub fn synthesize_mixture<R: Rng + ?Sized>(
    target: &AudioClip,
    target_source: TargetSource,
    target_gain: f64,
    condition: MixCondition,
    inputs: &MixInputs<'_>,
    norm: &NormalizeConfig,
    rng: &mut R,
) -> Result<(AudioClip, MixtureRecord)> {
    if target.is_empty() {
        return Err(Error::Synthesis("empty target".into()));
    }
    let target_class = target_source.class_label.clone();
    let target_len = target.len();
    let target_rms = rms(&target.samples);
    if target_rms <= 0.0 {
        return Err(Error::Synthesis(format!("silent target of class `{target_class}`")));
    }
    let mut mix: Vec<f64> = target.samples.iter().map(|&x| x as f64).collect();
    let mut interferers = Vec::new();
    let mut snrs = Vec::new();

    let n_interferers = match condition {
        MixCondition::SingleInterference | MixCondition::InterferencePlusNoise => 1,
        MixCondition::DualInterference => 2,
        MixCondition::BackgroundNoise => 0,
    };
    if n_interferers > 0 {
        let candidates: Vec<usize> = (0..inputs.interferer_pool.len())
            .filter(|&i| {
                inputs
                    .blocklist
                    .allows(&target_class, &inputs.interferer_pool.get(i).class_label)
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::Synthesis(format!(
                "no interferer left for target class `{target_class}` after blocklist filtering"
            )));
        }
        let mut picks = Vec::with_capacity(n_interferers);
        for _ in 0..n_interferers {
            let mut pick = candidates[rng.gen_range(0..candidates.len())];
            // prefer distinct files when the pool allows it
            if candidates.len() > 1 {
                while picks.contains(&pick) {
                    pick = candidates[rng.gen_range(0..candidates.len())];
                }
            }
            picks.push(pick);
        }
        for pick in picks {
            let source = inputs.interferer_pool.get(pick);
            let seg = select_target_segment(&source.clip, inputs.seg_cfg, rng).map_err(|e| {
                Error::Synthesis(format!("interferer {}: {e}", source.path))
            })?;
            let (start, len, offset) =
                place(seg.start_sample, seg.length_samples, target_len, None, rng);
            let region = source.clip.slice(start, len);
            let snr = draw_snr(inputs.cfg, rng);
            let (scaled, gain) = scale_for_snr(target_rms, &region, snr)
                .map_err(|e| Error::Synthesis(format!("interferer {}: {e}", source.path)))?;
            add_into(&mut mix, &scaled, offset);
            snrs.push(snr);
            interferers.push(InterfererSource {
                file: source.path.clone(),
                segment: Segment::of(&source.clip, start, len),
                class_label: source.class_label.clone(),
                applied_gain: gain,
                placement_offset: offset,
            });
        }
    }

    let mut noise = None;
    if matches!(
        condition,
        MixCondition::BackgroundNoise | MixCondition::InterferencePlusNoise
    ) {
        if inputs.noise_pool.is_empty() {
            return Err(Error::Synthesis(format!(
                "noise pool is empty (target class `{target_class}`)"
            )));
        }
        let source = inputs.noise_pool.get(rng.gen_range(0..inputs.noise_pool.len()));
        let noise_len = source.clip.len();
        if noise_len == 0 {
            return Err(Error::Synthesis(format!("empty noise file {}", source.path)));
        }
        let crop = (noise_len > target_len).then(|| rng.gen_range(0..=noise_len - target_len));
        let (start, len, offset) = place(0, noise_len, target_len, crop, rng);
        let region = source.clip.slice(start, len);
        let snr = draw_snr(inputs.cfg, rng);
        let (scaled, gain) = scale_for_snr(target_rms, &region, snr)
            .map_err(|e| Error::Synthesis(format!("noise {}: {e}", source.path)))?;
        add_into(&mut mix, &scaled, offset);
        snrs.push(snr);
        noise = Some(NoiseSource {
            file: source.path.clone(),
            offset: start,
            length_samples: len,
            placement_offset: offset,
            applied_gain: gain,
        });
    }

    let (out, output_gain, peak_limited) = finalize_output(&mix, target.sample_rate, norm)?;
    let record = MixtureRecord {
        id: String::new(),
        label: Label::Multi,
        target_source,
        target_gain,
        target_rms,
        interferer_sources: interferers,
        noise_source: noise,
        condition: Some(condition),
        snr_db: snrs,
        output_gain,
        peak_limited,
        augmentation: None,
        duration_s: out.duration_s(),
        output_path: None,
    };
    Ok((out, record))
}
