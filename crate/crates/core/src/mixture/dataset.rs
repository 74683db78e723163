use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{preprocess, save_wav, NormalizeConfig};
use crate::error::{Error, Result};
use crate::segmenter::{select_target_segment, Segment, SegmenterConfig};
use crate::Label;

use super::synth::finalize_output;
use super::{
    synthesize_mixture, AugmentConfig, Blocklist, MixCondition, MixConfig, MixInputs,
    MixtureRecord, SourcePool, TargetSource,
};

/// Independent random stream for record `index` under `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub struct BuildOptions<'a> {
    pub n_examples: usize,
    pub mix_cfg: &'a MixConfig,
    pub aug_cfg: &'a AugmentConfig,
    pub seg_cfg: &'a SegmenterConfig,
    pub norm_cfg: &'a NormalizeConfig,
    /// Where audio goes (`<out_dir>/audio/<id>.wav`); `None` is a manifest-only dry run.
    pub out_dir: Option<&'a Path>,
    pub seed: u64,
}

fn build_record(
    index: usize,
    single_pool: &SourcePool,
    inputs: &MixInputs<'_>,
    opts: &BuildOptions<'_>,
) -> Result<MixtureRecord> {
    let mut rng = record_rng(opts.seed, index as u64);
    let label = if index % 2 == 0 { Label::Single } else { Label::Multi };
    let source = single_pool.get(rng.gen_range(0..single_pool.len()));
    let seg = select_target_segment(&source.clip, opts.seg_cfg, &mut rng)
        .map_err(|e| Error::Synthesis(format!("target {}: {e}", source.path)))?;
    let cap = source.clip.samples_for(opts.aug_cfg.max_len_s).max(1);
    let region = source
        .clip
        .slice(seg.start_sample, seg.length_samples.min(cap));
    let (target, trimmed, target_gain) = preprocess(&region, opts.norm_cfg)
        .map_err(|e| Error::Synthesis(format!("target {}: {e}", source.path)))?;
    let target_source = TargetSource {
        file: source.path.clone(),
        segment: Segment::of(&source.clip, seg.start_sample + trimmed, target.len()),
        class_label: source.class_label.clone(),
    };
    let id = format!("mix_{index:06}");

    let (audio, mut record) = match label {
        Label::Single => {
            let mix: Vec<f64> = target.samples.iter().map(|&x| x as f64).collect();
            let (out, output_gain, peak_limited) =
                finalize_output(&mix, target.sample_rate, opts.norm_cfg)?;
            let record = MixtureRecord {
                id: String::new(),
                label,
                target_rms: crate::audio::rms(&target.samples),
                target_source,
                target_gain,
                interferer_sources: Vec::new(),
                noise_source: None,
                condition: None,
                snr_db: Vec::new(),
                output_gain,
                peak_limited,
                augmentation: None,
                duration_s: out.duration_s(),
                output_path: None,
            };
            (out, record)
        }
        Label::Multi => {
            let condition = opts.mix_cfg.draw_condition(&mut rng);
            synthesize_mixture(
                &target,
                target_source,
                target_gain,
                condition,
                inputs,
                opts.norm_cfg,
                &mut rng,
            )?
        }
    };
    record.id = id;
    if let Some(dir) = opts.out_dir {
        let rel = format!("audio/{}.wav", record.id);
        save_wav(&audio, dir.join(&rel))?;
        record.output_path = Some(rel);
    }
    Ok(record)
}

/// Builds a 1:1 balanced dataset of `n_examples` records.
///
/// Even indices are single-source, odd indices multi-source. Each record draws
/// from its own stream derived from `(seed, index)`, so the result does not
/// depend on thread scheduling.
pub fn build_dataset(
    single_pool: &SourcePool,
    noise_pool: &SourcePool,
    blocklist: &Blocklist,
    opts: &BuildOptions<'_>,
) -> Result<Vec<MixtureRecord>> {
    if opts.n_examples % 2 != 0 {
        return Err(Error::Synthesis(format!(
            "n_examples must be even, got {}",
            opts.n_examples
        )));
    }
    if single_pool.is_empty() {
        return Err(Error::Synthesis("single-source pool is empty".into()));
    }
    if let Some(dir) = opts.out_dir {
        let audio = dir.join("audio");
        std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    }
    let inputs = MixInputs {
        cfg: opts.mix_cfg,
        seg_cfg: opts.seg_cfg,
        interferer_pool: single_pool,
        noise_pool,
        blocklist,
    };
    (0..opts.n_examples)
        .into_par_iter()
        .map(|i| build_record(i, single_pool, &inputs, opts).map_err(|e| e.context(format!("record {i}"))))
        .collect()
}

/// Counts of multi-source records per condition, in [`MixCondition::ALL`] order.
pub fn condition_histogram(records: &[MixtureRecord]) -> [usize; 4] {
    let mut h = [0usize; 4];
    for c in records.iter().filter_map(|r| r.condition) {
        h[MixCondition::index(c)] += 1;
    }
    h
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[MixtureRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<MixtureRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MixtureRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
