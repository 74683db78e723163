//! Toy source material built from tone and noise primitives, for smoke tests
//! and the end-to-end check without any external audio.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::audio::{save_wav, AudioClip, WORKING_RATE};
use crate::error::{Error, Result};
use crate::mixture::{write_pool_manifest, Blocklist, PoolEntry};

/// Single-source toy classes.
pub const TOY_CLASSES: [&str; 5] = ["sine", "chirp", "pulses", "tremolo", "vibrato"];

/// Fundamental-frequency band (Hz) of each toy class, disjoint so that two
/// sources never share mel bands.
pub const TOY_BANDS: [(f64, f64); 5] = [
    (200.0, 350.0),
    (450.0, 900.0),
    (1100.0, 1700.0),
    (2100.0, 3000.0),
    (3600.0, 5000.0),
];

/// Background noise kinds.
pub const NOISE_KINDS: [&str; 2] = ["white", "brown"];

fn fade(samples: &mut [f64], n: usize) {
    let n = n.min(samples.len() / 2);
    for i in 0..n {
        let g = i as f64 / n as f64;
        samples[i] *= g;
        let j = samples.len() - 1 - i;
        samples[j] *= g;
    }
}

/// One clip of toy class `class` lasting `duration_s`, peak about 0.5.
pub fn toy_source<R: Rng + ?Sized>(class: &str, duration_s: f64, rng: &mut R) -> Result<AudioClip> {
    let sr = WORKING_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let (lo, hi) = TOY_CLASSES
        .iter()
        .position(|&c| c == class)
        .map(|i| TOY_BANDS[i])
        .ok_or_else(|| Error::Synthesis(format!("unknown toy class `{class}`")))?;
    let f0: f64 = rng.gen_range(lo..hi);
    let t = |i: usize| i as f64 / sr;
    let mut x: Vec<f64> = match class {
        "sine" => (0..n).map(|i| (TAU * f0 * t(i)).sin()).collect(),
        "chirp" => {
            let f1: f64 = rng.gen_range(lo..hi);
            let k = (f1 - f0) / duration_s;
            (0..n)
                .map(|i| (TAU * (f0 * t(i) + 0.5 * k * t(i) * t(i))).sin())
                .collect()
        }
        "pulses" => {
            let rate: f64 = rng.gen_range(2.0..8.0);
            (0..n)
                .map(|i| {
                    let on = (t(i) * rate).fract() < 0.5;
                    if on {
                        (TAU * f0 * t(i)).sin()
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        "tremolo" => {
            let rate: f64 = rng.gen_range(3.0..12.0);
            (0..n)
                .map(|i| (0.6 + 0.4 * (TAU * rate * t(i)).sin()) * (TAU * f0 * t(i)).sin())
                .collect()
        }
        "vibrato" => {
            let rate: f64 = rng.gen_range(3.0..8.0);
            let depth = 0.03 * f0;
            (0..n)
                .map(|i| {
                    let phase = TAU * f0 * t(i) - depth / rate * (TAU * rate * t(i)).cos();
                    phase.sin()
                })
                .collect()
        }
        _ => unreachable!(),
    };
    fade(&mut x, (0.01 * sr) as usize);
    Ok(AudioClip::new(x.iter().map(|&v| (0.5 * v) as f32).collect(), WORKING_RATE))
}

pub fn toy_noise<R: Rng + ?Sized>(kind: &str, duration_s: f64, rng: &mut R) -> Result<AudioClip> {
    let n = (duration_s * WORKING_RATE as f64).round() as usize;
    let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<f64> = match kind {
        "white" => white,
        "brown" => {
            // leaky integrator
            let mut acc = 0.0;
            let y: Vec<f64> = white
                .iter()
                .map(|w| {
                    acc = 0.98 * acc + w;
                    acc
                })
                .collect();
            let peak = y.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            y.into_iter().map(|v| v / peak).collect()
        }
        other => return Err(Error::Synthesis(format!("unknown noise kind `{other}`"))),
    };
    Ok(AudioClip::new(x.iter().map(|&v| (0.3 * v) as f32).collect(), WORKING_RATE))
}

/// Paths of a generated toy corpus.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub pool_manifest: PathBuf,
    pub noise_manifest: PathBuf,
    pub blocklist: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ToyOptions {
    pub per_class: usize,
    pub n_noise: usize,
    pub min_dur_s: f64,
    pub max_dur_s: f64,
    pub seed: u64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            per_class: 40,
            n_noise: 10,
            min_dur_s: 1.0,
            max_dur_s: 3.0,
            seed: 0,
        }
    }
}

/// Writes `pool/`, `noise/`, `pool.csv`, `noise.csv` and `blocklist.txt`
/// under `dir`.
pub fn generate_toy_corpus(dir: &Path, opts: &ToyOptions) -> Result<ToyCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for sub in ["pool", "noise"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut pool = Vec::new();
    for class in TOY_CLASSES {
        for k in 0..opts.per_class {
            let dur = rng.gen_range(opts.min_dur_s..=opts.max_dur_s);
            let clip = toy_source(class, dur, &mut rng)?;
            let rel = format!("pool/{class}_{k:03}.wav");
            save_wav(&clip, dir.join(&rel))?;
            pool.push(PoolEntry {
                path: rel,
                class_label: class.into(),
                duration_s: clip.duration_s(),
            });
        }
    }
    let mut noise = Vec::new();
    for k in 0..opts.n_noise {
        let kind = NOISE_KINDS[k % NOISE_KINDS.len()];
        let dur = rng.gen_range(opts.min_dur_s..=opts.max_dur_s);
        let clip = toy_noise(kind, dur, &mut rng)?;
        let rel = format!("noise/{kind}_{k:03}.wav");
        save_wav(&clip, dir.join(&rel))?;
        noise.push(PoolEntry {
            path: rel,
            class_label: kind.into(),
            duration_s: clip.duration_s(),
        });
    }
    let out = ToyCorpus {
        pool_manifest: dir.join("pool.csv"),
        noise_manifest: dir.join("noise.csv"),
        blocklist: dir.join("blocklist.txt"),
    };
    write_pool_manifest(&out.pool_manifest, &pool)?;
    write_pool_manifest(&out.noise_manifest, &noise)?;
    let mut bl = Blocklist::default();
    bl.insert("sine", "vibrato");
    std::fs::write(&out.blocklist, bl.to_text()).map_err(|e| Error::io(&out.blocklist, e))?;
    Ok(out)
}
