//! Dataset splitting, AdamW with warmup + cosine decay, and the epoch loop
//! with best-validation-accuracy checkpoint selection.

mod optim;
mod split;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    backward_into, bce_loss, forward, predict, Checkpoint, CheckpointMetrics, ClassifierArch,
    ClassifierParams, ForwardMode,
};
use crate::embeddings::{ClipRef, EmbeddingProvider, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::mixture::{draw_repeat_count, repeat_capped, AugmentConfig, MixtureRecord};
use crate::Label;

pub use optim::{adamw_step, lr_at, warmup_steps, OptimizerState, TrainConfig};
pub use split::{split_dataset, split_groups, SplitIndices};

/// Examples per gradient chunk. Chunks are summed in index order, so the
/// reduced gradient does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

const STREAM_SHUFFLE: u64 = 1 << 40;
const STREAM_EXAMPLE: u64 = 1 << 41;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub seq: EmbeddingSequence,
    pub label: Label,
}

/// Fetches embeddings for manifest records. Audio paths resolve against
/// `manifest_dir`.
pub fn load_examples(
    records: &[MixtureRecord],
    manifest_dir: &Path,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Example>> {
    records
        .par_iter()
        .map(|r| {
            let path = r
                .output_path
                .as_ref()
                .map(|p| manifest_dir.join(p))
                .unwrap_or_default();
            let seq = provider.embed(&ClipRef {
                id: r.id.clone(),
                path,
            })?;
            seq.validate()?;
            if seq.dim != provider.dim() {
                return Err(Error::Format(format!(
                    "{}: embedding dim {} differs from {}",
                    r.id,
                    seq.dim,
                    provider.dim()
                )));
            }
            Ok(Example {
                id: r.id.clone(),
                seq,
                label: r.label,
            })
        })
        .collect()
}

/// Repeats the frame sequence `n ~ draw_repeat_count` times, capped at
/// `max_len_s` worth of frames (never shorter than the input).
pub fn augment_sequence<R: Rng + ?Sized>(
    seq: &EmbeddingSequence,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> EmbeddingSequence {
    let n = draw_repeat_count(cfg, rng);
    if n <= 1 {
        return seq.clone();
    }
    let cap = if seq.frame_hop_s > 0.0 {
        ((cfg.max_len_s / seq.frame_hop_s).floor() as usize).max(seq.n_frames)
    } else {
        seq.n_frames * n as usize
    };
    let frames = repeat_capped(&seq.frames, n, cap * seq.dim);
    let n_frames = frames.len() / seq.dim;
    EmbeddingSequence {
        frames,
        n_frames,
        dim: seq.dim,
        frame_hop_s: seq.frame_hop_s,
    }
}

/// One row of the metrics log. Epoch 0 is the untrained initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr_last: Option<f64>,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, log: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

/// Eval-mode loss and accuracy over `examples`.
pub fn evaluate(params: &ClassifierParams, examples: &[Example], threshold: f64) -> Result<(f64, f64)> {
    let probs: Vec<f64> = examples
        .par_iter()
        .map(|ex| predict(params, &ex.seq))
        .collect::<Result<_>>()?;
    let n = examples.len() as f64;
    let loss = probs
        .iter()
        .zip(examples)
        .map(|(&p, ex)| bce_loss(p, ex.label.target()))
        .sum::<f64>()
        / n;
    let correct = probs
        .iter()
        .zip(examples)
        .filter(|(&p, ex)| Label::from_probability(p, threshold) == ex.label)
        .count();
    Ok((loss, correct as f64 / n))
}

fn batch_gradient(
    params: &ClassifierParams,
    train: &[Example],
    batch: &[usize],
    first_example: u64,
    aug: &AugmentConfig,
    seed: u64,
) -> Result<(ClassifierParams, f64)> {
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<(ClassifierParams, f64)> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grads = ClassifierParams::zeros(&params.arch);
            let mut loss = 0.0;
            for (j, &i) in chunk.iter().enumerate() {
                let ex = &train[i];
                let mut rng = stream(seed, STREAM_EXAMPLE + first_example + (c * GRAD_CHUNK + j) as u64);
                let seq = augment_sequence(&ex.seq, aug, &mut rng);
                let (p, trace) = forward(params, &seq, ForwardMode::Train(&mut rng))
                    .map_err(|e| e.context(ex.id.clone()))?;
                let y = ex.label.target();
                loss += bce_loss(p, y);
                backward_into(params, &trace, y, scale, &mut grads);
            }
            Ok((grads, loss))
        })
        .collect::<Result<_>>()?;
    let mut total = ClassifierParams::zeros(&params.arch);
    let mut loss = 0.0;
    for (g, l) in &partials {
        total.add_scaled(g, 1.0);
        loss += l;
    }
    Ok((total, loss))
}

/// Trains from a seeded initialization and returns the checkpoint with the
/// best validation accuracy (earliest epoch on ties).
pub fn train(
    train: &[Example],
    val: &[Example],
    arch: &ClassifierArch,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    aug.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training(format!(
            "need non-empty train and val splits, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let dim = train[0].seq.dim;
    if let Some(ex) = train.iter().chain(val).find(|e| e.seq.dim != dim) {
        return Err(Error::Training(format!(
            "{}: embedding dim {} differs from {dim}",
            ex.id, ex.seq.dim
        )));
    }
    if arch.input_dim != 0 && arch.input_dim != dim {
        return Err(Error::Training(format!(
            "classifier input_dim {} but embeddings have dim {dim}",
            arch.input_dim
        )));
    }
    let arch = arch.with_input_dim(dim);
    let hop = train[0].seq.frame_hop_s;
    let frame_hop_s = (hop > 0.0).then_some(hop);

    let mut params = ClassifierParams::init(&arch, &mut stream(seed, 0));
    let mut opt = OptimizerState::new(&params);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;

    if cfg.epochs == 0 {
        let (val_loss, val_accuracy) = evaluate(&params, val, cfg.decision_threshold)?;
        let row = EpochMetrics {
            epoch: 0,
            train_loss: None,
            val_loss,
            val_accuracy,
            lr_last: None,
        };
        let metrics = CheckpointMetrics {
            train_loss: None,
            val_loss: Some(val_loss),
            val_accuracy: Some(val_accuracy),
        };
        return Ok(TrainOutcome {
            checkpoint: Checkpoint::new(params, 0, metrics, seed, frame_hop_s),
            log: vec![row],
            best_epoch: 0,
        });
    }

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(seed, STREAM_SHUFFLE + epoch as u64));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let first = ((epoch - 1) * train.len() + b * cfg.batch_size) as u64;
            let (grads, loss) = batch_gradient(&params, train, batch, first, aug, seed)
                .map_err(|e| e.context(format!("epoch {epoch} step {step}")))?;
            loss_sum += loss;
            lr = lr_at(step, total_steps, cfg);
            adamw_step(&mut params, &grads, &mut opt, lr, cfg)
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, val_accuracy) = evaluate(&params, val, cfg.decision_threshold)
            .map_err(|e| e.context(format!("epoch {epoch} validation")))?;
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.4} val_loss {val_loss:.4} val_acc {val_accuracy:.4} lr {lr:.3e}"
        );
        log.push(EpochMetrics {
            epoch,
            train_loss: Some(train_loss),
            val_loss,
            val_accuracy,
            lr_last: Some(lr),
        });
        if best.as_ref().map_or(true, |(acc, _)| val_accuracy > *acc) {
            let metrics = CheckpointMetrics {
                train_loss: Some(train_loss),
                val_loss: Some(val_loss),
                val_accuracy: Some(val_accuracy),
            };
            best = Some((
                val_accuracy,
                Checkpoint::new(params.clone(), epoch, metrics, seed, frame_hop_s),
            ));
        }
    }
    let (_, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_epoch: checkpoint.header.epoch,
        checkpoint,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Class 1 frames ~ N(+1, 0.1), class 0 frames ~ N(-1, 0.1).
    pub(crate) fn separable(n: usize, dim: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Single } else { Label::Multi };
                let mean = if label == Label::Single { 1.0 } else { -1.0 };
                let t = rng.gen_range(3..8);
                let dist = Normal::new(mean, 0.1).unwrap();
                let frames = (0..t * dim).map(|_| dist.sample(&mut rng) as f32).collect();
                Example {
                    id: format!("ex{i}"),
                    seq: EmbeddingSequence::new(frames, t, dim, 0.1).unwrap(),
                    label,
                }
            })
            .collect()
    }

    fn toy_arch() -> ClassifierArch {
        ClassifierArch {
            input_dim: 0,
            hidden: 8,
            mlp_hidden: 8,
            dropout_rate: 0.5,
        }
    }

    #[test]
    fn augmented_sequence_repeats_rows() {
        let seq = EmbeddingSequence::new(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1.0).unwrap();
        let cfg = AugmentConfig {
            repeat_prob: 1.0,
            repeat_min: 3,
            repeat_max: 3,
            max_len_s: 5.0,
        };
        let out = augment_sequence(&seq, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.n_frames, 5);
        assert_eq!(out.frames, vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
        let long = EmbeddingSequence::new(vec![0.0; 16], 8, 2, 1.0).unwrap();
        assert_eq!(augment_sequence(&long, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).n_frames, 8);
    }

    #[test]
    fn separable_toy_reaches_high_accuracy() {
        let train_set = separable(200, 4, 1);
        let val = separable(40, 4, 2);
        let cfg = TrainConfig {
            lr_base: 1e-2,
            epochs: 5,
            batch_size: 16,
            ..Default::default()
        };
        let out = train(&train_set, &val, &toy_arch(), &cfg, &AugmentConfig::default(), 3).unwrap();
        let best = out.log.iter().map(|r| r.val_accuracy).fold(0.0, f64::max);
        assert!(best >= 0.99, "log: {:?}", out.log);
        assert_eq!(out.checkpoint.header.metrics.val_accuracy, Some(best));
        let first_best = out.log.iter().find(|r| r.val_accuracy == best).unwrap().epoch;
        assert_eq!(out.best_epoch, first_best);
    }

    #[test]
    fn train_loss_falls_on_separable_toy() {
        let train_set = separable(200, 4, 5);
        let val = separable(40, 4, 6);
        let cfg = TrainConfig {
            lr_base: 3e-3,
            epochs: 8,
            batch_size: 16,
            ..Default::default()
        };
        let out = train(&train_set, &val, &toy_arch(), &cfg, &AugmentConfig::default(), 3).unwrap();
        let losses: Vec<f64> = out.log.iter().map(|r| r.train_loss.unwrap()).collect();
        let rises = losses[1..].windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 1, "{losses:?}");
    }

    #[test]
    fn zero_epochs_returns_init() {
        let train_set = separable(20, 3, 1);
        let val = separable(10, 3, 2);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(&train_set, &val, &toy_arch(), &cfg, &AugmentConfig::default(), 9).unwrap();
        let init = ClassifierParams::init(&toy_arch().with_input_dim(3), &mut stream(9, 0));
        assert_eq!(out.checkpoint.params, init);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.log.len(), 1);
        assert!(out.checkpoint.header.metrics.val_accuracy.is_some());
    }

    #[test]
    fn reruns_are_identical() {
        let train_set = separable(40, 3, 1);
        let val = separable(10, 3, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 12,
            ..Default::default()
        };
        let a = train(&train_set, &val, &toy_arch(), &cfg, &AugmentConfig::default(), 4).unwrap();
        let b = train(&train_set, &val, &toy_arch(), &cfg, &AugmentConfig::default(), 4).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint, b.checkpoint);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &a.log).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,val_accuracy,lr_last\n"));
        assert_eq!(read_metrics_csv(&p).unwrap(), a.log);
    }

    #[test]
    fn gradient_reduction_is_chunk_order_sum() {
        let ex = separable(20, 3, 8);
        let params = ClassifierParams::init(&toy_arch().with_input_dim(3), &mut stream(1, 0));
        let batch: Vec<usize> = (0..20).collect();
        let aug = AugmentConfig::default();
        let (g, _) = batch_gradient(&params, &ex, &batch, 0, &aug, 5).unwrap();
        // same computation, strictly sequential
        let mut seq = ClassifierParams::zeros(&params.arch);
        for c in batch.chunks(GRAD_CHUNK) {
            let mut part = ClassifierParams::zeros(&params.arch);
            for &i in c {
                let mut rng = stream(5, STREAM_EXAMPLE + i as u64);
                let s = augment_sequence(&ex[i].seq, &aug, &mut rng);
                let (_, tr) = forward(&params, &s, ForwardMode::Train(&mut rng)).unwrap();
                backward_into(&params, &tr, ex[i].label.target(), 1.0 / 20.0, &mut part);
            }
            seq.add_scaled(&part, 1.0);
        }
        assert_eq!(g, seq);
    }

    #[test]
    fn mismatched_dims_fail() {
        let a = separable(10, 3, 1);
        let b = separable(10, 4, 2);
        assert!(matches!(
            train(&a, &b, &toy_arch(), &TrainConfig::default(), &AugmentConfig::default(), 0),
            Err(Error::Training(_))
        ));
    }
}
