//! Stage drivers shared by the command-line tool and the tests. Each stage
//! reads its inputs from disk, writes its outputs under one directory and
//! returns a summary.

mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::classifier::{load_checkpoint, save_checkpoint};
use crate::config::PipelineConfig;
use crate::embeddings::{
    read_embeddings, write_embeddings, ClipRef, EmbeddingProvider, FileProvider, LogMelProvider,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    class_counts, compare_filters, format_score_table, labeled_metrics, predict_corpus,
    read_corpus, read_scores, read_votes, score_table, summarize, summary_rows, write_corpus,
    write_predictions, write_score_table, write_summary_csv, CorpusEntry, FlowTable, Metrics,
    PredictionRecord, PredictionSummary, ScoreRow,
};
use crate::mixture::{
    build_dataset, condition_histogram, read_manifest, write_manifest, Blocklist, BuildOptions,
    MixtureRecord, SourcePool,
};
use crate::training::{load_examples, split_dataset, train, write_metrics_csv, TrainOutcome};

pub use report::{render_report, render_svg, render_text};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TEST_CORPUS_FILE: &str = "test_corpus.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub struct SynthSummary {
    pub records: Vec<MixtureRecord>,
    pub manifest: PathBuf,
    pub histogram: [usize; 4],
}

/// Builds `n` mixtures from the pools and writes `manifest.jsonl` plus
/// `audio/` under `out_dir` (manifest only when `dry_run`).
pub fn run_synth(
    cfg: &PipelineConfig,
    pool: &Path,
    noise: Option<&Path>,
    blocklist: Option<&Path>,
    out_dir: &Path,
    n: usize,
    seed: u64,
    dry_run: bool,
) -> Result<SynthSummary> {
    let single = SourcePool::load(pool)?;
    let noise = match noise {
        Some(p) => SourcePool::load(p)?,
        None => SourcePool::default(),
    };
    let blocklist = match blocklist {
        Some(p) => Blocklist::load(p)?,
        None => Blocklist::default(),
    };
    create_dir(out_dir)?;
    let opts = BuildOptions {
        n_examples: n,
        mix_cfg: &cfg.mix,
        aug_cfg: &cfg.augment,
        seg_cfg: &cfg.segmenter,
        norm_cfg: &cfg.normalize,
        out_dir: (!dry_run).then_some(out_dir),
        seed,
    };
    let records = build_dataset(&single, &noise, &blocklist, &opts)?;
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &records)?;
    Ok(SynthSummary {
        histogram: condition_histogram(&records),
        records,
        manifest,
    })
}

/// Clip id and audio location for every row of a mixture manifest (`.jsonl`)
/// or corpus manifest (`.csv`).
pub fn manifest_clips(manifest: &Path) -> Result<Vec<ClipRef>> {
    let base = parent_dir(manifest);
    if manifest.extension().is_some_and(|e| e == "jsonl") {
        Ok(read_manifest(manifest)?
            .into_iter()
            .map(|r| ClipRef {
                path: r.output_path.as_ref().map(|p| base.join(p)).unwrap_or_default(),
                id: r.id,
            })
            .collect())
    } else {
        Ok(read_corpus(manifest)?
            .into_iter()
            .map(|e| ClipRef {
                path: crate::mixture::resolve(&base, &e.path),
                id: e.clip_id,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturizeMode {
    /// Compute log-mel features from the audio.
    Logmel,
    /// Validate embedding files that an external encoder already wrote.
    Import,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeaturizeSummary {
    pub written: usize,
    pub skipped: usize,
    /// Clips with no usable signal; no file is written for them.
    pub failed: Vec<String>,
    pub dim: usize,
}

fn up_to_date(output: &Path, input: &Path) -> bool {
    let mtime = |p: &Path| std::fs::metadata(p).and_then(|m| m.modified()).ok();
    match (mtime(output), mtime(input)) {
        (Some(o), Some(i)) => o >= i,
        _ => false,
    }
}

/// One `<id>.emb` per manifest row in `out_dir`. Log-mel mode skips outputs
/// newer than their audio; import mode checks every file parses and all
/// dimensions agree.
pub fn run_featurize(
    cfg: &PipelineConfig,
    manifest: &Path,
    out_dir: &Path,
    mode: FeaturizeMode,
) -> Result<FeaturizeSummary> {
    let clips = manifest_clips(manifest)?;
    match mode {
        FeaturizeMode::Logmel => {
            create_dir(out_dir)?;
            let provider = LogMelProvider::new(&cfg.featurizer, &cfg.normalize);
            let outcomes: Vec<Result<Option<bool>>> = clips
                .par_iter()
                .map(|c| {
                    let out = out_dir.join(format!("{}.emb", c.id));
                    if up_to_date(&out, &c.path) {
                        return Ok(Some(false));
                    }
                    match provider.embed(c) {
                        Ok(seq) => write_embeddings(&seq, &out).map(|_| Some(true)),
                        Err(Error::Degenerate(msg)) => {
                            log::warn!("{}: {msg}", c.id);
                            Ok(None)
                        }
                        Err(e) => Err(e.context(c.id.clone())),
                    }
                })
                .collect();
            let mut s = FeaturizeSummary {
                dim: cfg.featurizer.n_mels,
                ..Default::default()
            };
            for (c, o) in clips.iter().zip(outcomes) {
                match o? {
                    Some(true) => s.written += 1,
                    Some(false) => s.skipped += 1,
                    None => s.failed.push(c.id.clone()),
                }
            }
            Ok(s)
        }
        FeaturizeMode::Import => {
            let mut dim = None;
            for c in &clips {
                let path = out_dir.join(format!("{}.emb", c.id));
                let seq = read_embeddings(&path).map_err(|e| match e {
                    Error::Io { .. } => Error::Format(format!("{e}")),
                    other => other,
                })?;
                match dim {
                    None => dim = Some(seq.dim),
                    Some(d) if d != seq.dim => {
                        return Err(Error::Format(format!(
                            "{}: dim {} differs from {d} in earlier files",
                            path.display(),
                            seq.dim
                        )))
                    }
                    _ => {}
                }
            }
            Ok(FeaturizeSummary {
                skipped: clips.len(),
                dim: dim.unwrap_or(0),
                ..Default::default()
            })
        }
    }
}

/// Embedding source: files in `emb_dir` when given, else log-mel on the fly.
pub fn make_provider(
    cfg: &PipelineConfig,
    emb_dir: Option<&Path>,
    first_id: Option<&str>,
) -> Result<Box<dyn EmbeddingProvider>> {
    match emb_dir {
        Some(dir) => {
            let id = first_id.ok_or_else(|| Error::Format("empty manifest".into()))?;
            Ok(Box::new(FileProvider::probe(dir, id, cfg.featurizer.hop_s)?))
        }
        None => Ok(Box::new(LogMelProvider::new(&cfg.featurizer, &cfg.normalize))),
    }
}

pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub split_sizes: [usize; 3],
    pub checkpoint: PathBuf,
    pub test_corpus: PathBuf,
}

fn corpus_of(records: &[MixtureRecord], base: &Path) -> Result<Vec<CorpusEntry>> {
    let base = std::fs::canonicalize(base).map_err(|e| Error::io(base, e))?;
    Ok(records
        .iter()
        .map(|r| CorpusEntry {
            clip_id: r.id.clone(),
            path: r
                .output_path
                .as_ref()
                .map(|p| base.join(p).display().to_string())
                .unwrap_or_default(),
            duration_s: r.duration_s,
            class_labels: Some(r.target_source.class_label.clone()),
            label: Some(r.label),
        })
        .collect())
}

/// Splits the manifest, trains, and writes `model.ckpt`, `metrics.csv` and the
/// held-out `test_corpus.csv` under `out_dir`.
pub fn run_train(
    cfg: &PipelineConfig,
    manifest: &Path,
    emb_dir: Option<&Path>,
    out_dir: &Path,
    seed: u64,
) -> Result<TrainSummary> {
    let records = read_manifest(manifest)?;
    let (tr, va, te) = split_dataset(&records, cfg.train.split_ratio, seed)?;
    let base = parent_dir(manifest);
    let provider = make_provider(cfg, emb_dir, records.first().map(|r| r.id.as_str()))?;
    let train_ex = load_examples(&tr, &base, provider.as_ref())?;
    let val_ex = load_examples(&va, &base, provider.as_ref())?;
    let outcome = train(&train_ex, &val_ex, &cfg.classifier, &cfg.train, &cfg.augment, seed)?;
    create_dir(out_dir)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &outcome.checkpoint)?;
    write_metrics_csv(out_dir.join(METRICS_FILE), &outcome.log)?;
    let test_corpus = out_dir.join(TEST_CORPUS_FILE);
    write_corpus(&test_corpus, &corpus_of(&te, &base)?)?;
    Ok(TrainSummary {
        outcome,
        split_sizes: [tr.len(), va.len(), te.len()],
        checkpoint,
        test_corpus,
    })
}

pub struct FilterSummary {
    pub records: Vec<PredictionRecord>,
    pub summary: PredictionSummary,
    pub metrics: Option<Metrics>,
    pub flow: Option<FlowTable>,
    pub score_rows: Option<Vec<ScoreRow>>,
}

pub struct FilterInputs<'a> {
    pub corpus: &'a Path,
    pub checkpoint: &'a Path,
    pub emb_dir: Option<&'a Path>,
    pub votes: Option<&'a Path>,
    pub scores: Option<&'a Path>,
    pub out_dir: &'a Path,
}

/// Scores a corpus and writes `predictions.jsonl`, `summary.csv`, and when
/// inputs allow, `scores_table.{csv,txt}` and `class_counts.csv`.
pub fn run_filter(cfg: &PipelineConfig, io: &FilterInputs<'_>) -> Result<FilterSummary> {
    let corpus = read_corpus(io.corpus)?;
    let ck = load_checkpoint(io.checkpoint)?;
    let provider = make_provider(cfg, io.emb_dir, corpus.first().map(|e| e.clip_id.as_str()))?;
    let records = predict_corpus(&corpus, &parent_dir(io.corpus), provider.as_ref(), &ck.params, &cfg.filter)?;
    let summary = summarize(&records);
    let metrics = if corpus.iter().any(|e| e.label.is_some()) {
        Some(labeled_metrics(&records, &corpus, cfg.filter.threshold)?)
    } else {
        None
    };
    let votes = io.votes.map(read_votes).transpose()?;
    let flow = votes.as_deref().map(|v| compare_filters(&records, v)).transpose()?;
    let score_rows = match io.scores {
        Some(p) => Some(score_table(&records, &read_scores(p)?, votes.as_deref())?),
        None => None,
    };

    create_dir(io.out_dir)?;
    write_predictions(io.out_dir.join(PREDICTIONS_FILE), &records)?;
    write_summary_csv(
        io.out_dir.join(SUMMARY_FILE),
        &summary_rows(&summary, metrics.as_ref(), flow.as_ref()),
    )?;
    if let Some(rows) = &score_rows {
        write_score_table(io.out_dir.join("scores_table.csv"), rows)?;
        let txt = io.out_dir.join("scores_table.txt");
        std::fs::write(&txt, format_score_table(rows)).map_err(|e| Error::io(&txt, e))?;
    }
    let counts = class_counts(&records, &corpus);
    if !counts.is_empty() {
        let path = io.out_dir.join("class_counts.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        w.write_record(["class_label", "single", "multi"])?;
        for (c, (s, m)) in &counts {
            w.write_record([c.as_str(), &s.to_string(), &m.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(FilterSummary {
        records,
        summary,
        metrics,
        flow,
        score_rows,
    })
}
