//! Metrics, score aggregation, rule-based filters and corpus-level
//! prediction metadata.

mod metrics;
mod votes;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::WORKING_RATE;
use crate::classifier::{predict, ClassifierParams};
use crate::embeddings::{ClipRef, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::mixture::resolve;
use crate::segmenter::window_bounds;
use crate::Label;

pub use metrics::{
    aggregate_scores, classify_metrics, f1_score, metrics_from_confusion, Confusion, Metrics,
};
pub use votes::{parse_votes, pp_accept, read_scores, read_votes, Rating, ScoreRecord, VoteRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_dur_s: f64,
    pub max_dur_s: f64,
    pub threshold: f64,
    /// Also score fixed-length chunks of every clip.
    pub chunks: bool,
    pub chunk_len_s: f64,
    pub chunk_hop_s: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_dur_s: 0.5,
            max_dur_s: 30.0,
            threshold: 0.5,
            chunks: false,
            chunk_len_s: 1.0,
            chunk_hop_s: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_dur_s > 0.0 && self.min_dur_s < self.max_dur_s) {
            return Err(Error::config("filter.min_dur_s", "need 0 < min_dur_s < max_dur_s"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("filter.threshold", "must be in (0, 1)"));
        }
        if !(self.chunk_len_s > 0.0) {
            return Err(Error::config("filter.chunk_len_s", "must be > 0"));
        }
        if !(self.chunk_hop_s > 0.0) {
            return Err(Error::config("filter.chunk_hop_s", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationFlag {
    Kept,
    TooShort,
    TooLong,
}

/// Durations exactly at either bound are kept.
pub fn duration_filter(duration_s: f64, cfg: &FilterConfig) -> DurationFlag {
    if duration_s < cfg.min_dur_s {
        DurationFlag::TooShort
    } else if duration_s > cfg.max_dur_s {
        DurationFlag::TooLong
    } else {
        DurationFlag::Kept
    }
}

/// One row of a corpus manifest (`clip_id,path,duration_s[,class_labels][,label]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub clip_id: String,
    pub path: String,
    pub duration_s: f64,
    /// Comma-separated class names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_labels: Option<String>,
    /// Ground truth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl CorpusEntry {
    pub fn classes(&self) -> Vec<&str> {
        self.class_labels
            .as_deref()
            .map(|s| s.split(',').map(str::trim).filter(|c| !c.is_empty()).collect())
            .unwrap_or_default()
    }
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if headers.len() < 3 || headers[..3] != ["clip_id", "path", "duration_s"] {
        return Err(Error::Format(format!(
            "{}: header must start with clip_id,path,duration_s",
            path.display()
        )));
    }
    if let Some(h) = headers[3..].iter().find(|h| *h != "class_labels" && *h != "label") {
        return Err(Error::Format(format!("{}: unknown column `{h}`", path.display())));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<CorpusEntry>().enumerate() {
        let e = row.map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if !(e.duration_s >= 0.0) {
            return Err(Error::Format(format!(
                "{} line {}: negative duration",
                path.display(),
                i + 2
            )));
        }
        out.push(e);
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, entries: &[CorpusEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let with_classes = entries.iter().any(|e| e.class_labels.is_some());
    let with_label = entries.iter().any(|e| e.label.is_some());
    let mut header = vec!["clip_id", "path", "duration_s"];
    if with_classes {
        header.push("class_labels");
    }
    if with_label {
        header.push("label");
    }
    w.write_record(&header)?;
    for e in entries {
        let mut row = vec![e.clip_id.clone(), e.path.clone(), e.duration_s.to_string()];
        if with_classes {
            row.push(e.class_labels.clone().unwrap_or_default());
        }
        if with_label {
            row.push(e.label.map(|l| l.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPrediction {
    pub start_s: f64,
    pub end_s: f64,
    /// `None` for chunks with no usable signal.
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub duration_s: f64,
    pub probability: Option<f64>,
    pub decision: Option<Label>,
    pub duration_flag: DurationFlag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_predictions: Option<Vec<ChunkPrediction>>,
    /// Why the clip could not be scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    /// Scored, inside the duration bounds.
    pub fn usable(&self) -> Option<Label> {
        match self.duration_flag {
            DurationFlag::Kept => self.decision,
            _ => None,
        }
    }
}

/// `(start_s, end_s)` windows of `len_s` every `hop_s`; a clip shorter than
/// one window yields a single clamped window.
pub fn chunk_windows(duration_s: f64, len_s: f64, hop_s: f64) -> Vec<(f64, f64)> {
    let sr = WORKING_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let win = ((len_s * sr).round() as usize).max(1);
    let hop = ((hop_s * sr).round() as usize).max(1);
    if n == 0 {
        return vec![(0.0, 0.0)];
    }
    window_bounds(n, win, hop)
        .into_iter()
        .map(|(s, l)| (s as f64 / sr, (s + l) as f64 / sr))
        .collect()
}

fn predict_one(
    entry: &CorpusEntry,
    base_dir: &Path,
    provider: &dyn EmbeddingProvider,
    params: &ClassifierParams,
    cfg: &FilterConfig,
) -> Result<(f64, Option<Vec<ChunkPrediction>>)> {
    let clip = ClipRef {
        id: entry.clip_id.clone(),
        path: resolve(base_dir, &entry.path),
    };
    let p = predict(params, &provider.embed(&clip)?)?;
    let chunks = if cfg.chunks {
        let windows = chunk_windows(entry.duration_s, cfg.chunk_len_s, cfg.chunk_hop_s);
        let seqs = provider.embed_chunks(&clip, &windows)?;
        let mut out = Vec::with_capacity(windows.len());
        for ((s, e), seq) in windows.into_iter().zip(seqs) {
            let probability = seq.map(|q| predict(params, &q)).transpose()?;
            out.push(ChunkPrediction {
                start_s: s,
                end_s: e,
                probability,
            });
        }
        Some(out)
    } else {
        None
    };
    Ok((p, chunks))
}

/// Scores every corpus clip with the eval-mode model. Unreadable clips give
/// records with `error` set; output order follows the manifest.
pub fn predict_corpus(
    corpus: &[CorpusEntry],
    base_dir: &Path,
    provider: &dyn EmbeddingProvider,
    params: &ClassifierParams,
    cfg: &FilterConfig,
) -> Result<Vec<PredictionRecord>> {
    cfg.validate()?;
    if params.arch.input_dim != provider.dim() {
        return Err(Error::Evaluation(format!(
            "checkpoint expects dim {} but embeddings have dim {}",
            params.arch.input_dim,
            provider.dim()
        )));
    }
    Ok(corpus
        .par_iter()
        .map(|entry| {
            let flag = duration_filter(entry.duration_s, cfg);
            let mut rec = PredictionRecord {
                clip_id: entry.clip_id.clone(),
                duration_s: entry.duration_s,
                probability: None,
                decision: None,
                duration_flag: flag,
                chunk_predictions: None,
                error: None,
            };
            match predict_one(entry, base_dir, provider, params, cfg) {
                Ok((p, chunks)) => {
                    rec.probability = Some(p);
                    rec.decision = Some(Label::from_probability(p, cfg.threshold));
                    rec.chunk_predictions = chunks;
                }
                Err(e) => {
                    log::warn!("{}: {e}", entry.clip_id);
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub n_clips: usize,
    pub n_errors: usize,
    pub n_kept: usize,
    pub n_too_short: usize,
    pub n_too_long: usize,
    /// Among scored, kept clips.
    pub n_single: usize,
    pub n_multi: usize,
    pub single_fraction: f64,
}

pub fn summarize(records: &[PredictionRecord]) -> PredictionSummary {
    let mut s = PredictionSummary {
        n_clips: records.len(),
        ..Default::default()
    };
    for r in records {
        match r.duration_flag {
            DurationFlag::Kept => s.n_kept += 1,
            DurationFlag::TooShort => s.n_too_short += 1,
            DurationFlag::TooLong => s.n_too_long += 1,
        }
        if r.error.is_some() {
            s.n_errors += 1;
        }
        match r.usable() {
            Some(Label::Single) => s.n_single += 1,
            Some(Label::Multi) => s.n_multi += 1,
            None => {}
        }
    }
    let scored = s.n_single + s.n_multi;
    s.single_fraction = if scored > 0 {
        s.n_single as f64 / scored as f64
    } else {
        0.0
    };
    s
}

/// Metrics against the corpus' ground-truth `label` column, over scored clips
/// regardless of duration flag.
pub fn labeled_metrics(
    records: &[PredictionRecord],
    corpus: &[CorpusEntry],
    threshold: f64,
) -> Result<Metrics> {
    let truth: HashMap<&str, Label> = corpus
        .iter()
        .filter_map(|e| e.label.map(|l| (e.clip_id.as_str(), l)))
        .collect();
    let preds: Vec<(f64, Label)> = records
        .iter()
        .filter_map(|r| Some((r.probability?, *truth.get(r.clip_id.as_str())?)))
        .collect();
    classify_metrics(&preds, threshold)
}

/// Agreement between model decisions (SS/MS) and the PP rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    pub ss_pp: usize,
    pub ss_not_pp: usize,
    pub ms_pp: usize,
    pub ms_not_pp: usize,
    /// Fraction of the joined set accepted by the PP rule.
    pub pp_preserved: f64,
    /// Fraction of the joined set the model calls single-source.
    pub model_preserved: f64,
}

impl FlowTable {
    pub fn total(&self) -> usize {
        self.ss_pp + self.ss_not_pp + self.ms_pp + self.ms_not_pp
    }
}

/// Per-clip PP outcome: a clip passes when any of its vote records passes.
pub fn pp_by_clip(votes: &[VoteRecord]) -> BTreeMap<&str, bool> {
    let mut out: BTreeMap<&str, bool> = BTreeMap::new();
    for v in votes {
        *out.entry(v.clip_id.as_str()).or_default() |= pp_accept(v);
    }
    out
}

/// Joins kept, scored predictions with votes on clip id.
pub fn compare_filters(records: &[PredictionRecord], votes: &[VoteRecord]) -> Result<FlowTable> {
    let pp = pp_by_clip(votes);
    let mut t = FlowTable {
        ss_pp: 0,
        ss_not_pp: 0,
        ms_pp: 0,
        ms_not_pp: 0,
        pp_preserved: 0.0,
        model_preserved: 0.0,
    };
    for r in records {
        let (Some(decision), Some(&accepted)) = (r.usable(), pp.get(r.clip_id.as_str())) else {
            continue;
        };
        match (decision, accepted) {
            (Label::Single, true) => t.ss_pp += 1,
            (Label::Single, false) => t.ss_not_pp += 1,
            (Label::Multi, true) => t.ms_pp += 1,
            (Label::Multi, false) => t.ms_not_pp += 1,
        }
    }
    let n = t.total();
    if n == 0 {
        return Err(Error::Evaluation(format!(
            "no clips in common: {} predictions ({} usable), {} voted clips",
            records.len(),
            records.iter().filter(|r| r.usable().is_some()).count(),
            pp.len()
        )));
    }
    t.pp_preserved = (t.ss_pp + t.ms_pp) as f64 / n as f64;
    t.model_preserved = (t.ss_pp + t.ss_not_pp) as f64 / n as f64;
    Ok(t)
}

/// One row of the PC/PQ table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub subset: String,
    pub n: usize,
    pub pc_mean: f64,
    pub pc_2sigma: f64,
    pub pq_mean: f64,
    pub pq_2sigma: f64,
}

/// Mean +- 2 sigma of PC and PQ for all kept clips, the model's single and
/// multi subsets, and the PP-accepted / rejected subsets when votes are given.
/// Subsets with fewer than two scored clips are omitted.
pub fn score_table(
    records: &[PredictionRecord],
    scores: &[ScoreRecord],
    votes: Option<&[VoteRecord]>,
) -> Result<Vec<ScoreRow>> {
    let by_id: HashMap<&str, &ScoreRecord> = scores.iter().map(|s| (s.clip_id.as_str(), s)).collect();
    let pp = votes.map(pp_by_clip);
    let mut groups: Vec<(String, Vec<&ScoreRecord>)> = ["all", "model_single", "model_multi"]
        .iter()
        .map(|s| (s.to_string(), Vec::new()))
        .collect();
    if pp.is_some() {
        groups.push(("pp".into(), Vec::new()));
        groups.push(("not_pp".into(), Vec::new()));
    }
    let mut joined = 0;
    for r in records {
        let (Some(decision), Some(s)) = (r.usable(), by_id.get(r.clip_id.as_str())) else {
            continue;
        };
        joined += 1;
        groups[0].1.push(s);
        groups[if decision == Label::Single { 1 } else { 2 }].1.push(s);
        if let Some(pp) = &pp {
            match pp.get(r.clip_id.as_str()) {
                Some(true) => groups[3].1.push(s),
                Some(false) => groups[4].1.push(s),
                None => {}
            }
        }
    }
    if joined == 0 {
        return Err(Error::Evaluation(format!(
            "no scored clips in common: {} predictions, {} score rows",
            records.len(),
            scores.len()
        )));
    }
    let mut rows = Vec::new();
    for (name, members) in groups {
        if members.len() < 2 {
            continue;
        }
        let pc: Vec<f64> = members.iter().map(|s| s.pc).collect();
        let pq: Vec<f64> = members.iter().map(|s| s.pq).collect();
        let (pc_mean, pc_2sigma) = aggregate_scores(&pc)?;
        let (pq_mean, pq_2sigma) = aggregate_scores(&pq)?;
        rows.push(ScoreRow {
            subset: name,
            n: members.len(),
            pc_mean,
            pc_2sigma,
            pq_mean,
            pq_2sigma,
        });
    }
    Ok(rows)
}

/// Per-class (single, multi) decision counts for corpora that carry class labels.
pub fn class_counts(records: &[PredictionRecord], corpus: &[CorpusEntry]) -> BTreeMap<String, (usize, usize)> {
    let classes: HashMap<&str, Vec<&str>> = corpus.iter().map(|e| (e.clip_id.as_str(), e.classes())).collect();
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let Some(d) = r.usable() else { continue };
        for c in classes.get(r.clip_id.as_str()).into_iter().flatten() {
            let e = out.entry(c.to_string()).or_default();
            match d {
                Label::Single => e.0 += 1,
                Label::Multi => e.1 += 1,
            }
        }
    }
    out
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Flat `metric,value` rows for the summary CSV.
pub fn summary_rows(
    summary: &PredictionSummary,
    metrics: Option<&Metrics>,
    flow: Option<&FlowTable>,
) -> Vec<(String, f64)> {
    let mut rows = vec![
        ("n_clips".to_string(), summary.n_clips as f64),
        ("n_errors".into(), summary.n_errors as f64),
        ("n_kept".into(), summary.n_kept as f64),
        ("n_too_short".into(), summary.n_too_short as f64),
        ("n_too_long".into(), summary.n_too_long as f64),
        ("n_single".into(), summary.n_single as f64),
        ("n_multi".into(), summary.n_multi as f64),
        ("single_fraction".into(), summary.single_fraction),
    ];
    if let Some(m) = metrics {
        rows.extend([
            ("accuracy".to_string(), m.accuracy),
            ("precision".into(), m.precision),
            ("recall".into(), m.recall),
            ("f1".into(), m.f1),
        ]);
    }
    if let Some(f) = flow {
        rows.extend([
            ("flow_ss_pp".to_string(), f.ss_pp as f64),
            ("flow_ss_not_pp".into(), f.ss_not_pp as f64),
            ("flow_ms_pp".into(), f.ms_pp as f64),
            ("flow_ms_not_pp".into(), f.ms_not_pp as f64),
            ("pp_preserved".into(), f.pp_preserved),
            ("model_preserved".into(), f.model_preserved),
        ]);
    }
    rows
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[(String, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([k.as_str(), &v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_score_table(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fixed-width text rendering: `subset  n  PC +- 2s  PQ +- 2s`.
pub fn format_score_table(rows: &[ScoreRow]) -> String {
    let mut s = format!("{:<14}{:>8}{:>18}{:>18}\n", "subset", "n", "PC ± 2σ", "PQ ± 2σ");
    for r in rows {
        s.push_str(&format!(
            "{:<14}{:>8}{:>18}{:>18}\n",
            r.subset,
            r.n,
            format!("{:.2} ± {:.2}", r.pc_mean, r.pc_2sigma),
            format!("{:.2} ± {:.2}", r.pq_mean, r.pq_2sigma),
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, p: f64, dur: f64) -> PredictionRecord {
        let cfg = FilterConfig::default();
        PredictionRecord {
            clip_id: id.into(),
            duration_s: dur,
            probability: Some(p),
            decision: Some(Label::from_probability(p, cfg.threshold)),
            duration_flag: duration_filter(dur, &cfg),
            chunk_predictions: None,
            error: None,
        }
    }

    fn votes(id: &str, r: &[Rating]) -> VoteRecord {
        VoteRecord {
            clip_id: id.into(),
            class_label: "x".into(),
            ratings: r.to_vec(),
        }
    }

    #[test]
    fn duration_bounds() {
        let cfg = FilterConfig::default();
        assert_eq!(duration_filter(0.5, &cfg), DurationFlag::Kept);
        assert_eq!(duration_filter(0.49, &cfg), DurationFlag::TooShort);
        assert_eq!(duration_filter(30.0, &cfg), DurationFlag::Kept);
        assert_eq!(duration_filter(31.0, &cfg), DurationFlag::TooLong);
        assert_eq!(duration_filter(10.0, &cfg), DurationFlag::Kept);
    }

    #[test]
    fn chunking() {
        assert_eq!(chunk_windows(0.3, 1.0, 0.5), vec![(0.0, 0.3)]);
        let w = chunk_windows(2.0, 1.0, 0.5);
        assert_eq!(w, vec![(0.0, 1.0), (0.5, 1.5), (1.0, 2.0)]);
        let w = chunk_windows(2.2, 1.0, 0.5);
        assert_eq!(w.last().unwrap(), &(1.2, 2.2));
    }

    #[test]
    fn flow_agreement_and_partition() {
        use Rating::*;
        let preds = vec![rec("a", 0.9, 2.0), rec("b", 0.1, 2.0), rec("c", 0.8, 0.1), rec("d", 0.7, 3.0)];
        let v = vec![votes("a", &[PP, PP]), votes("b", &[PP, NP]), votes("c", &[PP, PP]), votes("d", &[PP, PP, U])];
        let t = compare_filters(&preds, &v).unwrap();
        assert_eq!((t.ss_pp, t.ss_not_pp, t.ms_pp, t.ms_not_pp), (2, 0, 0, 1));
        assert_eq!(t.total(), 3);
        assert!((t.pp_preserved - 2.0 / 3.0).abs() < 1e-12);
        assert!(compare_filters(&preds, &[votes("zz", &[PP, PP])]).is_err());
    }

    #[test]
    fn any_passing_class_accepts_clip() {
        use Rating::*;
        let v = vec![votes("a", &[PNP, PNP]), votes("a", &[PP, PP])];
        assert_eq!(pp_by_clip(&v).get("a"), Some(&true));
    }

    #[test]
    fn score_table_groups() {
        let preds = vec![rec("a", 0.9, 2.0), rec("b", 0.8, 2.0), rec("c", 0.1, 2.0), rec("d", 0.2, 2.0)];
        let scores: Vec<ScoreRecord> = [("a", 2.0, 7.0), ("b", 4.0, 9.0), ("c", 5.0, 5.0), ("d", 5.0, 5.0)]
            .iter()
            .map(|&(id, pc, pq)| ScoreRecord { clip_id: id.into(), pc, pq })
            .collect();
        let rows = score_table(&preds, &scores, None).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].subset, "model_single");
        assert_eq!(rows[1].pc_mean, 3.0);
        assert!((rows[1].pc_2sigma - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rows[2].pc_2sigma, 0.0);
        assert!(format_score_table(&rows).contains("3.00 ± 2.83"));
    }

    #[test]
    fn prediction_jsonl_round_trip() {
        let mut r = rec("a", 0.25, 1.0);
        r.chunk_predictions = Some(vec![ChunkPrediction { start_s: 0.0, end_s: 1.0, probability: None }]);
        let mut e = rec("b", 0.5, 0.2);
        e.probability = None;
        e.decision = None;
        e.error = Some("boom".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.jsonl");
        write_predictions(&p, &[r.clone(), e.clone()]).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), vec![r, e]);
    }

    #[test]
    fn corpus_csv_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "clip_id,path,duration_s,class_labels\n1,a.wav,1.5,\"Dog,Bark\"\n").unwrap();
        let c = read_corpus(&p).unwrap();
        assert_eq!(c[0].classes(), vec!["Dog", "Bark"]);
        std::fs::write(&p, "clip_id,path,duration_s,oops\n").unwrap();
        assert!(read_corpus(&p).is_err());
        let entries = vec![CorpusEntry {
            clip_id: "x".into(),
            path: "x.wav".into(),
            duration_s: 2.0,
            class_labels: None,
            label: Some(Label::Multi),
        }];
        write_corpus(&p, &entries).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), entries);
    }

    proptest! {
        #[test]
        fn prediction_floats_survive_jsonl(p in 0.0f64..1.0, d in 0.0f64..100.0) {
            let r = rec("z", p, d);
            let line = serde_json::to_string(&r).unwrap();
            let back: PredictionRecord = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn duration_flags_partition(d in 0.0f64..100.0) {
            let cfg = FilterConfig::default();
            let flags = [d < 0.5, d > 30.0, (0.5..=30.0).contains(&d)];
            prop_assert_eq!(flags.iter().filter(|&&b| b).count(), 1);
            let expected = if flags[0] { DurationFlag::TooShort } else if flags[1] { DurationFlag::TooLong } else { DurationFlag::Kept };
            prop_assert_eq!(duration_filter(d, &cfg), expected);
        }

        #[test]
        fn flow_counts_sum_to_join(ps in proptest::collection::vec((0.0f64..1.0, 0usize..4), 1..60)) {
            use Rating::*;
            let preds: Vec<PredictionRecord> = ps.iter().enumerate().map(|(i, &(p, _))| rec(&i.to_string(), p, 1.0)).collect();
            let v: Vec<VoteRecord> = ps.iter().enumerate().map(|(i, &(_, k))| votes(&i.to_string(), &[PP, PP, NP, U][..k.max(1)])).collect();
            let t = compare_filters(&preds, &v).unwrap();
            prop_assert_eq!(t.total(), preds.len());
        }
    }
}
