use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::warn;

use solo_core::config::PipelineConfig;
use solo_core::error::Error;
use solo_core::mixture::MixCondition;
use solo_core::pipeline::{
    render_report, run_featurize, run_filter, run_synth, run_train, FeaturizeMode, FilterInputs,
};
use solo_core::synthetic::{generate_toy_corpus, ToyOptions};

/// Single-source audio curation: synthesize mixtures, train the
/// single/multi-source classifier, and filter corpora with it.
#[derive(Parser, Debug)]
#[command(name = "solo", version)]
struct Cli {
    /// JSON config file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random draw. Falls back to SOLO_SEED, then the config's `seed`.
    #[arg(long, global = true, env = "SOLO_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a balanced single/multi-source mixture dataset.
    Synth {
        /// Clean single-source pool manifest (CSV: path,class_label,duration_s).
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Ambient noise pool manifest, same layout as --pool.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Blocklist of similar class pairs, one `a|b` per line.
        #[arg(long)]
        blocklist: Option<PathBuf>,
        /// Output directory for manifest.jsonl and audio/.
        #[arg(long)]
        out: PathBuf,
        /// Number of records (even); defaults to synth.n_examples.
        #[arg(long)]
        n: Option<usize>,
        /// Write the manifest only, no audio.
        #[arg(long)]
        dry_run: bool,
    },
    /// Write one EMB1 embedding file per manifest row.
    Featurize {
        /// Mixture manifest (.jsonl) or corpus manifest (.csv).
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `<id>.emb` files.
        #[arg(long)]
        out_dir: PathBuf,
        /// `logmel` computes features; `import` validates files written by an external encoder.
        #[arg(long, value_enum, default_value_t = Mode::Logmel)]
        mode: Mode,
    },
    /// Split, train and write model.ckpt, metrics.csv and test_corpus.csv.
    Train {
        /// Mixture manifest (.jsonl).
        #[arg(long)]
        manifest: PathBuf,
        /// Embedding directory; without it log-mel features are computed on the fly.
        #[arg(long)]
        emb_dir: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a corpus, apply the duration filter and compare with votes.
    Filter {
        /// Corpus CSV: clip_id,path,duration_s[,class_labels][,label].
        #[arg(long)]
        corpus: PathBuf,
        /// Trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embedding directory; without it log-mel features are computed on the fly.
        #[arg(long)]
        emb_dir: Option<PathBuf>,
        /// Crowd votes (JSONL: clip_id, class_label, ratings).
        #[arg(long)]
        votes: Option<PathBuf>,
        /// Perceptual scores (CSV: clip_id,pc,pq).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Also score fixed-length chunks of each clip.
        #[arg(long)]
        chunks: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render metrics.csv and/or summary.csv to report.txt and report.svg.
    Report {
        /// Training metrics CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Filter summary CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a small tone/noise source corpus for trying the pipeline.
    Toy {
        /// Output directory for pool.csv, noise.csv, blocklist.txt and audio.
        #[arg(long)]
        out: PathBuf,
        /// Clips per toy class.
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        /// Noise clips.
        #[arg(long, default_value_t = 10)]
        n_noise: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Logmel,
    Import,
}

fn exit_code(err: &anyhow::Error, fallback: u8) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(
            Error::Format(_)
            | Error::UnsupportedFormat(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Shape(_),
        ) => 3,
        Some(Error::Training(_) | Error::Split(_)) => 4,
        Some(Error::Evaluation(_)) => 5,
        _ => fallback,
    }
}

fn require(flag: &str, v: Option<PathBuf>) -> Result<PathBuf, Error> {
    v.ok_or_else(|| Error::config(flag, "required (flag or paths section of the config)"))
}

fn existing(flag: &str, p: PathBuf) -> Result<PathBuf, Error> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::config(flag, format!("{} does not exist", p.display())))
    }
}

fn run(cli: Cli) -> Result<(), (anyhow::Error, u8)> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
    .map_err(|e| (e.into(), 2))?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    match cli.command {
        Command::Synth { pool, noise, blocklist, out, n, dry_run } => {
            cmd_synth(&cfg, seed, pool, noise, blocklist, &out, n, dry_run).map_err(|e| {
                let code = exit_code(&e, 1);
                (e, code)
            })
        }
        Command::Featurize { manifest, out_dir, mode } => {
            cmd_featurize(&cfg, &manifest, &out_dir, mode).map_err(|e| {
                let code = exit_code(&e, 3);
                (e, code)
            })
        }
        Command::Train { manifest, emb_dir, out } => {
            let seed = cli.seed.unwrap_or(cfg.train_seed());
            cmd_train(&cfg, seed, &manifest, emb_dir.as_deref(), &out).map_err(|e| {
                let code = exit_code(&e, 4);
                (e, code)
            })
        }
        Command::Filter { corpus, checkpoint, emb_dir, votes, scores, chunks, out } => {
            let mut cfg = cfg;
            cfg.filter.chunks |= chunks;
            let io = FilterInputs {
                corpus: &corpus,
                checkpoint: &checkpoint,
                emb_dir: emb_dir.as_deref(),
                votes: votes.as_deref(),
                scores: scores.as_deref(),
                out_dir: &out,
            };
            cmd_filter(&cfg, &io).map_err(|e| {
                let code = exit_code(&e, 5);
                (e, code)
            })
        }
        Command::Report { metrics, summary, out } => {
            render_report(metrics.as_deref(), summary.as_deref(), &out)
                .map(|(txt, svg)| println!("wrote {} and {}", txt.display(), svg.display()))
                .map_err(|e| {
                    let e = anyhow::Error::from(e);
                    let code = exit_code(&e, 3);
                    (e, code)
                })
        }
        Command::Toy { out, per_class, n_noise } => {
            let opts = ToyOptions { per_class, n_noise, seed, ..Default::default() };
            generate_toy_corpus(&out, &opts)
                .map(|c| {
                    println!("pool      {}", c.pool_manifest.display());
                    println!("noise     {}", c.noise_manifest.display());
                    println!("blocklist {}", c.blocklist.display());
                })
                .map_err(|e| {
                    let e = anyhow::Error::from(e);
                    let code = exit_code(&e, 1);
                    (e, code)
                })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    cfg: &PipelineConfig,
    seed: u64,
    pool: Option<PathBuf>,
    noise: Option<PathBuf>,
    blocklist: Option<PathBuf>,
    out: &Path,
    n: Option<usize>,
    dry_run: bool,
) -> anyhow::Result<()> {
    let pool = existing("--pool", require("--pool", pool.or(cfg.paths.pool.clone().map(PathBuf::from)))?)?;
    let noise = noise
        .or(cfg.paths.noise.clone().map(PathBuf::from))
        .map(|p| existing("--noise", p))
        .transpose()?;
    let blocklist = blocklist
        .or(cfg.paths.blocklist.clone().map(PathBuf::from))
        .map(|p| existing("--blocklist", p))
        .transpose()?;
    let n = n.unwrap_or(cfg.synth.n_examples);
    if n == 0 || n % 2 != 0 {
        return Err(Error::config("--n", "must be a positive even number").into());
    }
    let s = run_synth(cfg, &pool, noise.as_deref(), blocklist.as_deref(), out, n, seed, dry_run)?;
    let singles = s.records.iter().filter(|r| r.label == solo_core::Label::Single).count();
    println!("records  {}", s.records.len());
    println!("single   {singles}");
    println!("multi    {}", s.records.len() - singles);
    for (k, c) in MixCondition::ALL.iter().zip(s.histogram) {
        println!("  {:<24} {c}", k.as_str());
    }
    println!("manifest {}", s.manifest.display());
    Ok(())
}

fn cmd_featurize(cfg: &PipelineConfig, manifest: &Path, out_dir: &Path, mode: Mode) -> anyhow::Result<()> {
    let mode = match mode {
        Mode::Logmel => FeaturizeMode::Logmel,
        Mode::Import => FeaturizeMode::Import,
    };
    let s = run_featurize(cfg, manifest, out_dir, mode)?;
    for id in &s.failed {
        warn!("no usable signal in {id}; skipped");
    }
    println!("written {}  skipped {}  failed {}  dim {}", s.written, s.skipped, s.failed.len(), s.dim);
    Ok(())
}

fn cmd_train(cfg: &PipelineConfig, seed: u64, manifest: &Path, emb_dir: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    if cfg.train.epochs == 0 {
        warn!("train.epochs is 0: writing the initial weights untrained");
    }
    let s = run_train(cfg, manifest, emb_dir, out, seed)?;
    let [tr, va, te] = s.split_sizes;
    println!("split train {tr}  val {va}  test {te}");
    let best = s.outcome.log.iter().find(|r| r.epoch == s.outcome.best_epoch);
    match best {
        Some(r) => println!("best epoch {}  val accuracy {:.4}  val loss {:.4}", r.epoch, r.val_accuracy, r.val_loss),
        None => println!("best epoch {}", s.outcome.best_epoch),
    }
    println!("checkpoint {}", s.checkpoint.display());
    println!("test corpus {}", s.test_corpus.display());
    Ok(())
}

fn cmd_filter(cfg: &PipelineConfig, io: &FilterInputs<'_>) -> anyhow::Result<()> {
    let s = run_filter(cfg, io)?;
    let p = &s.summary;
    println!(
        "clips {}  kept {}  too_short {}  too_long {}  errors {}",
        p.n_clips, p.n_kept, p.n_too_short, p.n_too_long, p.n_errors
    );
    println!("single {}  multi {}  single fraction {:.4}", p.n_single, p.n_multi, p.single_fraction);
    if let Some(m) = &s.metrics {
        println!(
            "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
            m.accuracy, m.precision, m.recall, m.f1
        );
    }
    if let Some(f) = &s.flow {
        println!("flow  SS&PP {}  SS&notPP {}  MS&PP {}  MS&notPP {}", f.ss_pp, f.ss_not_pp, f.ms_pp, f.ms_not_pp);
        println!("preserved  PP {:.4}  model {:.4}", f.pp_preserved, f.model_preserved);
    }
    if let Some(rows) = &s.score_rows {
        print!("{}", solo_core::evaluation::format_score_table(rows));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, code)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
