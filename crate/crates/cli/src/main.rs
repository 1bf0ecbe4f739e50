//! `cm2` command-line driver.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cm2::eval::predictions::{load_predictions, save_predictions};
use cm2::eval::report::evaluate;
use cm2::experiment::run::{oracle_predictions, to_predictions};
use cm2::experiment::train::{full_bank, LossLog};
use cm2::experiment::{effective_bank, infer, sweep, sweep_csv, train, Dataset, ExperimentConfig, SweepParam};
use cm2::ingest::synth::write_corpus;
use cm2::ingest::{generate_synthetic_corpus, load_annotations, save_annotations, HashBowEmbedder, SynthConfig};
use cm2::memory::{build_memory, save_memory};
use cm2::meta::{short_hash, ArtifactMeta};
use cm2::model::{load_checkpoint, save_checkpoint};

const GIT_DESCRIBE: &str = env!("CM2_GIT_DESCRIBE");

#[derive(Parser, Debug)]
#[command(name = "cm2", version, about = "Memory-retrieval-augmented dense video captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-event corpus with a train/val split.
    ///
    /// Unset options take the library defaults (70 videos, 50 for training).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long, default_value_t = 50)]
        train: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        max_events: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embed every annotated sentence into a CM2M memory bank.
    BuildMemory {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a CM2C checkpoint and a JSONL loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the checkpoint path with a `.jsonl` extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict events for the validation split.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Prints to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Oracle retrieval predictions with and without ground-truth segments.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Model predictions whose segments the mode without ground-truth
        /// proposals reuses.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// anchors, topk or keep_ratio.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn meta_for(config: &ExperimentConfig) -> ArtifactMeta {
    ArtifactMeta::new(config.hash(), GIT_DESCRIBE)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, videos, train, frames, dim, vocab, max_events, noise, seed } => {
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                n_videos: videos.unwrap_or(d.n_videos),
                frames: frames.unwrap_or(d.frames),
                dim: dim.unwrap_or(d.dim),
                vocab_size: vocab.unwrap_or(d.vocab_size),
                max_events: max_events.unwrap_or(d.max_events),
                noise: noise.unwrap_or(d.noise),
                seed: seed.unwrap_or(d.seed),
                ..d
            };
            if train > cfg.n_videos {
                bail!("--train {train} exceeds the {} videos", cfg.n_videos);
            }
            let corpus = generate_synthetic_corpus(&cfg)?;
            write_corpus(&corpus, &out)?;
            let (tr, va) = corpus.split(train);
            save_annotations(tr.annotations, &out.join("train.json"))?;
            save_annotations(va.annotations, &out.join("val.json"))?;
            eprintln!("wrote {} videos ({train} train) to {}", cfg.n_videos, out.display());
        }
        Command::BuildMemory { annotations, dim, embed_seed, out } => {
            let anns = load_annotations(&annotations)?;
            let bank = build_memory(&anns, &HashBowEmbedder::new(dim, embed_seed)?)?;
            save_memory(&bank, &out)?;
            let key = format!("build-memory dim={dim} embed_seed={embed_seed} source={}", short_hash(&std::fs::read(&annotations)?));
            let meta = ArtifactMeta::new(short_hash(key.as_bytes()), GIT_DESCRIBE);
            let sidecar = PathBuf::from(format!("{}.meta.json", out.display()));
            write_text(&sidecar, &serde_json::to_string_pretty(&meta)?)?;
            eprintln!("memory bank with {} entries written to {}", bank.len(), out.display());
        }
        Command::Train { config, out, log } => {
            let cfg = load_config(&config)?;
            let data = Dataset::load(&cfg)?;
            let bank = effective_bank(&cfg, &data.train)?;
            let meta = meta_for(&cfg);
            let log_path = log.unwrap_or_else(|| out.with_extension("jsonl"));
            let file = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
            let mut logger = LossLog::new(BufWriter::new(file), &meta)?;
            let model = train(&cfg, &data.train, &bank, |s| logger.record(s))?;
            save_checkpoint(&model, Some(&meta), &out)?;
            eprintln!("checkpoint {} ({} parameters), log {}", out.display(), model.params.scalar_count(), log_path.display());
        }
        Command::Infer { config, checkpoint, out } => {
            let cfg = load_config(&config)?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            if model.config != cfg.model {
                bail!("checkpoint model section differs from {}", config.display());
            }
            let data = Dataset::load(&cfg)?;
            let bank = effective_bank(&cfg, &data.train)?;
            let outputs = infer(&model, &cfg, &bank, &data.val)?;
            save_predictions(&to_predictions(&data.val, &outputs), Some(&meta_for(&cfg)), &out)?;
            eprintln!("predictions for {} videos written to {}", data.val.len(), out.display());
        }
        Command::Eval { pred, gt, out } => {
            let (preds, pred_meta) = load_predictions(&pred)?;
            let gts = load_annotations(&gt)?;
            let config_hash = match pred_meta {
                Some(m) => m.config_hash,
                None => short_hash(&std::fs::read(&pred)?),
            };
            let report = evaluate(&preds, &gts, Some(ArtifactMeta::new(config_hash, GIT_DESCRIBE)))?;
            let json = report.to_json()?;
            match out {
                Some(path) => write_text(&path, &json)?,
                None => println!("{json}"),
            }
        }
        Command::Oracle { config, pred, out_dir } => {
            let cfg = load_config(&config)?;
            let data = Dataset::load(&cfg)?;
            let bank = full_bank(&cfg, &data.train)?;
            let (preds, _) = load_predictions(&pred)?;
            let (with_gt, without_gt) = oracle_predictions(&cfg, &bank, &data.val, &preds)?;
            std::fs::create_dir_all(&out_dir)?;
            let meta = meta_for(&cfg);
            save_predictions(&with_gt, Some(&meta), &out_dir.join("oracle_with_gt.json"))?;
            save_predictions(&without_gt, Some(&meta), &out_dir.join("oracle_without_gt.json"))?;
            eprintln!("oracle predictions written to {}", out_dir.display());
        }
        Command::Sweep { config, param, values, out } => {
            let cfg = load_config(&config)?;
            let param: SweepParam = param.parse()?;
            let data = Dataset::load(&cfg)?;
            let rows = sweep(&cfg, &data, param, &values, &meta_for(&cfg))?;
            write_text(&out, &sweep_csv(param, &rows))?;
            eprintln!("{} sweep rows written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
