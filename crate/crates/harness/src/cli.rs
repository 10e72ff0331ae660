//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use emc_core::metrics::{evaluate_sets, MetricConfig, DEFAULT_MAX_LAG, DEFAULT_TAU};
use emc_core::{generate_corpus, split_corpus, FillStrategy, GenerateOptions, Model, ReactionSet};

use crate::checkpoint;
use crate::config::{DataSpec, TrainConfig};
use crate::dataset::{read_clip, read_clips, read_dataset, write_dataset};
use crate::error::{HarnessError, Result};
use crate::eval::{clip_stream, evaluate, parse_mask, write_report};
use crate::featfile::{read_features, write_atomic, write_features};
use crate::train::train;

const CONFIG_HELP: &str = "\
Config files are flat UTF-8 key=value lines; '#' starts a comment and unknown keys are rejected.

gen-data spec keys:
  num_clips frames frame_rate facial_dim speech_dim seed num_appropriate
  listener_lag_frames noise_std train_fraction val_fraction test_fraction

train config keys:
  epochs batch_size learning_rate beta1 beta2 adam_eps grad_clip
  lambda_rec lambda_kl lambda_fus lambda_cma cma_beta
  p_real p_facial_sub p_speech_sub seed checkpoint_interval cma_pretrain_epochs
  embed_dim emotion_dim num_heads hidden_dim cma_latent_dim reaction_latent_dim
  max_len positional_encoding dropout emotion_aware cma_samples sample_emotion
  (facial_dim, speech_dim and listener_dim are taken from the data)

Exit status: 0 on success, 1 on usage errors, 2 on data or format errors.";

#[derive(Debug, Parser)]
#[command(name = "emc", version, about = "Emotion-aware listener reaction generation", after_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its train/val/test split.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate on a split and write a metrics report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "full")]
        mask: String,
        #[arg(long, default_value_t = 10)]
        alpha: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[arg(long, value_enum, default_value_t = Fill::Cma)]
        fill: Fill,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        metrics: MetricArgs,
    },
    /// Generate reactions for one clip.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Clip manifest file.
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, default_value = "full")]
        mask: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        alpha: usize,
        #[arg(long, value_enum, default_value_t = Fill::Cma)]
        fill: Fill,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score previously generated reactions against ground truth.
    Metrics {
        /// Directory holding `<clip-id>/reaction_<k>.emcf`.
        #[arg(long)]
        generated: PathBuf,
        /// Corpus directory with the clips' manifests.
        #[arg(long)]
        groundtruth: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        metrics: MetricArgs,
    },
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// ACC threshold on the closest-ground-truth DTW.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_LAG)]
    max_lag: usize,
}

impl MetricArgs {
    fn config(&self) -> Result<MetricConfig> {
        if !(self.tau >= 0.0) {
            return Err(HarnessError::Usage(format!("tau must be nonnegative, got {}", self.tau)));
        }
        Ok(MetricConfig { tau: self.tau, max_lag: self.max_lag })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Fill {
    Cma,
    Zero,
}

impl From<Fill> for FillStrategy {
    fn from(f: Fill) -> Self {
        match f {
            Fill::Cma => FillStrategy::Cma,
            Fill::Zero => FillStrategy::ZeroFill,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let spec = match spec {
                Some(p) => DataSpec::parse(&read_text(&p)?)?,
                None => DataSpec::default(),
            };
            let clips = generate_corpus(&spec.corpus)?;
            let split = split_corpus(&clips, |c| c.id.as_str(), spec.ratios)?;
            write_dataset(&out, &split)?;
            println!("wrote {} clips ({} train, {} val, {} test) to {}", clips.len(), split.train.len(), split.val.len(), split.test.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::parse(&read_text(&p)?)?,
                None => TrainConfig::default(),
            };
            let split = read_dataset(&data)?;
            let first = split.train.first().ok_or_else(|| HarnessError::Data("empty training split".into()))?;
            cfg.model.facial_dim = first.facial.cols();
            cfg.model.speech_dim = first.speech.cols();
            cfg.model.listener_dim = first.listener.cols();
            let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
            let interval = cfg.checkpoint_interval;
            let outcome = train(&mut model, &split.train, &cfg, |stats, m, rng| {
                let l = &stats.loss;
                eprintln!(
                    "epoch {:>4} total {:.6} rec {:.6} kl {:.6} fusion {:.6} cma_s {:.6} cma_f {:.6}",
                    stats.epoch + 1, l.total, l.rec, l.kl, l.fusion, l.cma_speech, l.cma_facial
                );
                if interval > 0 && (stats.epoch + 1) % interval == 0 {
                    let mut p = out.as_os_str().to_owned();
                    p.push(format!(".epoch{}", stats.epoch + 1));
                    checkpoint::save(Path::new(&p), m, rng, stats.epoch as u64 + 1)?;
                }
                Ok(())
            })?;
            checkpoint::save(&out, &model, &outcome.rng, outcome.history.len() as u64)?;
            let mut hist = String::from("epoch\ttotal\trec\tkl\tfusion\tcma_speech\tcma_facial\tgrad_norm\n");
            for s in &outcome.history {
                let l = &s.loss;
                hist.push_str(&format!(
                    "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\n",
                    s.epoch + 1, l.total, l.rec, l.kl, l.fusion, l.cma_speech, l.cma_facial, s.grad_norm
                ));
            }
            let mut hp = out.as_os_str().to_owned();
            hp.push(".history.tsv");
            write_atomic(Path::new(&hp), hist.as_bytes())?;
        }
        Command::Eval { ckpt, data, mask, alpha, report, split, fill, seed, metrics } => {
            let mask = parse_mask(&mask)?;
            if alpha == 0 {
                return Err(HarnessError::Usage("alpha must be at least 1".into()));
            }
            let cfg = metrics.config()?;
            let model = checkpoint::load(&ckpt)?.model;
            let s = read_dataset(&data)?;
            let clips = match split {
                SplitName::Train => s.train,
                SplitName::Val => s.val,
                SplitName::Test => s.test,
            };
            let r = evaluate(&model, &clips, mask, alpha, fill.into(), &cfg, seed)?;
            write_report(&report, &r)?;
            print!("{}", r.to_key_value());
        }
        Command::Generate { ckpt, clip, mask, seed, alpha, fill, out } => {
            let mask = parse_mask(&mask)?;
            if alpha == 0 {
                return Err(HarnessError::Usage("alpha must be at least 1".into()));
            }
            let model = checkpoint::load(&ckpt)?.model;
            let clip = read_clip(&clip)?;
            let mut rng = clip_stream(seed, &clip.id);
            let opts = GenerateOptions { fill: fill.into(), ..GenerateOptions::default() };
            let reactions = model.generate_with(&clip, mask, &mut rng, alpha, opts)?;
            let dir = out.join(&clip.id);
            fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            for (k, r) in reactions.iter().enumerate() {
                write_features(&dir.join(format!("reaction_{k}.emcf")), r)?;
            }
            println!("wrote {} reaction(s) to {}", reactions.len(), dir.display());
        }
        Command::Metrics { generated, groundtruth, report, metrics } => {
            let cfg = metrics.config()?;
            let clips = read_clips(&groundtruth)?;
            let by_id: BTreeMap<&str, _> = clips.iter().map(|c| (c.id.as_str(), c)).collect();
            let mut sets = Vec::new();
            let entries = fs::read_dir(&generated).map_err(|e| HarnessError::io(&generated, e))?;
            let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
            dirs.sort();
            for dir in dirs {
                let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                let clip = by_id
                    .get(id.as_str())
                    .ok_or_else(|| HarnessError::Data(format!("no ground truth for generated clip {id}")))?;
                let mut reactions = Vec::new();
                for k in 0.. {
                    let p = dir.join(format!("reaction_{k}.emcf"));
                    if !p.exists() {
                        break;
                    }
                    reactions.push(read_features(&p)?);
                }
                if reactions.is_empty() {
                    return Err(HarnessError::Data(format!("{}: no reaction_0.emcf", dir.display())));
                }
                sets.push(ReactionSet::new(id, reactions, clip.appropriate.clone(), clip.speaker_reference().clone())?);
            }
            if sets.is_empty() {
                return Err(HarnessError::Data(format!("no generated clips under {}", generated.display())));
            }
            let r = evaluate_sets(&sets, &cfg)?;
            write_report(&report, &r)?;
            print!("{}", r.to_key_value());
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
