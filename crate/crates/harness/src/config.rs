//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known to the section that reads it.

use std::collections::BTreeMap;
use std::str::FromStr;

use emc_core::{CorpusSpec, EmotionPreference, LossWeights, ModelConfig};

use crate::error::{HarnessError, Result};

/// Parsed entries, remembering the line each came from.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(HarnessError::Config { line: i + 1, reason: format!("expected key=value, got {line:?}") });
            };
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(HarnessError::Config { line: i + 1, reason: format!("duplicate key {key:?}") });
            }
        }
        Ok(Self { entries })
    }

    /// Rejects any key outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(HarnessError::Config { line: *line, reason: format!("unknown key {k:?}") });
            }
        }
        Ok(())
    }

    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some((line, v)) = self.entries.get(key) {
            *slot = v.parse().map_err(|_| HarnessError::Config { line: *line, reason: format!("bad value {v:?} for {key}") })?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }
}

pub const MODEL_KEYS: [&str; 15] = [
    "facial_dim",
    "speech_dim",
    "listener_dim",
    "embed_dim",
    "emotion_dim",
    "num_heads",
    "hidden_dim",
    "cma_latent_dim",
    "reaction_latent_dim",
    "max_len",
    "positional_encoding",
    "dropout",
    "emotion_aware",
    "cma_samples",
    "sample_emotion",
];

fn preference_name(p: EmotionPreference) -> &'static str {
    match p {
        EmotionPreference::Facial => "facial",
        EmotionPreference::Speech => "speech",
    }
}

pub fn read_model(kv: &KvFile, cfg: &mut ModelConfig) -> Result<()> {
    kv.set("facial_dim", &mut cfg.facial_dim)?;
    kv.set("speech_dim", &mut cfg.speech_dim)?;
    kv.set("listener_dim", &mut cfg.listener_dim)?;
    kv.set("embed_dim", &mut cfg.embed_dim)?;
    kv.set("emotion_dim", &mut cfg.emotion_dim)?;
    kv.set("num_heads", &mut cfg.num_heads)?;
    kv.set("hidden_dim", &mut cfg.hidden_dim)?;
    kv.set("cma_latent_dim", &mut cfg.cma_latent_dim)?;
    kv.set("reaction_latent_dim", &mut cfg.reaction_latent_dim)?;
    kv.set("max_len", &mut cfg.max_len)?;
    kv.set("positional_encoding", &mut cfg.positional_encoding)?;
    kv.set("dropout", &mut cfg.dropout)?;
    kv.set("emotion_aware", &mut cfg.emotion_aware)?;
    kv.set("cma_samples", &mut cfg.cma_samples)?;
    match kv.get("sample_emotion") {
        None => {}
        Some("facial") => cfg.sample_emotion = EmotionPreference::Facial,
        Some("speech") => cfg.sample_emotion = EmotionPreference::Speech,
        Some(other) => return Err(HarnessError::Config { line: 0, reason: format!("sample_emotion must be facial or speech, got {other:?}") }),
    }
    Ok(())
}

/// Canonical text form; this is what checkpoints embed.
pub fn write_model(cfg: &ModelConfig) -> String {
    let lines = [
        format!("facial_dim={}", cfg.facial_dim),
        format!("speech_dim={}", cfg.speech_dim),
        format!("listener_dim={}", cfg.listener_dim),
        format!("embed_dim={}", cfg.embed_dim),
        format!("emotion_dim={}", cfg.emotion_dim),
        format!("num_heads={}", cfg.num_heads),
        format!("hidden_dim={}", cfg.hidden_dim),
        format!("cma_latent_dim={}", cfg.cma_latent_dim),
        format!("reaction_latent_dim={}", cfg.reaction_latent_dim),
        format!("max_len={}", cfg.max_len),
        format!("positional_encoding={}", cfg.positional_encoding),
        format!("dropout={:?}", cfg.dropout),
        format!("emotion_aware={}", cfg.emotion_aware),
        format!("cma_samples={}", cfg.cma_samples),
        format!("sample_emotion={}", preference_name(cfg.sample_emotion)),
    ];
    lines.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_model(text: &str) -> Result<ModelConfig> {
    let kv = KvFile::parse(text)?;
    kv.check_keys(&MODEL_KEYS)?;
    let mut cfg = ModelConfig::default();
    read_model(&kv, &mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub weights: LossWeights,
    /// Probabilities of real pair, facial substitute, speech substitute.
    pub schedule: [f64; 3],
    pub seed: u64,
    /// Epochs between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_interval: usize,
    /// Leading epochs that train only the CMA modules.
    pub cma_pretrain_epochs: usize,
    pub divergence_factor: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            weights: LossWeights::default(),
            schedule: [1.0 / 3.0; 3],
            seed: 0,
            checkpoint_interval: 0,
            cma_pretrain_epochs: 0,
            divergence_factor: 1e3,
            model: ModelConfig::default(),
        }
    }
}

pub const TRAIN_KEYS: [&str; 18] = [
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "grad_clip",
    "lambda_rec",
    "lambda_kl",
    "lambda_fus",
    "lambda_cma",
    "cma_beta",
    "p_real",
    "p_facial_sub",
    "p_speech_sub",
    "seed",
    "checkpoint_interval",
    "cma_pretrain_epochs",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(HarnessError::Config { line: 0, reason });
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.schedule.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (self.schedule.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("fusion-input probabilities must be in [0,1] and sum to 1, got {:?}", self.schedule));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("invalid optimizer constants".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        if !(self.divergence_factor > 0.0) {
            return bad(format!("divergence_factor must be positive, got {}", self.divergence_factor));
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let known: Vec<&str> = TRAIN_KEYS.iter().chain(&MODEL_KEYS).copied().collect();
        kv.check_keys(&known)?;
        let mut c = Self::default();
        kv.set("epochs", &mut c.epochs)?;
        kv.set("batch_size", &mut c.batch_size)?;
        kv.set("learning_rate", &mut c.learning_rate)?;
        kv.set("beta1", &mut c.beta1)?;
        kv.set("beta2", &mut c.beta2)?;
        kv.set("adam_eps", &mut c.adam_eps)?;
        kv.set("grad_clip", &mut c.grad_clip)?;
        kv.set("lambda_rec", &mut c.weights.rec)?;
        kv.set("lambda_kl", &mut c.weights.kl)?;
        kv.set("lambda_fus", &mut c.weights.fusion)?;
        kv.set("lambda_cma", &mut c.weights.cma)?;
        kv.set("cma_beta", &mut c.weights.cma_kl)?;
        kv.set("p_real", &mut c.schedule[0])?;
        kv.set("p_facial_sub", &mut c.schedule[1])?;
        kv.set("p_speech_sub", &mut c.schedule[2])?;
        kv.set("seed", &mut c.seed)?;
        kv.set("checkpoint_interval", &mut c.checkpoint_interval)?;
        kv.set("cma_pretrain_epochs", &mut c.cma_pretrain_epochs)?;
        read_model(&kv, &mut c.model)?;
        c.validate()?;
        Ok(c)
    }
}

/// Corpus spec plus split fractions, as read by `gen-data`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub corpus: CorpusSpec,
    pub ratios: [f64; 3],
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { corpus: CorpusSpec::default(), ratios: [0.7, 0.15, 0.15] }
    }
}

pub const DATA_KEYS: [&str; 12] = [
    "num_clips",
    "frames",
    "frame_rate",
    "facial_dim",
    "speech_dim",
    "seed",
    "num_appropriate",
    "listener_lag_frames",
    "noise_std",
    "train_fraction",
    "val_fraction",
    "test_fraction",
];

impl DataSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        kv.check_keys(&DATA_KEYS)?;
        let mut d = Self::default();
        let c = &mut d.corpus;
        kv.set("num_clips", &mut c.num_clips)?;
        kv.set("frames", &mut c.frames)?;
        kv.set("frame_rate", &mut c.frame_rate)?;
        kv.set("facial_dim", &mut c.facial_dim)?;
        kv.set("speech_dim", &mut c.speech_dim)?;
        kv.set("seed", &mut c.seed)?;
        kv.set("num_appropriate", &mut c.num_appropriate)?;
        kv.set("listener_lag_frames", &mut c.listener_lag_frames)?;
        kv.set("noise_std", &mut c.noise_std)?;
        kv.set("train_fraction", &mut d.ratios[0])?;
        kv.set("val_fraction", &mut d.ratios[1])?;
        kv.set("test_fraction", &mut d.ratios[2])?;
        d.corpus.validate()?;
        Ok(d)
    }
}
