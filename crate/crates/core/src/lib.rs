//! Emotion-aware multimodal listener reaction generation.
//!
//! A small reverse-mode autodiff engine, the attention blocks and
//! conditional VAEs built on it, the end-to-end generator, evaluation
//! metrics, and a synthetic dyadic corpus. Everything numeric is generic
//! over [`Scalar`] (`f32` or `f64`); the aliases below fix the usual
//! choice of `f64`.

pub mod cma;
pub mod ea;
pub mod emotion;
pub mod error;
pub mod gradcheck;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use cma::{CmaConfig, CmaLoss, CmaModule, Modality};
pub use ea::{EaBlock, EaConfig, EmotionMlp};
pub use emotion::{EmotionFeatures, EmotionSource};
pub use error::{Error, Result};
pub use latent::GaussianLatent;
pub use metrics::{MetricConfig, MetricsReport, ReactionSet};
pub use params::{Graph, ParamId, ParamStore};
pub use pipeline::{
    EmcModel, EmotionPreference, FillStrategy, FusionInput, GenerateOptions, LossBreakdown, LossWeights, ModalityMask,
    ModelConfig,
};
pub use rng::{RngPosition, RngState};
pub use scalar::Scalar;
pub use synth::{generate_corpus, split_corpus, ClipRecord, CorpusSpec, Split};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type Model = EmcModel<f64>;
pub type ModelF32 = EmcModel<f32>;
pub type Clip = ClipRecord<f64>;
pub type Reactions = ReactionSet<f64>;
