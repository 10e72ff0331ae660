//! Emotion-aware attention.
//!
//! A block refines a feature sequence with self-attention, refines an
//! embedded emotion sequence with its own self-attention, then lets the
//! features attend to the emotions (features give the queries, emotions the
//! keys and values). Each sub-block is a pre-norm residual; a final layer
//! norm closes the block. With the emotion path disabled the block reduces
//! to plain self-attention, which is what the no-EA ablation uses.

use crate::emotion::{EmotionFeatures, EmotionSource, FACIAL_EMOTION_DIM, SPEECH_EMOTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp, MultiHeadAttention};
use crate::params::{Graph, ParamId, ParamStore};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EaConfig {
    pub model_dim: usize,
    pub emotion_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub positional_encoding: bool,
    /// When false the emotion self-attention, e-MLP and cross-attention are omitted.
    pub emotion_aware: bool,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            emotion_dim: 32,
            num_heads: 4,
            head_dim: 16,
            dropout: 0.0,
            max_len: 256,
            positional_encoding: true,
            emotion_aware: true,
        }
    }
}

impl EaConfig {
    /// Config for `model_dim` with the head count split evenly.
    pub fn new(model_dim: usize, emotion_dim: usize, num_heads: usize, max_len: usize) -> Self {
        Self {
            model_dim,
            emotion_dim,
            num_heads,
            head_dim: if num_heads == 0 { 0 } else { model_dim / num_heads },
            max_len,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.model_dim, self.emotion_dim, self.num_heads, self.head_dim, self.max_len];
        if dims.contains(&0) {
            return Err(Error::Invalid(format!("EA dimensions must be positive: {self:?}")));
        }
        if self.num_heads * self.head_dim != self.model_dim {
            return Err(Error::Invalid(format!(
                "num_heads {} x head_dim {} != model_dim {}",
                self.num_heads, self.head_dim, self.model_dim
            )));
        }
        if self.emotion_aware && self.emotion_dim % self.num_heads != 0 {
            return Err(Error::Invalid(format!(
                "emotion_dim {} not divisible by {} heads",
                self.emotion_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Emotion MLP: one input head per emotion layout, both landing in the
/// same `emotion_dim` space.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionMlp {
    pub facial: Mlp,
    pub speech: Mlp,
    pub out_dim: usize,
}

impl EmotionMlp {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, out_dim: usize, rng: &mut RngState) -> Self {
        Self {
            facial: Mlp::new(store, &format!("{name}.facial"), FACIAL_EMOTION_DIM, out_dim, out_dim, rng),
            speech: Mlp::new(store, &format!("{name}.speech"), SPEECH_EMOTION_DIM, out_dim, out_dim, rng),
            out_dim,
        }
    }

    /// Embeds every frame of `emotion` into `[T × out_dim]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, emotion: &EmotionFeatures<S>) -> Result<Var> {
        let head = match emotion.source() {
            EmotionSource::Facial => &self.facial,
            EmotionSource::Speech => &self.speech,
        };
        let x = g.input(emotion.values().clone());
        head.forward(g, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.facial.params().into_iter().chain(self.speech.params()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EmotionPath {
    embed: EmotionMlp,
    norm: LayerNorm,
    self_attn: MultiHeadAttention,
    query_norm: LayerNorm,
    kv_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
}

/// Parameters of one emotion-aware attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct EaBlock {
    config: EaConfig,
    feature_norm: LayerNorm,
    feature_attn: MultiHeadAttention,
    emotion: Option<EmotionPath>,
    out_norm: LayerNorm,
}

/// Block output plus the attention weights of every sub-block, in order
/// feature self-attention, emotion self-attention, cross-attention.
pub struct EaOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

/// Sinusoidal table `[frames × dim]`.
pub fn sinusoidal_encoding<S: Scalar>(frames: usize, dim: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = t as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            data.push(S::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::matrix(frames, dim, data).expect("finite table")
}

impl EaBlock {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, config: EaConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let (d, de, h) = (config.model_dim, config.emotion_dim, config.num_heads);
        let feature_norm = LayerNorm::new(store, &format!("{name}.feat_norm"), d);
        let feature_attn = MultiHeadAttention::new(store, &format!("{name}.feat_attn"), d, d, d, h, rng)?;
        let emotion = if config.emotion_aware {
            Some(EmotionPath {
                embed: EmotionMlp::new(store, &format!("{name}.e_mlp"), de, rng),
                norm: LayerNorm::new(store, &format!("{name}.emo_norm"), de),
                self_attn: MultiHeadAttention::new(store, &format!("{name}.emo_attn"), de, de, de, h, rng)?,
                query_norm: LayerNorm::new(store, &format!("{name}.cross_q_norm"), d),
                kv_norm: LayerNorm::new(store, &format!("{name}.cross_kv_norm"), de),
                cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, de, d, h, rng)?,
            })
        } else {
            None
        };
        let out_norm = LayerNorm::new(store, &format!("{name}.out_norm"), d);
        Ok(Self { config, feature_norm, feature_attn, emotion, out_norm })
    }

    pub fn config(&self) -> &EaConfig {
        &self.config
    }

    pub fn emotion_mlp(&self) -> Option<&EmotionMlp> {
        self.emotion.as_ref().map(|p| &p.embed)
    }

    /// Cross-attention parameters, if the block is emotion-aware.
    pub fn cross_attention(&self) -> Option<&MultiHeadAttention> {
        self.emotion.as_ref().map(|p| &p.cross_attn)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.feature_norm.params().to_vec();
        ids.extend(self.feature_attn.params());
        if let Some(p) = &self.emotion {
            ids.extend(p.embed.params());
            ids.extend(p.norm.params());
            ids.extend(p.self_attn.params());
            ids.extend(p.query_norm.params());
            ids.extend(p.kv_norm.params());
            ids.extend(p.cross_attn.params());
        }
        ids.extend(self.out_norm.params());
        ids
    }

    fn add_position<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, dim: usize) -> Result<Var> {
        if !self.config.positional_encoding {
            return Ok(x);
        }
        let frames = g.tape.shape(x)[0];
        let pe = g.input(sinusoidal_encoding(frames, dim));
        g.tape.add(x, pe)
    }

    /// Emotion-enhanced features, same shape as `features`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, features: Var, emotion: &EmotionFeatures<S>) -> Result<Var> {
        Ok(self.forward_traced(g, features, emotion)?.output)
    }

    pub fn forward_traced<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        features: Var,
        emotion: &EmotionFeatures<S>,
    ) -> Result<EaOutput> {
        let shape = g.tape.shape(features).to_vec();
        if shape.len() != 2 || shape[1] != self.config.model_dim {
            return Err(Error::Shape { op: "ea_forward", lhs: shape, rhs: vec![0, self.config.model_dim] });
        }
        let frames = shape[0];
        if frames > self.config.max_len {
            return Err(Error::TooLong { len: frames, max: self.config.max_len });
        }
        if self.emotion.is_some() && emotion.frames() != frames {
            return Err(Error::LengthMismatch(frames, emotion.frames()));
        }
        let rate = self.config.dropout;
        let mut attention = Vec::new();

        let x = self.add_position(g, features, self.config.model_dim)?;
        let h = self.feature_norm.forward(g, x)?;
        let a = self.feature_attn.forward(g, h, h)?;
        attention.extend(a.weights);
        let a = g.dropout(a.output, rate)?;
        let mut x = g.tape.add(x, a)?;

        if let Some(path) = &self.emotion {
            let e = path.embed.forward(g, emotion)?;
            let e = self.add_position(g, e, self.config.emotion_dim)?;
            let he = path.norm.forward(g, e)?;
            let ae = path.self_attn.forward(g, he, he)?;
            attention.extend(ae.weights);
            let ae = g.dropout(ae.output, rate)?;
            let e = g.tape.add(e, ae)?;

            let q = path.query_norm.forward(g, x)?;
            let kv = path.kv_norm.forward(g, e)?;
            let c = path.cross_attn.forward(g, q, kv)?;
            attention.extend(c.weights);
            let c = g.dropout(c.output, rate)?;
            x = g.tape.add(x, c)?;
        }
        let output = self.out_norm.forward(g, x)?;
        Ok(EaOutput { output, attention })
    }
}
