//! The end-to-end reaction generator.
//!
//! Speaker facial and speech features are encoded framewise, a missing
//! modality is replaced by its CMA substitute, both embeddings are
//! enhanced with the speaker's emotion (U-EA), fused into a per-frame
//! reaction distribution (M-EA), and samples of that distribution are
//! refined with emotion again (S-EA) before a framewise decoder emits
//! listener reaction features.

use crate::cma::{CmaConfig, CmaModule, Modality};
use crate::ea::{EaBlock, EaConfig};
use crate::emotion::{EmotionFeatures, EmotionSource};
use crate::error::{Error, Result};
use crate::latent::{gaussian_sample, kl_diag_gaussian_pair, kl_diag_gaussian_to_standard, GaussianLatent};
use crate::nn::{Linear, Mlp};
use crate::params::{Graph, ParamId, ParamStore};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::synth::{ClipRecord, LISTENER_DIM};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Generated listener features `[T × d_l]`.
pub type ListenerReaction<S> = Tensor<S>;

/// Which emotion stream S-EA reads when both modalities are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmotionPreference {
    Facial,
    Speech,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub facial_dim: usize,
    pub speech_dim: usize,
    pub listener_dim: usize,
    pub embed_dim: usize,
    pub emotion_dim: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub cma_latent_dim: usize,
    pub reaction_latent_dim: usize,
    pub max_len: usize,
    pub positional_encoding: bool,
    pub dropout: f64,
    /// False builds the no-EA ablation: every EA block is plain self-attention.
    pub emotion_aware: bool,
    pub cma_samples: usize,
    pub sample_emotion: EmotionPreference,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            facial_dim: 32,
            speech_dim: 24,
            listener_dim: LISTENER_DIM,
            embed_dim: 64,
            emotion_dim: 32,
            num_heads: 4,
            hidden_dim: 64,
            cma_latent_dim: 16,
            reaction_latent_dim: 32,
            max_len: 256,
            positional_encoding: true,
            dropout: 0.0,
            emotion_aware: true,
            cma_samples: 1,
            sample_emotion: EmotionPreference::Facial,
        }
    }
}

impl ModelConfig {
    fn ea(&self, model_dim: usize) -> EaConfig {
        EaConfig {
            dropout: self.dropout,
            positional_encoding: self.positional_encoding,
            emotion_aware: self.emotion_aware,
            ..EaConfig::new(model_dim, self.emotion_dim, self.num_heads, self.max_len)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.facial_dim,
            self.speech_dim,
            self.listener_dim,
            self.embed_dim,
            self.hidden_dim,
            self.cma_latent_dim,
            self.reaction_latent_dim,
            self.cma_samples,
        ];
        if dims.contains(&0) {
            return Err(Error::Invalid(format!("model dimensions must be positive: {self:?}")));
        }
        self.ea(self.embed_dim).validate()?;
        self.ea(self.reaction_latent_dim).validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModalityMask {
    pub facial: bool,
    pub speech: bool,
}

impl ModalityMask {
    pub const FULL: Self = Self { facial: true, speech: true };
    pub const NO_SPEECH: Self = Self { facial: true, speech: false };
    pub const NO_FACIAL: Self = Self { facial: false, speech: true };

    pub fn validate(self) -> Result<Self> {
        if !self.facial && !self.speech {
            return Err(Error::NoModality);
        }
        Ok(self)
    }
}

/// Which pair of embeddings M-EA receives for a training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionInput {
    /// Real facial and real speech embeddings.
    RealPair,
    /// CMA facial substitute with real speech.
    FacialSubstitute,
    /// Real facial with CMA speech substitute.
    SpeechSubstitute,
}

impl FusionInput {
    pub const ALL: [FusionInput; 3] = [FusionInput::RealPair, FusionInput::FacialSubstitute, FusionInput::SpeechSubstitute];
}

/// How a missing modality's embedding slot is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FillStrategy {
    Cma,
    ZeroFill,
}

/// Which embedding slots hold substitutes rather than real encodings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubstituteFlags {
    pub facial: bool,
    pub speech: bool,
}

/// Weights of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub kl: f64,
    pub fusion: f64,
    pub cma: f64,
    /// Weight of the KL term inside each CVAE objective.
    pub cma_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rec: 1.0, kl: 0.01, fusion: 0.1, cma: 1.0, cma_kl: 0.1 }
    }
}

/// Per-term values of one training loss evaluation.
///
/// `kl` and `fusion` are per-frame means of the summed divergences; the
/// CVAE terms are `align + cma_kl · kl`, also per frame. Terms whose
/// weight is zero are not evaluated and read as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub kl: f64,
    pub fusion: f64,
    pub cma_speech: f64,
    pub cma_facial: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rec: self.rec * c,
            kl: self.kl * c,
            fusion: self.fusion * c,
            cma_speech: self.cma_speech * c,
            cma_facial: self.cma_facial * c,
            total: self.total * c,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            rec: self.rec + o.rec,
            kl: self.kl + o.kl,
            fusion: self.fusion + o.fusion,
            cma_speech: self.cma_speech + o.cma_speech,
            cma_facial: self.cma_facial + o.cma_facial,
            total: self.total + o.total,
        }
    }
}

/// Tape handles of every training-loss term.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub rec: Option<Var>,
    pub kl: Option<Var>,
    pub fusion: Option<Var>,
    pub cma_speech: Option<Var>,
    pub cma_facial: Option<Var>,
    pub total: Var,
}

/// Embedding slots after compensation.
#[derive(Clone, Copy, Debug)]
pub struct Unimodal {
    pub facial: Var,
    pub speech: Var,
    pub flags: SubstituteFlags,
}

/// Knobs for [`EmcModel::generate_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerateOptions {
    pub fill: FillStrategy,
    /// Added to every raw log-variance of the reaction distribution before clamping.
    pub log_var_offset: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { fill: FillStrategy::Cma, log_var_offset: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmcModel<S> {
    config: ModelConfig,
    params: ParamStore<S>,
    facial_encoder: Mlp,
    speech_encoder: Mlp,
    cma_facial: CmaModule,
    cma_speech: CmaModule,
    uea_facial: EaBlock,
    uea_speech: EaBlock,
    fusion_proj: Linear,
    mea: EaBlock,
    reaction_mu: Linear,
    reaction_log_var: Linear,
    sea: EaBlock,
    decoder: Mlp,
}

/// Sum over frames of the three pairwise KL divergences between the
/// reaction distributions of the real pair and the two substitute pairs.
pub fn fusion_consistency_loss<S: Scalar>(
    tape: &mut Tape<S>,
    real: GaussianLatent,
    facial_sub: GaussianLatent,
    speech_sub: GaussianLatent,
) -> Result<Var> {
    let a = kl_diag_gaussian_pair(tape, real, facial_sub)?;
    let b = kl_diag_gaussian_pair(tape, real, speech_sub)?;
    let c = kl_diag_gaussian_pair(tape, facial_sub, speech_sub)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

impl<S: Scalar> EmcModel<S> {
    /// Builds a randomly initialized model; the seed fixes every parameter.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let mut p = ParamStore::new();
        let (du, hid) = (config.embed_dim, config.hidden_dim);
        let facial_encoder = Mlp::new(&mut p, "enc_facial", config.facial_dim, hid, du, &mut rng);
        let speech_encoder = Mlp::new(&mut p, "enc_speech", config.speech_dim, hid, du, &mut rng);
        let cma_cfg = CmaConfig {
            embed_dim: du,
            latent_dim: config.cma_latent_dim,
            hidden_dim: hid,
            inference_samples: config.cma_samples,
        };
        let cma_facial = CmaModule::new(&mut p, Modality::Facial, cma_cfg.clone(), &mut rng)?;
        let cma_speech = CmaModule::new(&mut p, Modality::Speech, cma_cfg, &mut rng)?;
        let uea_facial = EaBlock::new(&mut p, "uea_facial", config.ea(du), &mut rng)?;
        let uea_speech = EaBlock::new(&mut p, "uea_speech", config.ea(du), &mut rng)?;
        let fusion_proj = Linear::new(&mut p, "fusion_proj", 2 * du, du, &mut rng);
        let mea = EaBlock::new(&mut p, "mea", config.ea(du), &mut rng)?;
        let dz = config.reaction_latent_dim;
        let reaction_mu = Linear::new(&mut p, "reaction_mu", du, dz, &mut rng);
        let reaction_log_var = Linear::new(&mut p, "reaction_log_var", du, dz, &mut rng);
        let sea = EaBlock::new(&mut p, "sea", config.ea(dz), &mut rng)?;
        let decoder = Mlp::new(&mut p, "decoder", dz, hid, config.listener_dim, &mut rng);
        Ok(Self {
            config,
            params: p,
            facial_encoder,
            speech_encoder,
            cma_facial,
            cma_speech,
            uea_facial,
            uea_speech,
            fusion_proj,
            mea,
            reaction_mu,
            reaction_log_var,
            sea,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn cma(&self, target: Modality) -> &CmaModule {
        match target {
            Modality::Facial => &self.cma_facial,
            Modality::Speech => &self.cma_speech,
        }
    }

    /// Parameters of both CMA modules.
    pub fn cma_params(&self) -> Vec<ParamId> {
        self.cma_facial.params().into_iter().chain(self.cma_speech.params()).collect()
    }

    pub fn uea(&self, modality: Modality) -> &EaBlock {
        match modality {
            Modality::Facial => &self.uea_facial,
            Modality::Speech => &self.uea_speech,
        }
    }

    pub fn mea(&self) -> &EaBlock {
        &self.mea
    }

    pub fn sea(&self) -> &EaBlock {
        &self.sea
    }

    pub fn encoder_params(&self, modality: Modality) -> Vec<ParamId> {
        match modality {
            Modality::Facial => self.facial_encoder.params(),
            Modality::Speech => self.speech_encoder.params(),
        }
    }

    fn check_clip(&self, clip: &ClipRecord<S>) -> Result<()> {
        let c = &self.config;
        let checks = [
            (clip.facial.cols(), c.facial_dim),
            (clip.speech.cols(), c.speech_dim),
            (clip.listener.cols(), c.listener_dim),
        ];
        for (got, want) in checks {
            if got != want {
                return Err(Error::Shape { op: "clip", lhs: vec![clip.frames(), got], rhs: vec![clip.frames(), want] });
            }
        }
        if clip.speech.rows() != clip.frames() {
            return Err(Error::LengthMismatch(clip.frames(), clip.speech.rows()));
        }
        if clip.frames() > c.max_len {
            return Err(Error::TooLong { len: clip.frames(), max: c.max_len });
        }
        Ok(())
    }

    /// Emotion stream consistent with `mask`: facial when the face is present.
    pub fn emotion_for<'c>(&self, clip: &'c ClipRecord<S>, mask: ModalityMask) -> &'c EmotionFeatures<S> {
        if mask.facial {
            &clip.emotion_facial
        } else {
            &clip.emotion_speech
        }
    }

    /// Emotion stream S-EA reads under `mask`.
    pub fn sample_emotion_for<'c>(&self, clip: &'c ClipRecord<S>, mask: ModalityMask) -> &'c EmotionFeatures<S> {
        match (mask.facial, mask.speech, self.config.sample_emotion) {
            (true, true, EmotionPreference::Speech) | (false, _, _) => &clip.emotion_speech,
            _ => &clip.emotion_facial,
        }
    }

    /// Real embeddings for present modalities, substitutes for missing ones.
    pub fn encode_unimodal(
        &self,
        g: &mut Graph<'_, S>,
        clip: &ClipRecord<S>,
        mask: ModalityMask,
        fill: FillStrategy,
        rng: &mut RngState,
    ) -> Result<Unimodal> {
        mask.validate()?;
        self.check_clip(clip)?;
        let frames = clip.frames();
        let real = |g: &mut Graph<'_, S>, enc: &Mlp, x: &Tensor<S>| -> Result<Var> {
            let x = g.input(x.clone());
            enc.forward(g, x)
        };
        let u_f = if mask.facial { Some(real(g, &self.facial_encoder, &clip.facial)?) } else { None };
        let u_s = if mask.speech { Some(real(g, &self.speech_encoder, &clip.speech)?) } else { None };
        let zero = |g: &mut Graph<'_, S>| g.input(Tensor::zeros(&[frames, self.config.embed_dim]));
        let (facial, speech) = match (u_f, u_s) {
            (Some(f), Some(s)) => (f, s),
            (Some(f), None) => {
                let s = match fill {
                    FillStrategy::Cma => self.cma_speech.infer_substitute(g, f, rng)?,
                    FillStrategy::ZeroFill => zero(g),
                };
                (f, s)
            }
            (None, Some(s)) => {
                let f = match fill {
                    FillStrategy::Cma => self.cma_facial.infer_substitute(g, s, rng)?,
                    FillStrategy::ZeroFill => zero(g),
                };
                (f, s)
            }
            (None, None) => return Err(Error::NoModality),
        };
        Ok(Unimodal { facial, speech, flags: SubstituteFlags { facial: !mask.facial, speech: !mask.speech } })
    }

    /// U-EA on both slots. A substitute slot goes through the same block as
    /// the real embedding of that modality.
    pub fn enhance_unimodal(
        &self,
        g: &mut Graph<'_, S>,
        u_f: Var,
        u_s: Var,
        emotion: &EmotionFeatures<S>,
        flags: SubstituteFlags,
    ) -> Result<(Var, Var)> {
        let expected = if flags.facial { EmotionSource::Speech } else { EmotionSource::Facial };
        if emotion.source() != expected {
            return Err(Error::Invalid(format!(
                "{:?} emotion given but {expected:?} emotion is required for {flags:?}",
                emotion.source()
            )));
        }
        let e_f = self.uea_facial.forward(g, u_f, emotion)?;
        let e_s = self.uea_speech.forward(g, u_s, emotion)?;
        Ok((e_f, e_s))
    }

    /// M-EA over the projected pair; per-frame reaction distribution.
    pub fn fuse(&self, g: &mut Graph<'_, S>, e_f: Var, e_s: Var, emotion: &EmotionFeatures<S>) -> Result<GaussianLatent> {
        self.fuse_offset(g, e_f, e_s, emotion, 0.0)
    }

    fn fuse_offset(
        &self,
        g: &mut Graph<'_, S>,
        e_f: Var,
        e_s: Var,
        emotion: &EmotionFeatures<S>,
        log_var_offset: f64,
    ) -> Result<GaussianLatent> {
        let (tf, ts) = (g.tape.shape(e_f)[0], g.tape.shape(e_s)[0]);
        if tf != ts {
            return Err(Error::LengthMismatch(tf, ts));
        }
        let pair = g.tape.concat(&[e_f, e_s], 1)?;
        let m = self.fusion_proj.forward(g, pair)?;
        let m = self.mea.forward(g, m, emotion)?;
        let mu = self.reaction_mu.forward(g, m)?;
        let mut log_var = self.reaction_log_var.forward(g, m)?;
        if log_var_offset != 0.0 {
            log_var = g.tape.add_scalar(log_var, S::lit(log_var_offset))?;
        }
        GaussianLatent::new(&mut g.tape, mu, log_var)
    }

    /// One draw `g ~ Z`, refined by S-EA and decoded to listener features.
    pub fn decode_sample(
        &self,
        g: &mut Graph<'_, S>,
        latent: GaussianLatent,
        emotion: &EmotionFeatures<S>,
        rng: &mut RngState,
    ) -> Result<Var> {
        let sample = gaussian_sample(&mut g.tape, latent.mu, latent.log_var, rng)?;
        let refined = self.sea.forward(g, sample, emotion)?;
        self.decoder.forward(g, refined)
    }

    /// Reaction distribution for `clip` under `mask`.
    pub fn reaction_latent(
        &self,
        g: &mut Graph<'_, S>,
        clip: &ClipRecord<S>,
        mask: ModalityMask,
        opts: GenerateOptions,
        rng: &mut RngState,
    ) -> Result<GaussianLatent> {
        let uni = self.encode_unimodal(g, clip, mask, opts.fill, rng)?;
        let emotion = self.emotion_for(clip, mask);
        let (e_f, e_s) = self.enhance_unimodal(g, uni.facial, uni.speech, emotion, uni.flags)?;
        self.fuse_offset(g, e_f, e_s, emotion, opts.log_var_offset)
    }

    /// `alpha` reactions drawn through the sampling path.
    pub fn generate(&self, clip: &ClipRecord<S>, mask: ModalityMask, rng: &mut RngState, alpha: usize) -> Result<Vec<ListenerReaction<S>>> {
        self.generate_with(clip, mask, rng, alpha, GenerateOptions::default())
    }

    pub fn generate_with(
        &self,
        clip: &ClipRecord<S>,
        mask: ModalityMask,
        rng: &mut RngState,
        alpha: usize,
        opts: GenerateOptions,
    ) -> Result<Vec<ListenerReaction<S>>> {
        if alpha == 0 {
            return Err(Error::Invalid("alpha must be at least 1".into()));
        }
        let mut g = Graph::inference(&self.params);
        let latent = self.reaction_latent(&mut g, clip, mask, opts, rng)?;
        let emotion = self.sample_emotion_for(clip, mask);
        let mut out = Vec::with_capacity(alpha);
        for _ in 0..alpha {
            let r = self.decode_sample(&mut g, latent, emotion, rng)?;
            out.push(g.tape.value(r).clone());
        }
        Ok(out)
    }

    /// Single reaction from the no-EA ablation with the given fill strategy.
    pub fn baseline_forward(
        &self,
        clip: &ClipRecord<S>,
        mask: ModalityMask,
        fill: FillStrategy,
        rng: &mut RngState,
    ) -> Result<ListenerReaction<S>> {
        if self.config.emotion_aware {
            return Err(Error::Invalid("baseline_forward needs a model built with emotion_aware = false".into()));
        }
        let opts = GenerateOptions { fill, ..GenerateOptions::default() };
        Ok(self.generate_with(clip, mask, rng, 1, opts)?.remove(0))
    }

    /// Reaction distributions of the real pair, the facial-substitute pair
    /// and the speech-substitute pair, each with the emotion stream that
    /// matches its situation.
    pub fn fusion_latents(
        &self,
        g: &mut Graph<'_, S>,
        clip: &ClipRecord<S>,
        rng: &mut RngState,
    ) -> Result<[GaussianLatent; 3]> {
        let uni = self.encode_unimodal(g, clip, ModalityMask::FULL, FillStrategy::Cma, rng)?;
        let ef = &clip.emotion_facial;
        let es = &clip.emotion_speech;
        let e_f = self.uea_facial.forward(g, uni.facial, ef)?;
        let e_s = self.uea_speech.forward(g, uni.speech, ef)?;
        let real = self.fuse(g, e_f, e_s, ef)?;
        let sub_f = self.cma_facial.infer_substitute(g, uni.speech, rng)?;
        let sub_s = self.cma_speech.infer_substitute(g, uni.facial, rng)?;
        let ef_sub = self.uea_facial.forward(g, sub_f, es)?;
        let es_real = self.uea_speech.forward(g, uni.speech, es)?;
        let facial_sub = self.fuse(g, ef_sub, es_real, es)?;
        let es_sub = self.uea_speech.forward(g, sub_s, ef)?;
        let speech_sub = self.fuse(g, e_f, es_sub, ef)?;
        Ok([real, facial_sub, speech_sub])
    }

    /// Builds the weighted training objective for one clip on `g`.
    pub fn training_loss(
        &self,
        g: &mut Graph<'_, S>,
        clip: &ClipRecord<S>,
        choice: FusionInput,
        weights: &LossWeights,
        rng: &mut RngState,
    ) -> Result<LossTerms> {
        if clip.appropriate.is_empty() {
            return Err(Error::Insufficient(format!("clip {} has no ground-truth reaction", clip.id)));
        }
        self.check_clip(clip)?;
        let frames = clip.frames();
        let per_frame = S::one() / S::from_count(frames);
        let ef = &clip.emotion_facial;
        let es = &clip.emotion_speech;
        let main = weights.rec != 0.0 || weights.kl != 0.0 || weights.fusion != 0.0;

        let x_f = g.input(clip.facial.clone());
        let u_f = self.facial_encoder.forward(g, x_f)?;
        let x_s = g.input(clip.speech.clone());
        let u_s = self.speech_encoder.forward(g, x_s)?;

        let mut terms: Vec<(Var, f64)> = Vec::new();
        let mut out = LossTerms { rec: None, kl: None, fusion: None, cma_speech: None, cma_facial: None, total: u_f };

        if main {
            let fusion_on = weights.fusion != 0.0;
            let need = |c: FusionInput| fusion_on || choice == c;
            let e_f = self.uea_facial.forward(g, u_f, ef)?;
            let real = if need(FusionInput::RealPair) {
                let e_s = self.uea_speech.forward(g, u_s, ef)?;
                Some(self.fuse(g, e_f, e_s, ef)?)
            } else {
                None
            };
            let facial_sub = if need(FusionInput::FacialSubstitute) {
                let sub = self.cma_facial.infer_substitute(g, u_s, rng)?;
                let ef_sub = self.uea_facial.forward(g, sub, es)?;
                let es_real = self.uea_speech.forward(g, u_s, es)?;
                Some(self.fuse(g, ef_sub, es_real, es)?)
            } else {
                None
            };
            let speech_sub = if need(FusionInput::SpeechSubstitute) {
                let sub = self.cma_speech.infer_substitute(g, u_f, rng)?;
                let es_sub = self.uea_speech.forward(g, sub, ef)?;
                Some(self.fuse(g, e_f, es_sub, ef)?)
            } else {
                None
            };
            let (chosen, mask) = match choice {
                FusionInput::RealPair => (real, ModalityMask::FULL),
                FusionInput::FacialSubstitute => (facial_sub, ModalityMask::NO_FACIAL),
                FusionInput::SpeechSubstitute => (speech_sub, ModalityMask::NO_SPEECH),
            };
            let chosen = chosen.expect("chosen latent computed");
            if weights.rec != 0.0 {
                let emotion = self.sample_emotion_for(clip, mask);
                let pred = self.decode_sample(g, chosen, emotion, rng)?;
                let target = g.input(clip.listener.clone());
                let rec = g.tape.mse(pred, target)?;
                out.rec = Some(rec);
                terms.push((rec, weights.rec));
            }
            if weights.kl != 0.0 {
                let kl = kl_diag_gaussian_to_standard(&mut g.tape, chosen.mu, chosen.log_var)?;
                let kl = g.tape.scale(kl, per_frame)?;
                out.kl = Some(kl);
                terms.push((kl, weights.kl));
            }
            if let (true, Some(r), Some(f), Some(s)) = (fusion_on, real, facial_sub, speech_sub) {
                let fus = fusion_consistency_loss(&mut g.tape, r, f, s)?;
                let fus = g.tape.scale(fus, per_frame)?;
                out.fusion = Some(fus);
                terms.push((fus, weights.fusion));
            }
        }

        if weights.cma != 0.0 {
            for (module, target, cond) in [(&self.cma_speech, u_s, u_f), (&self.cma_facial, u_f, u_s)] {
                let l = module.loss(g, target, cond, rng)?;
                let kl = g.tape.scale(l.kl, S::lit(weights.cma_kl))?;
                let cvae = g.tape.add(l.align, kl)?;
                match module.target() {
                    Modality::Speech => out.cma_speech = Some(cvae),
                    Modality::Facial => out.cma_facial = Some(cvae),
                }
                terms.push((cvae, weights.cma));
            }
        }

        let mut total: Option<Var> = None;
        for (v, w) in terms {
            let scaled = if w == 1.0 { v } else { g.tape.scale(v, S::lit(w))? };
            total = Some(match total {
                None => scaled,
                Some(t) => g.tape.add(t, scaled)?,
            });
        }
        out.total = match total {
            Some(t) => t,
            None => g.input(Tensor::zeros(&[1])),
        };
        Ok(out)
    }

    /// Values of every loss term.
    pub fn breakdown(&self, g: &Graph<'_, S>, terms: &LossTerms) -> LossBreakdown {
        let v = |t: Option<Var>| t.map(|t| g.tape.value(t).item().as_f64()).unwrap_or(0.0);
        LossBreakdown {
            rec: v(terms.rec),
            kl: v(terms.kl),
            fusion: v(terms.fusion),
            cma_speech: v(terms.cma_speech),
            cma_facial: v(terms.cma_facial),
            total: v(Some(terms.total)),
        }
    }

    /// Loss values and per-parameter gradients for one clip.
    pub fn loss_and_grads(
        &self,
        clip: &ClipRecord<S>,
        choice: FusionInput,
        weights: &LossWeights,
        rng: &mut RngState,
    ) -> Result<(LossBreakdown, Vec<Option<Vec<S>>>)> {
        let mut g = Graph::training(&self.params);
        if self.config.dropout > 0.0 {
            g = g.with_dropout(rng.split());
        }
        let terms = self.training_loss(&mut g, clip, choice, weights, rng)?;
        let values = self.breakdown(&g, &terms);
        let grads = g.tape.backward(terms.total)?;
        Ok((values, g.param_grads(&grads)))
    }

    /// Weighted loss values only.
    pub fn loss_values(
        &self,
        clip: &ClipRecord<S>,
        choice: FusionInput,
        weights: &LossWeights,
        rng: &mut RngState,
    ) -> Result<LossBreakdown> {
        let mut g = Graph::inference(&self.params);
        let terms = self.training_loss(&mut g, clip, choice, weights, rng)?;
        Ok(self.breakdown(&g, &terms))
    }

    /// Rounds every parameter to 32-bit precision in place.
    pub fn round_to_f32(&mut self) {
        for id in self.params.ids().collect::<Vec<_>>() {
            for v in self.params.values_mut(id) {
                *v = S::lit(v.as_f64() as f32 as f64);
            }
        }
    }
}
