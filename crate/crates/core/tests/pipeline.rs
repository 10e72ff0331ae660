//! Contracts of the end-to-end generator.

use emc_core::latent::{kl_diag_gaussian_pair, LOG_VAR_MIN};
use emc_core::metrics::{fr_div, ReactionSet};
use emc_core::pipeline::fusion_consistency_loss;
use emc_core::synth::{generate_corpus, CorpusSpec};
use emc_core::*;

fn config(emotion_aware: bool) -> ModelConfig {
    ModelConfig {
        facial_dim: 6,
        speech_dim: 5,
        embed_dim: 8,
        emotion_dim: 4,
        num_heads: 2,
        hidden_dim: 8,
        cma_latent_dim: 3,
        reaction_latent_dim: 4,
        max_len: 32,
        emotion_aware,
        ..ModelConfig::default()
    }
}

fn corpus(seed: u64, frames: usize) -> Vec<Clip> {
    let spec = CorpusSpec { num_clips: 4, frames, facial_dim: 6, speech_dim: 5, seed, listener_lag_frames: 2, ..CorpusSpec::default() };
    generate_corpus(&spec).unwrap()
}

fn truncate(clip: &Clip, frames: usize) -> Clip {
    let cut = |t: &Tensor<f64>| Tensor::matrix(frames, t.cols(), t.data()[..frames * t.cols()].to_vec()).unwrap();
    Clip {
        id: clip.id.clone(),
        facial: cut(&clip.facial),
        speech: cut(&clip.speech),
        emotion_facial: EmotionFeatures::new(EmotionSource::Facial, cut(clip.emotion_facial.values())).unwrap(),
        emotion_speech: EmotionFeatures::new(EmotionSource::Speech, cut(clip.emotion_speech.values())).unwrap(),
        listener: cut(&clip.listener),
        appropriate: clip.appropriate.iter().map(cut).collect(),
    }
}

use emc_core::emotion::{EmotionFeatures, EmotionSource};

fn pairwise_mse(rs: &[Tensor<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..rs.len() {
        for j in i + 1..rs.len() {
            let d: f64 = rs[i].data().iter().zip(rs[j].data()).map(|(a, b)| (a - b).powi(2)).sum();
            out.push(d / rs[i].len() as f64);
        }
    }
    out
}

#[test]
fn generation_is_reproducible_and_shaped() {
    let model = Model::new(config(true), 1).unwrap();
    let clip = &corpus(1, 10)[0];
    for mask in [ModalityMask::FULL, ModalityMask::NO_SPEECH, ModalityMask::NO_FACIAL] {
        let a = model.generate(clip, mask, &mut RngState::new(5), 1).unwrap();
        let b = model.generate(clip, mask, &mut RngState::new(5), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].shape(), &[10, 25]);
    }
    let none = ModalityMask { facial: false, speech: false };
    assert!(matches!(model.generate(clip, none, &mut RngState::new(5), 1), Err(Error::NoModality)));
    assert!(model.generate(clip, ModalityMask::FULL, &mut RngState::new(5), 0).is_err());
}

#[test]
fn substitute_flags_follow_the_mask() {
    let model = Model::new(config(true), 2).unwrap();
    let clip = &corpus(2, 8)[0];
    let mut g = Graph::inference(model.params());
    let full = model.encode_unimodal(&mut g, clip, ModalityMask::FULL, FillStrategy::Cma, &mut RngState::new(1)).unwrap();
    assert!(!full.flags.facial && !full.flags.speech);
    let ns = model.encode_unimodal(&mut g, clip, ModalityMask::NO_SPEECH, FillStrategy::Cma, &mut RngState::new(1)).unwrap();
    assert!(!ns.flags.facial && ns.flags.speech);
    let nf = model.encode_unimodal(&mut g, clip, ModalityMask::NO_FACIAL, FillStrategy::Cma, &mut RngState::new(1)).unwrap();
    assert!(nf.flags.facial && !nf.flags.speech);
    // the present slot is the real embedding in every case
    assert_eq!(g.tape.value(full.facial), g.tape.value(ns.facial));
    assert_eq!(g.tape.value(full.speech), g.tape.value(nf.speech));
    assert_eq!(g.tape.value(ns.speech).shape(), g.tape.value(full.speech).shape());
    // substitutes need the emotion of the present modality
    assert!(model.enhance_unimodal(&mut g, ns.facial, ns.speech, &clip.emotion_speech, ns.flags).is_err());
    assert!(model.enhance_unimodal(&mut g, nf.facial, nf.speech, &clip.emotion_facial, nf.flags).is_err());
    assert!(model.enhance_unimodal(&mut g, nf.facial, nf.speech, &clip.emotion_speech, nf.flags).is_ok());
}

#[test]
fn substitutes_vary_with_the_seed_and_zero_fill_is_zero() {
    let model = Model::new(config(true), 3).unwrap();
    let clip = &corpus(3, 8)[0];
    let mut g = Graph::inference(model.params());
    let a = model.encode_unimodal(&mut g, clip, ModalityMask::NO_SPEECH, FillStrategy::Cma, &mut RngState::new(1)).unwrap();
    let b = model.encode_unimodal(&mut g, clip, ModalityMask::NO_SPEECH, FillStrategy::Cma, &mut RngState::new(2)).unwrap();
    assert!(g.tape.value(a.speech).max_abs_diff(g.tape.value(b.speech)) > 0.0);
    for mask in [ModalityMask::NO_SPEECH, ModalityMask::NO_FACIAL] {
        let z = model.encode_unimodal(&mut g, clip, mask, FillStrategy::ZeroFill, &mut RngState::new(1)).unwrap();
        let slot = if mask.speech { z.facial } else { z.speech };
        assert!(g.tape.value(slot).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn clamped_variance_collapses_the_samples() {
    let model = Model::new(config(true), 4).unwrap();
    for clip in &corpus(4, 12) {
        let opts = GenerateOptions { log_var_offset: -1e6, ..GenerateOptions::default() };
        let rs = model.generate_with(clip, ModalityMask::FULL, &mut RngState::new(9), 10, opts).unwrap();
        let worst = pairwise_mse(&rs).into_iter().fold(0.0, f64::max);
        assert!(worst < 1e-6, "clamp-min pairwise mse {worst} (floor {LOG_VAR_MIN})");
        let opts = GenerateOptions { log_var_offset: 3.0, ..GenerateOptions::default() };
        let rs = model.generate_with(clip, ModalityMask::FULL, &mut RngState::new(9), 10, opts).unwrap();
        assert!(pairwise_mse(&rs).into_iter().all(|m| m > 0.0));
    }
}

#[test]
fn inflated_variance_does_not_reduce_diversity() {
    let clips = corpus(5, 10);
    for c in [0.5, 1.0, 2.0] {
        let (mut base, mut inflated) = (0.0, 0.0);
        for seed in 0..20 {
            let model = Model::new(config(true), 100 + seed).unwrap();
            let clip = &clips[seed as usize % clips.len()];
            let div = |offset: f64| {
                let opts = GenerateOptions { log_var_offset: offset, ..GenerateOptions::default() };
                let rs = model.generate_with(clip, ModalityMask::FULL, &mut RngState::new(seed), 10, opts).unwrap();
                let set = ReactionSet::new(clip.id.clone(), rs, clip.appropriate.clone(), clip.speaker_reference().clone()).unwrap();
                fr_div(&[set]).unwrap()
            };
            base += div(0.0);
            inflated += div(c);
        }
        assert!(inflated >= base, "offset {c}: {inflated} < {base}");
    }
}

#[test]
fn total_is_the_weighted_sum_of_the_terms() {
    let model = Model::new(config(true), 6).unwrap();
    let clip = &corpus(6, 8)[1];
    let only_rec = LossWeights { kl: 0.0, fusion: 0.0, cma: 0.0, ..LossWeights::default() };
    for choice in FusionInput::ALL {
        let b = model.loss_values(clip, choice, &only_rec, &mut RngState::new(3)).unwrap();
        assert_eq!(b.total, b.rec);
        assert_eq!((b.kl, b.fusion, b.cma_speech, b.cma_facial), (0.0, 0.0, 0.0, 0.0));

        let w = LossWeights { rec: 0.7, kl: 0.3, fusion: 0.2, cma: 1.3, cma_kl: 0.05 };
        let b = model.loss_values(clip, choice, &w, &mut RngState::new(3)).unwrap();
        let sum = w.rec * b.rec + w.kl * b.kl + w.fusion * b.fusion + w.cma * (b.cma_speech + b.cma_facial);
        assert!((b.total - sum).abs() < 1e-12, "{} vs {sum}", b.total);
        assert!(b.rec > 0.0 && b.kl >= 0.0 && b.fusion >= 0.0 && b.cma_speech > 0.0 && b.cma_facial > 0.0);
    }
    let mut empty = clip.clone();
    empty.appropriate.clear();
    assert!(model.loss_values(&empty, FusionInput::RealPair, &only_rec, &mut RngState::new(3)).is_err());
}

#[test]
fn plain_pipeline_leaves_cma_untouched() {
    let model = Model::new(config(true), 7).unwrap();
    let clip = &corpus(7, 8)[0];
    let w = LossWeights { fusion: 0.0, cma: 0.0, ..LossWeights::default() };
    let (_, grads) = model.loss_and_grads(clip, FusionInput::RealPair, &w, &mut RngState::new(1)).unwrap();
    let cma = model.cma_params();
    assert!(!cma.is_empty());
    for id in &cma {
        assert!(grads[id.index()].is_none(), "{} received a gradient", model.params().name(*id));
    }
    // the speech-emotion heads are idle while facial emotion is available
    for id in model.params().ids().filter(|id| !cma.contains(id) && !model.params().name(*id).contains("e_mlp.speech")) {
        assert!(grads[id.index()].is_some(), "{} has no gradient", model.params().name(id));
    }
    let (_, grads) = model.loss_and_grads(clip, FusionInput::RealPair, &LossWeights::default(), &mut RngState::new(1)).unwrap();
    assert!(cma.iter().all(|id| grads[id.index()].is_some()));
}

#[test]
fn fusion_loss_roles_of_the_substitutes() {
    let model = Model::new(config(true), 8).unwrap();
    let clip = &corpus(8, 8)[0];
    let mut g = Graph::inference(model.params());
    let [r, f, s] = model.fusion_latents(&mut g, clip, &mut RngState::new(2)).unwrap();
    let fwd = fusion_consistency_loss(&mut g.tape, r, f, s).unwrap();
    let swapped = fusion_consistency_loss(&mut g.tape, r, s, f).unwrap();
    let kfs = kl_diag_gaussian_pair(&mut g.tape, f, s).unwrap();
    let ksf = kl_diag_gaussian_pair(&mut g.tape, s, f).unwrap();
    let same = fusion_consistency_loss(&mut g.tape, r, r, r).unwrap();
    let v = |x: Var| g.tape.value(x).item();
    assert!(((v(fwd) - v(kfs)) - (v(swapped) - v(ksf))).abs() < 1e-12);
    assert_eq!(v(same), 0.0);
    assert!(v(fwd) > 0.0);
}

#[test]
fn emotion_streams_change_the_output() {
    let model = Model::new(config(true), 9).unwrap();
    let clip = corpus(9, 10)[0].clone();
    let mut other = clip.clone();
    other.emotion_facial = corpus(10, 10)[1].emotion_facial.clone();
    let a = model.generate(&clip, ModalityMask::FULL, &mut RngState::new(1), 1).unwrap();
    let b = model.generate(&other, ModalityMask::FULL, &mut RngState::new(1), 1).unwrap();
    assert!(a[0].max_abs_diff(&b[0]) > 1e-6);

    let plain = Model::new(config(false), 9).unwrap();
    let a = plain.baseline_forward(&clip, ModalityMask::FULL, FillStrategy::ZeroFill, &mut RngState::new(1)).unwrap();
    let b = plain.baseline_forward(&other, ModalityMask::FULL, FillStrategy::ZeroFill, &mut RngState::new(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn baseline_matches_the_output_contract() {
    let plain = Model::new(config(false), 11).unwrap();
    let emc = Model::new(config(true), 11).unwrap();
    let clip = &corpus(11, 9)[2];
    for fill in [FillStrategy::Cma, FillStrategy::ZeroFill] {
        let r = plain.baseline_forward(clip, ModalityMask::NO_SPEECH, fill, &mut RngState::new(4)).unwrap();
        let e = emc.generate(clip, ModalityMask::NO_SPEECH, &mut RngState::new(4), 1).unwrap();
        assert_eq!(r.shape(), e[0].shape());
    }
    assert!(emc.baseline_forward(clip, ModalityMask::FULL, FillStrategy::Cma, &mut RngState::new(4)).is_err());
}

#[test]
fn frame_permutation_equivariance_without_positions() {
    let cfg = ModelConfig { positional_encoding: false, ..config(true) };
    let model = Model::new(cfg, 12).unwrap();
    let clip = truncate(&corpus(12, 10)[0], 7);
    let perm = [3usize, 0, 6, 1, 5, 2, 4];
    let shuffle = |t: &Tensor<f64>| Tensor::from_rows(&perm.iter().map(|&p| t.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
    let permuted = Clip {
        id: clip.id.clone(),
        facial: shuffle(&clip.facial),
        speech: shuffle(&clip.speech),
        emotion_facial: EmotionFeatures::new(EmotionSource::Facial, shuffle(clip.emotion_facial.values())).unwrap(),
        emotion_speech: EmotionFeatures::new(EmotionSource::Speech, shuffle(clip.emotion_speech.values())).unwrap(),
        listener: shuffle(&clip.listener),
        appropriate: clip.appropriate.iter().map(shuffle).collect(),
    };
    let opts = GenerateOptions { log_var_offset: -1e6, ..GenerateOptions::default() };
    let a = model.generate_with(&clip, ModalityMask::FULL, &mut RngState::new(1), 1, opts).unwrap();
    let b = model.generate_with(&permuted, ModalityMask::FULL, &mut RngState::new(1), 1, opts).unwrap();
    // only the clamped noise differs between the two orders
    assert!(shuffle(&a[0]).max_abs_diff(&b[0]) < 1e-3);
}

#[test]
fn single_frame_clips() {
    let model = Model::new(config(true), 13).unwrap();
    let clip = truncate(&corpus(13, 8)[0], 1);
    for mask in [ModalityMask::FULL, ModalityMask::NO_SPEECH, ModalityMask::NO_FACIAL] {
        let r = model.generate(&clip, mask, &mut RngState::new(1), 3).unwrap();
        assert_eq!(r[0].shape(), &[1, 25]);
    }
    let b = model.loss_values(&clip, FusionInput::SpeechSubstitute, &LossWeights::default(), &mut RngState::new(1)).unwrap();
    assert!(b.total.is_finite());
    let long = corpus(13, 40);
    assert!(matches!(model.generate(&long[0], ModalityMask::FULL, &mut RngState::new(1), 1), Err(Error::TooLong { .. })));
}

#[test]
fn single_precision_model_works() {
    let model = ModelF32::new(config(true), 14).unwrap();
    let clip = corpus(14, 8)[0].cast::<f32>().unwrap();
    let r = model.generate(&clip, ModalityMask::NO_FACIAL, &mut RngState::new(1), 2).unwrap();
    assert!(r.iter().all(|t| t.data().iter().all(|v| v.is_finite())));
    let b = model.loss_values(&clip, FusionInput::FacialSubstitute, &LossWeights::default(), &mut RngState::new(1)).unwrap();
    assert!(b.total.is_finite());
}

#[test]
fn parameter_seeds_differ() {
    let a = Model::new(config(true), 1).unwrap();
    let b = Model::new(config(true), 1).unwrap();
    let c = Model::new(config(true), 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params(), c.params());
    assert!(Model::new(ModelConfig { num_heads: 3, ..config(true) }, 1).is_err());
}
