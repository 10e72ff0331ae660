//! Finite-difference checks for every tape operation and the composite blocks.

use emc_core::cma::{CmaConfig, CmaModule, Modality};
use emc_core::ea::{EaBlock, EaConfig, EmotionMlp};
use emc_core::emotion::{EmotionFeatures, EmotionSource};
use emc_core::gradcheck::{check_inputs, check_param_subset, check_params, op_cases, DEFAULT_STEP};
use emc_core::synth::{generate_corpus, CorpusSpec};
use emc_core::*;

const OP_TOL: f64 = 1e-5;
const E2E_TOL: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences_over_twenty_seeds() {
    for seed in 0..20 {
        for case in op_cases(seed) {
            let r = check_inputs(&case.inputs, DEFAULT_STEP, &case.build).unwrap();
            assert!(r.checked > 0);
            assert!(r.max_rel_error < OP_TOL, "{} seed {seed}: {}", case.name, r.max_rel_error);
        }
    }
}

#[test]
fn matmul_sum_gradient_is_tight() {
    let mut rng = RngState::new(7);
    let a = Tensor::new(vec![3, 4], rng.normals(12)).unwrap();
    let b = Tensor::new(vec![4, 2], rng.normals(8)).unwrap();
    let r = check_inputs(&[a, b], 1e-5, |t, v| {
        let p = t.matmul(v[0], v[1])?;
        t.sum(p)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
}

fn random_emotion(rng: &mut RngState, source: EmotionSource, frames: usize) -> EmotionFeatures<f64> {
    let w = source.width();
    let mut v = rng.normals(frames * w);
    for x in &mut v {
        *x = x.tanh() * 0.5 + 0.5;
    }
    EmotionFeatures::unchecked(source, Tensor::matrix(frames, w, v).unwrap()).unwrap()
}

fn small_ea(emotion_aware: bool) -> EaConfig {
    EaConfig { emotion_aware, ..EaConfig::new(8, 4, 2, 16) }
}

#[test]
fn ea_block_gradients_wrt_features_and_params() {
    for seed in 0..20 {
        let mut rng = RngState::new(seed);
        let mut store = ParamStore::new();
        let block = EaBlock::new(&mut store, "ea", small_ea(true), &mut rng).unwrap();
        let emo = random_emotion(&mut rng, EmotionSource::Facial, 5);
        let x = Tensor::new(vec![5, 8], rng.normals(40)).unwrap();
        let w = Tensor::new(vec![5, 8], rng.normals(40)).unwrap();
        let loss = |g: &mut Graph<'_, f64>, _: &mut RngState| {
            let xv = g.input(x.clone());
            let y = block.forward(g, xv, &emo)?;
            let wv = g.input(w.clone());
            let p = g.tape.mul(y, wv)?;
            g.tape.sum(p)
        };
        let r = check_params(&store, 40, DEFAULT_STEP, &mut rng.fork(1), &rng, loss).unwrap();
        assert!(r.max_rel_error < OP_TOL, "params seed {seed}: {}", r.max_rel_error);

        // wrt the feature input: treat x as a parameter of its own store
        let mut fstore = store.clone();
        let xid = fstore.add("x", x.clone());
        let loss_x = |g: &mut Graph<'_, f64>, _: &mut RngState| {
            let xv = g.param(xid);
            let y = block.forward(g, xv, &emo)?;
            let wv = g.input(w.clone());
            let p = g.tape.mul(y, wv)?;
            g.tape.sum(p)
        };
        let r = check_param_subset(&fstore, &[xid], 40, DEFAULT_STEP, &mut rng.fork(5), &rng, loss_x).unwrap();
        assert!(r.max_rel_error < OP_TOL, "features seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn emotion_mlp_heads_gradients() {
    for seed in 0..20 {
        let mut rng = RngState::new(seed);
        let mut store = ParamStore::new();
        let mlp = EmotionMlp::new(&mut store, "emlp", 6, &mut rng);
        let ef = random_emotion(&mut rng, EmotionSource::Facial, 4);
        let es = random_emotion(&mut rng, EmotionSource::Speech, 4);
        let loss = |g: &mut Graph<'_, f64>, _: &mut RngState| {
            let a = mlp.forward(g, &ef)?;
            let b = mlp.forward(g, &es)?;
            let a2 = g.tape.square(a)?;
            let p = g.tape.mul(a2, b)?;
            g.tape.sum(p)
        };
        let r = check_params(&store, 40, DEFAULT_STEP, &mut rng.fork(2), &rng, loss).unwrap();
        assert!(r.max_rel_error < OP_TOL, "seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn cma_loss_and_substitute_gradients() {
    for seed in 0..20 {
        let mut rng = RngState::new(seed);
        let mut store = ParamStore::new();
        let cfg = CmaConfig { embed_dim: 6, latent_dim: 3, hidden_dim: 5, inference_samples: 2 };
        let cma = CmaModule::new(&mut store, Modality::Speech, cfg, &mut rng).unwrap();
        let ut = Tensor::new(vec![4, 6], rng.normals(24)).unwrap();
        let uc = Tensor::new(vec![4, 6], rng.normals(24)).unwrap();
        let loss = |g: &mut Graph<'_, f64>, r: &mut RngState| {
            let t = g.input(ut.clone());
            let c = g.input(uc.clone());
            let l = cma.loss(g, t, c, r)?;
            let kl = g.tape.scale(l.kl, 0.1)?;
            let total = g.tape.add(l.align, kl)?;
            let sub = cma.infer_substitute(g, c, r)?;
            let s2 = g.tape.square(sub)?;
            let s = g.tape.mean(s2)?;
            g.tape.add(total, s)
        };
        let r = check_params(&store, 40, DEFAULT_STEP, &mut rng.fork(3), &rng.fork(4), loss).unwrap();
        assert!(r.max_rel_error < OP_TOL, "seed {seed}: {}", r.max_rel_error);
    }
}

fn tiny_model_config(emotion_aware: bool) -> ModelConfig {
    ModelConfig {
        facial_dim: 6,
        speech_dim: 5,
        listener_dim: 25,
        embed_dim: 8,
        emotion_dim: 4,
        num_heads: 2,
        hidden_dim: 8,
        cma_latent_dim: 3,
        reaction_latent_dim: 4,
        max_len: 16,
        emotion_aware,
        ..ModelConfig::default()
    }
}

fn tiny_corpus(seed: u64) -> Vec<Clip> {
    let spec = CorpusSpec { num_clips: 4, frames: 6, facial_dim: 6, speech_dim: 5, seed, listener_lag_frames: 2, ..CorpusSpec::default() };
    generate_corpus(&spec).unwrap()
}

#[test]
fn end_to_end_training_loss_over_twenty_seeds() {
    for seed in 0..20 {
        let model = Model::new(tiny_model_config(seed % 5 != 4), seed).unwrap();
        let clip = &tiny_corpus(seed)[0];
        let choice = FusionInput::ALL[seed as usize % 3];
        let weights = LossWeights::default();
        let loss = |g: &mut Graph<'_, f64>, r: &mut RngState| Ok(model.training_loss(g, clip, choice, &weights, r)?.total);
        let rng = RngState::new(seed + 1000);
        let r = check_params(model.params(), 32, DEFAULT_STEP, &mut rng.fork(1), &rng, loss).unwrap();
        assert_eq!(r.checked, 32);
        assert!(r.max_rel_error < E2E_TOL, "seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn fuse_gradients_through_both_embeddings() {
    for seed in 0..5 {
        let model = Model::new(tiny_model_config(true), seed).unwrap();
        let clip = &tiny_corpus(seed)[1];
        let loss = |g: &mut Graph<'_, f64>, r: &mut RngState| {
            let uni = model.encode_unimodal(g, clip, ModalityMask::NO_SPEECH, FillStrategy::Cma, r)?;
            let emo = model.emotion_for(clip, ModalityMask::NO_SPEECH);
            let (ef, es) = model.enhance_unimodal(g, uni.facial, uni.speech, emo, uni.flags)?;
            let z = model.fuse(g, ef, es, emo)?;
            let a = g.tape.sum(z.mu)?;
            let lv = g.tape.square(z.log_var)?;
            let b = g.tape.mean(lv)?;
            g.tape.add(a, b)
        };
        let rng = RngState::new(seed);
        let r = check_params(model.params(), 64, DEFAULT_STEP, &mut rng.fork(9), &rng, loss).unwrap();
        assert!(r.max_rel_error < OP_TOL, "seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn two_backward_passes_are_bit_identical() {
    let model = Model::new(tiny_model_config(true), 3).unwrap();
    let clip = &tiny_corpus(3)[0];
    let mut g = Graph::training(model.params());
    let terms = model.training_loss(&mut g, clip, FusionInput::SpeechSubstitute, &LossWeights::default(), &mut RngState::new(1)).unwrap();
    let a = g.tape.backward(terms.total).unwrap();
    let b = g.tape.backward(terms.total).unwrap();
    for id in model.params().ids() {
        if let Some(v) = g.bound_var(id) {
            let (x, y) = (a.get(v).unwrap(), b.get(v).unwrap());
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
