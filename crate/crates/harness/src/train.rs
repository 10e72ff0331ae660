//! Mini-batch training.
//!
//! Each step draws one fusion-input choice for the whole batch, averages
//! per-clip gradients, clips them to a global norm and applies Adam.
//! Per-clip random streams are drawn in order before the batch is
//! evaluated, so the result does not depend on the thread count.

use rayon::prelude::*;

use emc_core::{Clip, FusionInput, LossBreakdown, LossWeights, Model, RngState};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::optim::{clip_global_norm, Adam};

/// Stream of the training generator, relative to the config seed.
pub const TRAIN_STREAM: u64 = 0x7472_6169_6e;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over every clip visited in the epoch.
    pub loss: LossBreakdown,
    /// Mean pre-clipping gradient norm over the epoch's steps.
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub rng: RngState,
}

pub fn choose(schedule: &[f64; 3], u: f64) -> FusionInput {
    let mut acc = 0.0;
    for (p, c) in schedule.iter().zip(FusionInput::ALL) {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // rounding leftovers go to the last choice with nonzero probability
    let last = schedule.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    FusionInput::ALL[last]
}

fn stage_weights(cfg: &TrainConfig, epoch: usize) -> LossWeights {
    if epoch < cfg.cma_pretrain_epochs {
        LossWeights { rec: 0.0, kl: 0.0, fusion: 0.0, ..cfg.weights }
    } else {
        cfg.weights
    }
}

fn check_dims(model: &Model, clip: &Clip) -> Result<()> {
    let c = model.config();
    if (clip.facial.cols(), clip.speech.cols(), clip.listener.cols()) != (c.facial_dim, c.speech_dim, c.listener_dim) {
        return Err(HarnessError::Data(format!(
            "clip {} has widths {}/{}/{}, model expects {}/{}/{}",
            clip.id,
            clip.facial.cols(),
            clip.speech.cols(),
            clip.listener.cols(),
            c.facial_dim,
            c.speech_dim,
            c.listener_dim
        )));
    }
    Ok(())
}

/// Trains `model` in place. `on_epoch` runs after every epoch and may
/// write checkpoints.
pub fn train(
    model: &mut Model,
    clips: &[Clip],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model, &RngState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(HarnessError::Data("empty training split".into()));
    }
    for c in clips {
        check_dims(model, c)?;
    }
    let mut rng = RngState::new(cfg.seed).fork(TRAIN_STREAM);
    let mut adam = Adam::new(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut initial: Option<f64> = None;
    let mut order: Vec<usize> = (0..clips.len()).collect();
    for epoch in 0..cfg.epochs {
        let weights = stage_weights(cfg, epoch);
        rng.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        let mut norms = 0.0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for batch in &batches {
            let choice = choose(&cfg.schedule, rng.uniform());
            let streams: Vec<RngState> = batch.iter().map(|_| rng.split()).collect();
            let m: &Model = model;
            let results = batch
                .par_iter()
                .zip(streams)
                .map(|(&i, mut r)| m.loss_and_grads(&clips[i], choice, &weights, &mut r))
                .collect::<emc_core::Result<Vec<_>>>()?;
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.params().len()];
            let mut batch_loss = LossBreakdown::default();
            for (loss, g) in results {
                batch_loss = batch_loss.add(&loss);
                for (acc, g) in grads.iter_mut().zip(g) {
                    match (acc.as_mut(), g) {
                        (Some(a), Some(g)) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        (None, Some(g)) => *acc = Some(g),
                        _ => {}
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.iter_mut().flatten() {
                g.iter_mut().for_each(|x| *x *= inv);
            }
            let mean_total = batch_loss.total * inv;
            let reference = *initial.get_or_insert(mean_total.abs());
            let limit = cfg.divergence_factor * reference;
            if !mean_total.is_finite() || (reference > 0.0 && mean_total > limit) {
                return Err(HarnessError::Diverged { epoch, loss: mean_total, limit });
            }
            sum = sum.add(&batch_loss);
            norms += clip_global_norm(&mut grads, cfg.grad_clip);
            adam.step(model.params_mut(), &grads);
        }
        let stats = EpochStats {
            epoch,
            loss: sum.scaled(1.0 / clips.len() as f64),
            grad_norm: norms / batches.len() as f64,
        };
        on_epoch(&stats, model, &rng)?;
        history.push(stats);
    }
    Ok(TrainOutcome { history, rng })
}

/// Mean fusion-consistency loss (per frame) over `clips` without training.
pub fn mean_fusion_loss(model: &Model, clips: &[Clip], seed: u64) -> Result<f64> {
    let weights = LossWeights { rec: 0.0, kl: 0.0, fusion: 1.0, cma: 0.0, cma_kl: 0.0 };
    let root = RngState::new(seed);
    let values = clips
        .par_iter()
        .map(|c| {
            let mut r = root.fork(emc_core::synth::id_hash(&c.id));
            model.loss_values(c, FusionInput::RealPair, &weights, &mut r).map(|l| l.fusion)
        })
        .collect::<emc_core::Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_sampling_respects_boundaries() {
        let s = [0.2, 0.3, 0.5];
        assert_eq!(choose(&s, 0.0), FusionInput::RealPair);
        assert_eq!(choose(&s, 0.2), FusionInput::FacialSubstitute);
        assert_eq!(choose(&s, 0.99), FusionInput::SpeechSubstitute);
        assert_eq!(choose(&[1.0, 0.0, 0.0], 0.999_999), FusionInput::RealPair);
        assert_eq!(choose(&[0.5, 0.5, 0.0], 1.0), FusionInput::FacialSubstitute);
    }
}
