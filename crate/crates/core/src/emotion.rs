//! Per-frame speaker emotion features in the two supported layouts.
//!
//! Facial rows hold 15 action-unit occurrences, valence, arousal and 8
//! expression probabilities (25 values). Speech rows hold valence, arousal
//! and 8 expression probabilities (10 values).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NUM_AUS: usize = 15;
pub const NUM_EXPRESSIONS: usize = 8;
pub const FACIAL_EMOTION_DIM: usize = NUM_AUS + 2 + NUM_EXPRESSIONS;
pub const SPEECH_EMOTION_DIM: usize = 2 + NUM_EXPRESSIONS;

const PROB_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EmotionSource {
    Facial,
    Speech,
}

impl EmotionSource {
    pub fn width(self) -> usize {
        match self {
            EmotionSource::Facial => FACIAL_EMOTION_DIM,
            EmotionSource::Speech => SPEECH_EMOTION_DIM,
        }
    }

    /// Column offset of the valence entry; arousal follows it and the
    /// expression probabilities follow arousal.
    pub fn valence_offset(self) -> usize {
        match self {
            EmotionSource::Facial => NUM_AUS,
            EmotionSource::Speech => 0,
        }
    }
}

/// A `[T × width]` emotion stream tagged with its source.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionFeatures<S> {
    source: EmotionSource,
    values: Tensor<S>,
}

impl<S: Scalar> EmotionFeatures<S> {
    /// Wraps `values` after checking width and every range invariant.
    pub fn new(source: EmotionSource, values: Tensor<S>) -> Result<Self> {
        let out = Self::unchecked(source, values)?;
        out.validate()?;
        Ok(out)
    }

    /// Wraps `values` checking only the width, e.g. for all-zero probes.
    pub fn unchecked(source: EmotionSource, values: Tensor<S>) -> Result<Self> {
        let (_, w) = values.require_matrix("emotion")?;
        if w != source.width() {
            return Err(Error::Invalid(format!("{source:?} emotion rows need width {}, got {w}", source.width())));
        }
        Ok(Self { source, values })
    }

    pub fn zeros(source: EmotionSource, frames: usize) -> Self {
        Self { source, values: Tensor::zeros(&[frames, source.width()]) }
    }

    pub fn source(&self) -> EmotionSource {
        self.source
    }

    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    /// Checks probability, valence/arousal and AU ranges on every row.
    pub fn validate(&self) -> Result<()> {
        let va = self.source.valence_offset();
        for t in 0..self.frames() {
            let row = self.values.row(t);
            if self.source == EmotionSource::Facial {
                if let Some(v) = row[..NUM_AUS].iter().find(|&&v| v < S::zero() || v > S::one()) {
                    return Err(Error::Invalid(format!("frame {t}: AU occurrence {v} outside [0, 1]")));
                }
            }
            for &v in &row[va..va + 2] {
                if v < -S::one() || v > S::one() {
                    return Err(Error::Invalid(format!("frame {t}: valence/arousal {v} outside [-1, 1]")));
                }
            }
            let probs = &row[va + 2..];
            if probs.iter().any(|&p| p < S::zero()) {
                return Err(Error::Invalid(format!("frame {t}: negative expression probability")));
            }
            let total: S = probs.iter().copied().sum();
            if (total - S::one()).abs().as_f64() > PROB_TOL {
                return Err(Error::Invalid(format!("frame {t}: expression probabilities sum to {total}")));
            }
        }
        Ok(())
    }
}
