//! Evaluation metrics for generated listener reactions.
//!
//! Every aggregate takes a batch of [`ReactionSet`]s. Clips are processed
//! in parallel and reduced in sorted-id order, so results do not depend on
//! the batch order or the thread count.

mod frechet;
mod sequence;

pub use frechet::{fr_rea, mean_and_covariance, psd_sqrt, symmetric_eigen, COVARIANCE_EPS};
pub use sequence::{best_lag, ccc, ccc_channels, channel_mean, dtw, lagged_correlation, mse, temporal_variance};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default threshold for ACC: median closest-ground-truth DTW of the
/// untrained default model (seed 0) on the default corpus's test split,
/// rounded.
pub const DEFAULT_TAU: f64 = 232.0;
pub const DEFAULT_MAX_LAG: usize = 50;

/// Generated and appropriate reactions of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ReactionSet<S> {
    pub id: String,
    pub generated: Vec<Tensor<S>>,
    pub appropriate: Vec<Tensor<S>>,
    /// Speaker signal the synchrony score correlates against.
    pub speaker: Tensor<S>,
}

impl<S: Scalar> ReactionSet<S> {
    pub fn new(id: impl Into<String>, generated: Vec<Tensor<S>>, appropriate: Vec<Tensor<S>>, speaker: Tensor<S>) -> Result<Self> {
        let set = Self { id: id.into(), generated, appropriate, speaker };
        set.validate()?;
        Ok(set)
    }

    pub fn alpha(&self) -> usize {
        self.generated.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.generated.is_empty() {
            return Err(Error::Insufficient(format!("clip {}: no generated reactions", self.id)));
        }
        if self.appropriate.is_empty() {
            return Err(Error::Insufficient(format!("clip {}: empty ground-truth set", self.id)));
        }
        let shape = self.generated[0].shape();
        for x in self.generated.iter().chain(&self.appropriate) {
            if x.shape() != shape || x.ndim() != 2 {
                return Err(Error::Shape { op: "reaction set", lhs: shape.to_vec(), rhs: x.shape().to_vec() });
            }
        }
        if self.speaker.rows() != shape[0] {
            return Err(Error::LengthMismatch(shape[0], self.speaker.rows()));
        }
        Ok(())
    }
}

fn sorted<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<Vec<&ReactionSet<S>>> {
    if sets.is_empty() {
        return Err(Error::Insufficient("empty batch".into()));
    }
    for s in sets {
        s.validate()?;
    }
    let mut refs: Vec<_> = sets.iter().collect();
    refs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(refs)
}

/// Per-clip values computed in parallel, averaged in sorted order.
fn clip_mean<S: Scalar>(sets: &[ReactionSet<S>], f: impl Fn(&ReactionSet<S>) -> Result<S> + Sync) -> Result<S> {
    let refs = sorted(sets)?;
    let values: Vec<S> = refs.par_iter().map(|s| f(s)).collect::<Result<_>>()?;
    Ok(values.iter().copied().sum::<S>() / S::from_count(values.len()))
}

fn sample_mean<S: Scalar>(set: &ReactionSet<S>, f: impl Fn(&Tensor<S>) -> Result<S>) -> Result<S> {
    let mut total = S::zero();
    for r in &set.generated {
        total += f(r)?;
    }
    Ok(total / S::from_count(set.alpha()))
}

fn min_dtw<S: Scalar>(r: &Tensor<S>, appropriate: &[Tensor<S>]) -> Result<S> {
    let mut best = S::infinity();
    for g in appropriate {
        best = best.min(dtw(r, g)?);
    }
    Ok(best)
}

/// Channel-averaged CCC against the best ground-truth member, averaged
/// over generated reactions and clips.
pub fn fr_corr<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<S> {
    clip_mean(sets, |set| {
        sample_mean(set, |r| {
            let mut best = S::neg_infinity();
            for g in &set.appropriate {
                best = best.max(ccc_channels(r, g)?);
            }
            Ok(best)
        })
    })
}

/// DTW to the closest ground-truth member, averaged.
pub fn fr_dist<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<S> {
    clip_mean(sets, |set| sample_mean(set, |r| min_dtw(r, &set.appropriate)))
}

/// Fraction of generated reactions whose closest DTW is at most `tau`.
pub fn acc<S: Scalar>(sets: &[ReactionSet<S>], tau: f64) -> Result<S> {
    let tau = S::lit(tau);
    clip_mean(sets, |set| {
        sample_mean(set, |r| Ok(if min_dtw(r, &set.appropriate)? <= tau { S::one() } else { S::zero() }))
    })
}

pub fn fr_var<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<S> {
    clip_mean(sets, |set| sample_mean(set, |r| Ok(temporal_variance(r))))
}

/// Mean pairwise MSE among each clip's samples; needs two samples per clip.
pub fn fr_div<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<S> {
    clip_mean(sets, |set| {
        let a = set.alpha();
        if a < 2 {
            return Err(Error::Insufficient(format!("clip {}: FRDiv needs at least 2 samples, got {a}", set.id)));
        }
        let mut total = S::zero();
        for j in 0..a {
            for k in j + 1..a {
                total += mse(&set.generated[j], &set.generated[k])?;
            }
        }
        Ok(total / S::from_count(a * (a - 1) / 2))
    })
}

/// Mean pairwise MSE between different clips, pairing samples by index.
pub fn fr_dvs<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<S> {
    let refs = sorted(sets)?;
    let n = refs.len();
    if n < 2 {
        return Err(Error::Insufficient(format!("FRDvs needs at least 2 clips, got {n}")));
    }
    let alpha = refs[0].alpha();
    if let Some(s) = refs.iter().find(|s| s.alpha() != alpha) {
        return Err(Error::Invalid(format!("clip {} has {} samples, expected {alpha}", s.id, s.alpha())));
    }
    let rows: Vec<S> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut total = S::zero();
            for k in (i + 1)..n {
                for s in 0..alpha {
                    total += mse(&refs[i].generated[s], &refs[k].generated[s])?;
                }
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let pairs = n * (n - 1) / 2 * alpha;
    Ok(rows.iter().copied().sum::<S>() / S::from_count(pairs))
}

/// Absolute lag of peak speaker/reaction cross-correlation, in frames.
pub fn fr_syn<S: Scalar>(sets: &[ReactionSet<S>], max_lag: usize) -> Result<S> {
    clip_mean(sets, |set| {
        let reference = channel_mean(&set.speaker);
        sample_mean(set, |r| {
            let lag = best_lag(&reference, &channel_mean(r), max_lag)?;
            Ok(S::from_count(lag.unsigned_abs()))
        })
    })
}

fn pool<'a, S: Scalar>(seqs: impl Iterator<Item = &'a Tensor<S>>) -> Result<Tensor<S>> {
    let mut data = Vec::new();
    let mut cols = None;
    for s in seqs {
        match cols {
            None => cols = Some(s.cols()),
            Some(c) if c != s.cols() => return Err(Error::Shape { op: "pool", lhs: vec![c], rhs: vec![s.cols()] }),
            _ => {}
        }
        data.extend_from_slice(s.data());
    }
    let cols = cols.ok_or_else(|| Error::Insufficient("nothing to pool".into()))?;
    Tensor::matrix(data.len() / cols, cols, data)
}

/// All generated frames of a batch, in sorted clip order.
pub fn pool_generated<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<Tensor<S>> {
    pool(sorted(sets)?.into_iter().flat_map(|s| s.generated.iter()))
}

/// All ground-truth frames of a batch, in sorted clip order.
pub fn pool_appropriate<S: Scalar>(sets: &[ReactionSet<S>]) -> Result<Tensor<S>> {
    pool(sorted(sets)?.into_iter().flat_map(|s| s.appropriate.iter()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub tau: f64,
    pub max_lag: usize,
}

impl MetricConfig {
    pub fn with_max_lag(self, max_lag: usize) -> Self {
        Self { max_lag, ..self }
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, max_lag: DEFAULT_MAX_LAG }
    }
}

/// Every metric of one evaluation plus the configuration that produced it.
/// FRDiv and FRDvs are `None` when there are too few samples or clips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub frcorr: f64,
    pub frdist: f64,
    pub acc: f64,
    pub frvar: f64,
    pub frdiv: Option<f64>,
    pub frdvs: Option<f64>,
    pub frsyn: f64,
    /// `None` when fewer pooled frames than `d + 1` are available.
    pub frrea: Option<f64>,
    pub tau: f64,
    pub max_lag: usize,
    pub alpha: usize,
}

/// Report keys, in output order.
pub const REPORT_KEYS: [&str; 11] =
    ["frcorr", "frdist", "acc", "frvar", "frdiv", "frdvs", "frsyn", "frrea", "tau", "max_lag", "alpha"];

/// Written in place of a score that is not applicable.
pub const NOT_APPLICABLE: &str = "NA";

impl MetricsReport {
    /// `(key, value)` pairs in [`REPORT_KEYS`] order; `None` marks a
    /// not-applicable score.
    pub fn entries(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("frcorr", Some(self.frcorr)),
            ("frdist", Some(self.frdist)),
            ("acc", Some(self.acc)),
            ("frvar", Some(self.frvar)),
            ("frdiv", self.frdiv),
            ("frdvs", self.frdvs),
            ("frsyn", Some(self.frsyn)),
            ("frrea", self.frrea),
            ("tau", Some(self.tau)),
            ("max_lag", Some(self.max_lag as f64)),
            ("alpha", Some(self.alpha as f64)),
        ]
    }

    /// Flat `key=value` text. Floats use the shortest round-trip form.
    pub fn to_key_value(&self) -> String {
        let mut out = String::from("# frrea is computed on raw listener features\n");
        for (k, v) in self.entries() {
            let text = match (k, v) {
                (_, None) => NOT_APPLICABLE.to_string(),
                ("max_lag" | "alpha", Some(v)) => format!("{}", v as usize),
                (_, Some(v)) => format!("{v:?}"),
            };
            out.push_str(&format!("{k}={text}\n"));
        }
        out
    }

    pub fn check_invariants(&self) -> Result<()> {
        let ok = (-1.0..=1.0).contains(&self.frcorr)
            && self.frdist >= 0.0
            && (0.0..=1.0).contains(&self.acc)
            && self.frvar >= 0.0
            && self.frdiv.is_none_or(|v| v >= 0.0)
            && self.frdvs.is_none_or(|v| v >= 0.0)
            && (0.0..=self.max_lag as f64).contains(&self.frsyn)
            && self.frrea.is_none_or(|v| v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("metrics out of range: {self:?}")))
        }
    }
}

/// Runs every metric over a batch.
pub fn evaluate_sets<S: Scalar>(sets: &[ReactionSet<S>], config: &MetricConfig) -> Result<MetricsReport> {
    let refs = sorted(sets)?;
    let alpha = refs.iter().map(|s| s.alpha()).min().unwrap_or(0);
    let f = |v: S| v.as_f64();
    let frdiv = if alpha >= 2 { Some(f(fr_div(sets)?)) } else { None };
    let uniform = refs.iter().all(|s| s.alpha() == alpha);
    let frdvs = if refs.len() >= 2 && uniform { Some(f(fr_dvs(sets)?)) } else { None };
    let (pooled, truth) = (pool_generated(sets)?, pool_appropriate(sets)?);
    let width = pooled.cols();
    let frrea = if pooled.rows() > width && truth.rows() > width { Some(f(fr_rea(&pooled, &truth)?)) } else { None };
    let report = MetricsReport {
        frcorr: f(fr_corr(sets)?),
        frdist: f(fr_dist(sets)?),
        acc: f(acc(sets, config.tau)?),
        frvar: f(fr_var(sets)?),
        frdiv,
        frdvs,
        frsyn: f(fr_syn(sets, config.max_lag)?),
        frrea,
        tau: config.tau,
        max_lag: config.max_lag,
        alpha,
    };
    Ok(report)
}
