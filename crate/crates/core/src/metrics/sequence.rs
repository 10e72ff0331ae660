//! Pairwise sequence measures: DTW, CCC, MSE and time-lagged correlation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn frame_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<S>().sqrt()
}

/// Unnormalized dynamic time warping cost with Euclidean frame cost and
/// steps (1,0), (0,1), (1,1); no window.
pub fn dtw<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<S> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("dtw needs nonempty sequences".into()));
    }
    let (ta, tb) = (a.rows(), b.rows());
    if a.cols() != b.cols() {
        return Err(Error::Shape { op: "dtw", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    let inf = S::infinity();
    let mut prev = vec![inf; tb + 1];
    let mut cur = vec![inf; tb + 1];
    prev[0] = S::zero();
    for i in 0..ta {
        cur[0] = inf;
        let ai = a.row(i);
        for j in 0..tb {
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = best + frame_distance(ai, b.row(j));
        }
        std::mem::swap(&mut prev, &mut cur);
        prev[0] = inf;
    }
    Ok(prev[tb])
}

/// Concordance correlation coefficient with population moments.
/// Returns zero when the denominator vanishes.
pub fn ccc<S: Scalar>(x: &[S], y: &[S]) -> Result<S> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::Insufficient(format!("ccc needs at least 2 values, got {}", x.len())));
    }
    let n = S::from_count(x.len());
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let (mut vx, mut vy, mut cov) = (S::zero(), S::zero(), S::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    let denom = vx / n + vy / n + (mx - my) * (mx - my);
    if denom == S::zero() {
        return Ok(S::zero());
    }
    Ok(S::lit(2.0) * (cov / n) / denom)
}

/// Per-channel CCC averaged over the channels of two `[T × d]` sequences.
pub fn ccc_channels<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<S> {
    if x.shape() != y.shape() {
        return Err(Error::Shape { op: "ccc", lhs: x.shape().to_vec(), rhs: y.shape().to_vec() });
    }
    let (t, d) = (x.rows(), x.cols());
    let mut total = S::zero();
    let mut xs = vec![S::zero(); t];
    let mut ys = vec![S::zero(); t];
    for c in 0..d {
        for r in 0..t {
            xs[r] = x.data()[r * d + c];
            ys[r] = y.data()[r * d + c];
        }
        total += ccc(&xs, &ys)?;
    }
    Ok(total / S::from_count(d))
}

pub fn mse<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<S> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { op: "mse", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    let ss: S = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(ss / S::from_count(a.len()))
}

/// Temporal variance of each channel (population), averaged over channels.
pub fn temporal_variance<S: Scalar>(x: &Tensor<S>) -> S {
    let (t, d) = (x.rows(), x.cols());
    let n = S::from_count(t);
    let mut total = S::zero();
    for c in 0..d {
        let mean = (0..t).map(|r| x.data()[r * d + c]).sum::<S>() / n;
        total += (0..t).map(|r| (x.data()[r * d + c] - mean).powi(2)).sum::<S>() / n;
    }
    total / S::from_count(d)
}

/// Frame-wise mean over channels.
pub fn channel_mean<S: Scalar>(x: &Tensor<S>) -> Vec<S> {
    let d = S::from_count(x.cols());
    (0..x.rows()).map(|r| x.row(r).iter().copied().sum::<S>() / d).collect()
}

fn pearson<S: Scalar>(x: &[S], y: &[S]) -> S {
    let n = S::from_count(x.len());
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let (mut vx, mut vy, mut cov) = (S::zero(), S::zero(), S::zero());
    for (&a, &b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cov += (a - mx) * (b - my);
    }
    let denom = (vx * vy).sqrt();
    if denom == S::zero() {
        S::zero()
    } else {
        cov / denom
    }
}

/// Normalized cross-correlation of `reference[t]` with `signal[t + lag]`
/// over the overlapping frames. Zero when either side is constant.
pub fn lagged_correlation<S: Scalar>(reference: &[S], signal: &[S], lag: isize) -> S {
    let t = reference.len().min(signal.len()) as isize;
    let (r0, s0) = if lag >= 0 { (0, lag) } else { (-lag, 0) };
    let len = t - lag.abs();
    if len < 2 {
        return S::zero();
    }
    let (r0, s0, len) = (r0 as usize, s0 as usize, len as usize);
    pearson(&reference[r0..r0 + len], &signal[s0..s0 + len])
}

/// Lag maximizing the lagged correlation within `[-max_lag, max_lag]`.
/// Ties go to the smaller magnitude, then to the negative side.
pub fn best_lag<S: Scalar>(reference: &[S], signal: &[S], max_lag: usize) -> Result<isize> {
    let t = reference.len().min(signal.len());
    if max_lag >= t {
        return Err(Error::Invalid(format!("max_lag {max_lag} must be below the sequence length {t}")));
    }
    let mut best = (0isize, lagged_correlation(reference, signal, 0));
    for m in 1..=max_lag as isize {
        for lag in [-m, m] {
            let c = lagged_correlation(reference, signal, lag);
            if c > best.1 {
                best = (lag, c);
            }
        }
    }
    Ok(best.0)
}
