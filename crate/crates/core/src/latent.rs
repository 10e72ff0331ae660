//! Diagonal Gaussians over latent spaces: reparameterized sampling and
//! closed-form KL divergences.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Lower clamp applied to log-variances before exponentiation.
pub const LOG_VAR_MIN: f64 = -20.0;
/// Upper clamp applied to log-variances before exponentiation.
pub const LOG_VAR_MAX: f64 = 10.0;

/// Diagonal Gaussian `N(mu, exp(log_var))` whose parameters live on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaussianLatent {
    pub mu: Var,
    pub log_var: Var,
}

impl GaussianLatent {
    /// Pairs `mu` with a clamped copy of `raw_log_var`.
    pub fn new<S: Scalar>(tape: &mut Tape<S>, mu: Var, raw_log_var: Var) -> Result<Self> {
        if tape.shape(mu) != tape.shape(raw_log_var) {
            return Err(Error::Shape {
                op: "gaussian_latent",
                lhs: tape.shape(mu).to_vec(),
                rhs: tape.shape(raw_log_var).to_vec(),
            });
        }
        let log_var = tape.clamp(raw_log_var, S::lit(LOG_VAR_MIN), S::lit(LOG_VAR_MAX))?;
        Ok(Self { mu, log_var })
    }

    pub fn shape<'t, S: Scalar>(&self, tape: &'t Tape<S>) -> &'t [usize] {
        tape.shape(self.mu)
    }
}

/// Draws `mu + exp(log_var / 2) ⊙ eps` with `eps ~ N(0, I)` from `rng`.
///
/// `eps` enters the tape as a constant, so gradients reach `mu` and
/// `log_var` only. `log_var` is clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
pub fn gaussian_sample<S: Scalar>(tape: &mut Tape<S>, mu: Var, log_var: Var, rng: &mut RngState) -> Result<Var> {
    if tape.shape(mu) != tape.shape(log_var) {
        return Err(Error::Shape { op: "gaussian_sample", lhs: tape.shape(mu).to_vec(), rhs: tape.shape(log_var).to_vec() });
    }
    let shape = tape.shape(mu).to_vec();
    let n = tape.value(mu).len();
    let eps = Tensor::new(shape, rng.normals(n).into_iter().map(S::lit).collect())?;
    let eps = tape.constant(eps);
    let lv = tape.clamp(log_var, S::lit(LOG_VAR_MIN), S::lit(LOG_VAR_MAX))?;
    let half = tape.scale(lv, S::lit(0.5))?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

/// `KL(N(mu, exp(log_var)) ‖ N(0, I)) = ½ Σ (mu² + σ² − 1 − log σ²)`, summed over all elements.
pub fn kl_diag_gaussian_to_standard<S: Scalar>(tape: &mut Tape<S>, mu: Var, log_var: Var) -> Result<Var> {
    if tape.shape(mu) != tape.shape(log_var) {
        return Err(Error::Shape { op: "kl_to_standard", lhs: tape.shape(mu).to_vec(), rhs: tape.shape(log_var).to_vec() });
    }
    let mu2 = tape.square(mu)?;
    let var = tape.exp(log_var)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, log_var)?;
    let c = tape.add_scalar(b, -S::one())?;
    let s = tape.sum(c)?;
    tape.scale(s, S::lit(0.5))
}

/// Closed-form `KL(p ‖ q)` between diagonal Gaussians, summed over all elements:
/// `½ Σ (log σ_q² − log σ_p² + (σ_p² + (μ_p − μ_q)²) / σ_q² − 1)`.
pub fn kl_diag_gaussian_pair<S: Scalar>(tape: &mut Tape<S>, p: GaussianLatent, q: GaussianLatent) -> Result<Var> {
    for (a, b) in [(p.mu, q.mu), (p.log_var, q.log_var), (p.mu, p.log_var)] {
        if tape.shape(a) != tape.shape(b) {
            return Err(Error::Shape { op: "kl_pair", lhs: tape.shape(a).to_vec(), rhs: tape.shape(b).to_vec() });
        }
    }
    // σ_p²/σ_q² as exp(log σ_p² − log σ_q²) so identical inputs give exactly 1.
    let diff = tape.sub(p.mu, q.mu)?;
    let diff2 = tape.square(diff)?;
    let neg_lq = tape.scale(q.log_var, -S::one())?;
    let inv_var_q = tape.exp(neg_lq)?;
    let shift = tape.mul(diff2, inv_var_q)?;
    let log_ratio = tape.sub(q.log_var, p.log_var)?;
    let neg_log_ratio = tape.scale(log_ratio, -S::one())?;
    let var_ratio = tape.exp(neg_log_ratio)?;
    let ratio = tape.add(var_ratio, shift)?;
    let terms = tape.add(log_ratio, ratio)?;
    let terms = tape.add_scalar(terms, -S::one())?;
    let s = tape.sum(terms)?;
    tape.scale(s, S::lit(0.5))
}
