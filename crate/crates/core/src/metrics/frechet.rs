//! Gaussian Fréchet distance between pooled frame sets.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Diagonal regularizer added to both covariances.
pub const COVARIANCE_EPS: f64 = 1e-6;

const MAX_SWEEPS: usize = 100;

/// Eigen decomposition of a symmetric `n × n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues and the matrix whose columns are
/// the eigenvectors.
pub fn symmetric_eigen<S: Scalar>(matrix: &[S], n: usize) -> (Vec<S>, Vec<S>) {
    let mut a = matrix.to_vec();
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }
    let scale: S = a.iter().map(|&x| x * x).sum::<S>().sqrt();
    let tol = S::epsilon() * S::epsilon() * scale * scale;
    for _ in 0..MAX_SWEEPS {
        let off: S = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (S::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Principal square root of a symmetric positive semidefinite matrix,
/// clamping negative eigenvalues to zero.
pub fn psd_sqrt<S: Scalar>(matrix: &[S], n: usize) -> Vec<S> {
    let (vals, vecs) = symmetric_eigen(matrix, n);
    let roots: Vec<S> = vals.iter().map(|&l| l.max(S::zero()).sqrt()).collect();
    let mut out = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| vecs[i * n + k] * roots[k] * vecs[j * n + k]).sum();
        }
    }
    out
}

/// Mean and unbiased covariance of the rows of `x`.
pub fn mean_and_covariance<S: Scalar>(x: &Tensor<S>) -> (Vec<S>, Vec<S>) {
    let (n, d) = (x.rows(), x.cols());
    let count = S::from_count(n);
    let mut mean = vec![S::zero(); d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut cov = vec![S::zero(); d * d];
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = S::from_count(n - 1);
    for i in 0..d {
        for j in i..d {
            let c = cov[i * d + j] / denom;
            cov[i * d + j] = c;
            cov[j * d + i] = c;
        }
    }
    (mean, cov)
}

fn symmetric_product<S: Scalar>(s: &[S], m: &[S], n: usize) -> Vec<S> {
    // s · m · s for symmetric s
    let mut tmp = vec![S::zero(); n * n];
    crate::tensor::matmul_into(s, m, &mut tmp, n, n, n);
    let mut out = vec![S::zero(); n * n];
    crate::tensor::matmul_into(&tmp, s, &mut out, n, n, n);
    for i in 0..n {
        for j in i + 1..n {
            let avg = (out[i * n + j] + out[j * n + i]) * S::lit(0.5);
            out[i * n + j] = avg;
            out[j * n + i] = avg;
        }
    }
    out
}

/// Fréchet distance between Gaussian fits of two frame sets (rows).
pub fn fr_rea<S: Scalar>(generated: &Tensor<S>, ground_truth: &Tensor<S>) -> Result<S> {
    let d = generated.cols();
    if ground_truth.cols() != d {
        return Err(Error::Shape { op: "fr_rea", lhs: generated.shape().to_vec(), rhs: ground_truth.shape().to_vec() });
    }
    for x in [generated, ground_truth] {
        if x.rows() < d + 1 {
            return Err(Error::Insufficient(format!("fr_rea needs at least {} frames, got {}", d + 1, x.rows())));
        }
    }
    let (m1, mut c1) = mean_and_covariance(generated);
    let (m2, mut c2) = mean_and_covariance(ground_truth);
    let eps = S::lit(COVARIANCE_EPS);
    for i in 0..d {
        c1[i * d + i] += eps;
        c2[i * d + i] += eps;
    }
    let mean_term: S = m1.iter().zip(&m2).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let trace = |c: &[S]| (0..d).map(|i| c[i * d + i]).sum::<S>();
    let s1 = psd_sqrt(&c1, d);
    let inner = symmetric_product(&s1, &c2, d);
    let (vals, _) = symmetric_eigen(&inner, d);
    let cross: S = vals.iter().map(|&l| l.max(S::zero()).sqrt()).sum();
    let value = mean_term + trace(&c1) + trace(&c2) - S::lit(2.0) * cross;
    Ok(value.max(S::zero()))
}
