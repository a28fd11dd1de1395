//! Fréchet distance between Gaussian fits of sample clouds.
//!
//! For moments `(μ₁, Σ₁)` and `(μ₂, Σ₂)` the distance is
//! `‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2·(Σ₁Σ₂)^½)`. The trace of the matrix square
//! root is computed as `tr((Σ₁^½ Σ₂ Σ₁^½)^½)`, which only needs symmetric
//! eigendecompositions, and is evaluated in both orders and summed so the
//! result is exactly symmetric in its arguments.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adversarial::Individual;
use crate::data::{sample, DataError, MixtureSpec};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::{derive_seed, SeededStream};

/// Eigenvalues down to this (absolute) value are treated as zero.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Negative distances down to this value are rounding residue and clamp to 0.
pub const NEGATIVE_RESIDUE_TOLERANCE: f64 = 1e-8;
/// Smallest evaluation sample accepted by [`score_generator`].
pub const MIN_EVAL_SAMPLES: usize = 128;
pub const DEFAULT_EVAL_SAMPLES: usize = 4096;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least {needed} samples to fit {dim}-dimensional moments, got {found}")]
    TooFewSamples { needed: usize, found: usize, dim: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("moment dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("distance evaluated to {0:e}, beyond rounding tolerance")]
    NegativeDistance(f64),
    #[error("non-finite values in samples")]
    NonFinite,
    #[error("evaluation needs at least {MIN_EVAL_SAMPLES} samples, got {0}")]
    EvalTooSmall(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("generator forward pass failed: {0}")]
    Generator(#[from] crate::nn::NnError),
}

/// Mean vector and covariance of a sample cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub n_samples: usize,
}

impl GaussianMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (`n − 1`) covariance of the rows of `samples`.
pub fn fit_moments(samples: &Matrix) -> Result<GaussianMoments, MetricsError> {
    let (n, d) = (samples.rows(), samples.cols());
    if n < d + 1 {
        return Err(MetricsError::TooFewSamples { needed: d + 1, found: n, dim: d });
    }
    if !samples.is_finite() {
        return Err(MetricsError::NonFinite);
    }
    let mut mean = alloc::vec![0.0; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(samples.row(r)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let x = samples.row(r);
        for i in 0..d {
            let di = x[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(GaussianMoments { mean, cov, n_samples: n })
}

fn symmetry_tolerance(m: &Matrix) -> f64 {
    1e-12 * m.frobenius_norm().max(1.0)
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sqrtm_spd(m: &Matrix) -> Result<Matrix, MetricsError> {
    let asym = m.asymmetry();
    if asym > symmetry_tolerance(m) {
        return Err(MetricsError::NotSymmetric(asym));
    }
    let eig = symmetric_eigen(m);
    let n = m.rows();
    let roots = eig
        .values
        .iter()
        .map(|&l| if l >= 0.0 { Ok(libm::sqrt(l)) } else if l >= -PSD_TOLERANCE { Ok(0.0) } else { Err(l) })
        .collect::<Result<Vec<_>, _>>()
        .map_err(MetricsError::NotPsd)?;
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..n).map(|k| eig.vectors[(i, k)] * roots[k] * eig.vectors[(j, k)]).sum();
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// `tr((Σ₁Σ₂)^½)` via `tr((Σ₁^½ Σ₂ Σ₁^½)^½)`.
fn trace_sqrt_product(a: &Matrix, b: &Matrix) -> Result<f64, MetricsError> {
    let s = sqrtm_spd(a)?;
    let mut inner = s.matmul(b).matmul(&s);
    let n = inner.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inner[(i, j)] + inner[(j, i)]);
            inner[(i, j)] = v;
            inner[(j, i)] = v;
        }
    }
    let eig = symmetric_eigen(&inner);
    let scale = inner.frobenius_norm().max(1.0);
    let mut total = 0.0;
    for l in eig.values {
        if l >= 0.0 {
            total += libm::sqrt(l);
        } else if l < -PSD_TOLERANCE * scale {
            return Err(MetricsError::NotPsd(l));
        }
    }
    Ok(total)
}

/// Squared Fréchet (2-Wasserstein) distance between two Gaussians.
pub fn frechet_distance(p: &GaussianMoments, q: &GaussianMoments) -> Result<f64, MetricsError> {
    if p.dim() != q.dim() || p.cov.rows() != p.dim() || q.cov.rows() != q.dim() {
        return Err(MetricsError::DimensionMismatch(p.dim(), q.dim()));
    }
    let mean_term: f64 = p.mean.iter().zip(&q.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let cross = trace_sqrt_product(&p.cov, &q.cov)? + trace_sqrt_product(&q.cov, &p.cov)?;
    let fd = mean_term + (p.cov.trace() + q.cov.trace()) - cross;
    if fd >= 0.0 {
        Ok(fd)
    } else if fd >= -NEGATIVE_RESIDUE_TOLERANCE {
        Ok(0.0)
    } else {
        Err(MetricsError::NegativeDistance(fd))
    }
}

/// Fréchet distance between `n_eval` real samples and `n_eval` samples of the
/// pathogen's generator, both drawn from streams derived from `seed`.
pub fn score_generator(
    pathogen: &Individual,
    mixture: &MixtureSpec,
    n_eval: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    if n_eval < MIN_EVAL_SAMPLES {
        return Err(MetricsError::EvalTooSmall(n_eval));
    }
    let real = sample(mixture, n_eval, &mut SeededStream::new(derive_seed(seed, 0x5245_414c, 0)))?;
    let mut latent_stream = SeededStream::new(derive_seed(seed, 0x4741_4e53, 0));
    let generated = pathogen.generate(n_eval, &mut latent_stream)?;
    frechet_distance(&fit_moments(&real)?, &fit_moments(&generated)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn moments(mean: &[f64], cov: Matrix) -> GaussianMoments {
        GaussianMoments { mean: mean.to_vec(), cov, n_samples: 100 }
    }

    #[test]
    fn fit_constant_samples() {
        let xs = Matrix::from_rows(&[[1.5, -2.0]; 10]);
        let m = fit_moments(&xs).unwrap();
        assert_eq!(m.mean, vec![1.5, -2.0]);
        assert_eq!(m.cov, Matrix::zeros(2, 2));
    }

    #[test]
    fn fit_square_corners() {
        let xs = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]);
        let m = fit_moments(&xs).unwrap();
        assert_eq!(m.mean, vec![1.0, 1.0]);
        assert_abs_diff_eq!(m.cov[(0, 0)], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.cov[(1, 1)], 4.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m.cov[(0, 1)], 0.0);
    }

    #[test]
    fn fit_needs_enough_rows() {
        let xs = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(fit_moments(&xs), Err(MetricsError::TooFewSamples { needed: 3, .. })));
    }

    #[test]
    fn standard_normal_moments() {
        let mut s = SeededStream::new(17);
        let data: Vec<f64> = (0..200_000).map(|_| s.normal()).collect();
        let m = fit_moments(&Matrix::from_vec(100_000, 2, data)).unwrap();
        assert!(m.mean.iter().all(|v| v.abs() < 0.02));
        assert!(m.cov.max_abs_diff(&Matrix::identity(2)) < 0.05);
    }

    #[test]
    fn sqrtm_examples() {
        assert!(sqrtm_spd(&Matrix::identity(2)).unwrap().max_abs_diff(&Matrix::identity(2)) < 1e-15);
        let s = sqrtm_spd(&Matrix::diag(&[4.0, 9.0])).unwrap();
        assert!(s.max_abs_diff(&Matrix::diag(&[2.0, 3.0])) < 1e-15);
        let a = Matrix::from_rows(&[[2.0, 0.7], [0.7, 1.1]]);
        let s = sqrtm_spd(&a).unwrap();
        assert!(s.matmul(&s).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn sqrtm_rejects_bad_input() {
        let asym = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]);
        assert!(matches!(sqrtm_spd(&asym), Err(MetricsError::NotSymmetric(_))));
        let indefinite = Matrix::diag(&[1.0, -0.5]);
        assert!(matches!(sqrtm_spd(&indefinite), Err(MetricsError::NotPsd(_))));
        // residue within tolerance is accepted
        assert!(sqrtm_spd(&Matrix::diag(&[1.0, -1e-12])).is_ok());
    }

    #[test]
    fn frechet_closed_forms() {
        let i2 = Matrix::identity(2);
        let p = moments(&[0.0, 0.0], i2.clone());
        assert_eq!(frechet_distance(&p, &p).unwrap(), 0.0);
        let q = moments(&[3.0, 4.0], i2.clone());
        assert_eq!(frechet_distance(&p, &q).unwrap(), 25.0);
        let r = moments(&[0.0, 0.0], Matrix::diag(&[4.0, 4.0]));
        assert_eq!(frechet_distance(&p, &r).unwrap(), 2.0);
    }

    #[test]
    fn frechet_dimension_mismatch() {
        let p = moments(&[0.0, 0.0], Matrix::identity(2));
        let q = moments(&[0.0, 0.0, 0.0], Matrix::identity(3));
        assert!(matches!(frechet_distance(&p, &q), Err(MetricsError::DimensionMismatch(2, 3))));
    }

    #[test]
    fn frechet_degenerate_cloud() {
        let p = moments(&[0.0, 0.0], Matrix::diag(&[2.0, 2.0]));
        let point = moments(&[5.0, 0.0], Matrix::zeros(2, 2));
        let fd = frechet_distance(&p, &point).unwrap();
        assert_abs_diff_eq!(fd, 25.0 + 4.0, epsilon = 1e-12);
    }
}
