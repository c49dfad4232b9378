//! Closed-form Gaussian information quantities.
//!
//! Rates are in bits throughout; KL divergences are in nats and are the only
//! quantities reported in natural units.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Negative KL values down to this magnitude are treated as round-off.
pub const KL_CLAMP: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;

/// A multivariate normal law. The covariance must be symmetric and positive
/// semidefinite; operations that need it invertible check that themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "covariance is {}x{}, mean has length {n}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian parameter".into()));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        let min_eig = covariance.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(GaussianSpec { mean, covariance })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    /// Zero-mean law with the given covariance.
    pub fn centered(covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(covariance.nrows()), covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Differential entropy of a scalar Gaussian, `½ log₂(2πe σ²)` bits.
pub fn gaussian_entropy_bits(variance: f64) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "entropy needs a positive variance, got {variance}"
        )));
    }
    Ok(0.5 * (2.0 * PI * E * variance).log2())
}

/// `D(p ‖ q)` in nats for multivariate normals.
pub fn gaussian_kl_nats(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    let n = p.dim();
    if q.dim() != n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {n} vs {}",
            q.dim()
        )));
    }
    let q_chol = q
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("q covariance is singular".into()))?;
    let p_chol = p
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("p covariance is singular".into()))?;
    let trace = q_chol.solve(&p.covariance).trace();
    let diff = &q.mean - &p.mean;
    let mahalanobis = diff.dot(&q_chol.solve(&diff));
    let log_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let log_det_ratio = log_det(&q_chol.l()) - log_det(&p_chol.l());
    let value = 0.5 * (trace - n as f64 + mahalanobis + log_det_ratio);
    if value < -KL_CLAMP {
        return Err(Error::Consistency(format!("negative KL divergence {value:e}")));
    }
    Ok(value.max(0.0))
}

fn check_test_channel(source_variance: f64, distortion: f64) -> Result<()> {
    if !(source_variance > 0.0 && source_variance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "source variance must be positive, got {source_variance}"
        )));
    }
    if !(distortion > 0.0 && distortion <= source_variance) {
        return Err(Error::Infeasible(format!(
            "test-channel distortion {distortion} outside (0, {source_variance}]"
        )));
    }
    Ok(())
}

/// Mutual information `½ log₂(σ̂²/d)` of the Gaussian test channel.
pub fn test_channel_rate_bits(source_variance: f64, distortion: f64) -> Result<f64> {
    check_test_channel(source_variance, distortion)?;
    Ok(0.5 * (source_variance / distortion).log2())
}

/// Joint law of an estimate `U ~ N(0, σ̂²)` and its description `V` under the
/// backward channel `U = V + Z`, `Z ~ N(0, d)` independent of `V`.
///
/// Forward sampling: `V = gain·U + N(0, conditional_variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestChannelLaw {
    pub source_variance: f64,
    pub distortion: f64,
    pub gain: f64,
    pub conditional_variance: f64,
}

impl TestChannelLaw {
    /// `var[V] = σ̂² − d`.
    pub fn description_variance(&self) -> f64 {
        self.gain * self.gain * self.source_variance + self.conditional_variance
    }

    pub fn rate_bits(&self) -> f64 {
        0.5 * (self.source_variance / self.distortion).log2()
    }
}

pub fn test_channel_law(source_variance: f64, distortion: f64) -> Result<TestChannelLaw> {
    check_test_channel(source_variance, distortion)?;
    let gain = 1.0 - distortion / source_variance;
    Ok(TestChannelLaw {
        source_variance,
        distortion,
        gain,
        conditional_variance: gain * distortion,
    })
}

/// Both sides of the Gaussian-smoothing transport inequality, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingMargin {
    /// `D(P_{x+√t z} ‖ P_{y+√t z})`.
    pub divergence: f64,
    /// `E‖x − y‖² / (2t)`.
    pub bound: f64,
    pub margin: f64,
}

/// Evaluates `D(P_{x+√t z} ‖ P_{y+√t z}) ≤ E‖x−y‖²/(2t)` for a jointly
/// Gaussian pair whose law over the stacked vector `(x, y)` is `joint`.
pub fn verify_smoothing_inequality(joint: &GaussianSpec, t: f64) -> Result<SmoothingMargin> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing needs t > 0, got {t}")));
    }
    let dim = joint.dim();
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "joint dimension {dim} is not 2N"
        )));
    }
    let n = dim / 2;
    let cov = joint.covariance();
    let mu = joint.mean();
    let smooth = |offset: usize| -> Result<GaussianSpec> {
        let block = cov.view((offset, offset), (n, n)).into_owned();
        let shifted = block + DMatrix::identity(n, n) * t;
        GaussianSpec::new(mu.rows(offset, n).into_owned(), shifted)
    };
    let divergence = gaussian_kl_nats(&smooth(0)?, &smooth(n)?)?;

    let cross = cov.view((0, n), (n, n));
    let mean_gap = mu.rows(0, n) - mu.rows(n, n);
    let second_moment = cov.view((0, 0), (n, n)).trace() + cov.view((n, n), (n, n)).trace()
        - 2.0 * cross.trace()
        + mean_gap.norm_squared();
    let bound = second_moment.max(0.0) / (2.0 * t);
    Ok(SmoothingMargin {
        divergence,
        bound,
        margin: bound - divergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn entropy_values() {
        assert!(gaussian_entropy_bits(1.0 / (2.0 * PI * E)).unwrap().abs() < 1e-15);
        let h1 = gaussian_entropy_bits(1.0).unwrap();
        assert!((h1 - 2.047095585180641).abs() < 1e-12);
        assert!((gaussian_entropy_bits(4.0).unwrap() - h1 - 1.0).abs() < 1e-14);
        assert!(gaussian_entropy_bits(0.0).is_err());
    }

    #[test]
    fn entropy_matches_monte_carlo_estimate() {
        // -E[log₂ φ(X)] estimated from samples of N(0, 1)
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = 200_000;
        let log_pdf_sum: f64 = (0..samples)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                -(-0.5 * x * x - 0.5 * (2.0 * PI).ln()) / 2f64.ln()
            })
            .sum();
        let estimate = log_pdf_sum / samples as f64;
        assert!((estimate - gaussian_entropy_bits(1.0).unwrap()).abs() < 0.01);
    }

    #[test]
    fn kl_examples() {
        let std = GaussianSpec::scalar(0.0, 1.0).unwrap();
        assert_eq!(gaussian_kl_nats(&std, &std).unwrap(), 0.0);
        let shifted = GaussianSpec::scalar(1.0, 1.0).unwrap();
        assert!((gaussian_kl_nats(&shifted, &std).unwrap() - 0.5).abs() < 1e-15);
        let wide = GaussianSpec::scalar(0.0, 2.0).unwrap();
        let expected = 0.5 * (1.0 - 2f64.ln());
        assert!((gaussian_kl_nats(&wide, &std).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn kl_errors() {
        let one = GaussianSpec::scalar(0.0, 1.0).unwrap();
        let two = GaussianSpec::centered(DMatrix::identity(2, 2)).unwrap();
        assert!(gaussian_kl_nats(&one, &two).is_err());
        let singular = GaussianSpec::centered(DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(gaussian_kl_nats(&two, &singular).is_err());
        assert!(GaussianSpec::centered(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(GaussianSpec::centered(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn rate_examples() {
        assert_eq!(test_channel_rate_bits(4.0, 1.0).unwrap(), 1.0);
        assert_eq!(test_channel_rate_bits(3.0, 3.0).unwrap(), 0.0);
        assert!((test_channel_rate_bits(2.0, 0.02).unwrap() - 0.5 * 100f64.log2()).abs() < 1e-15);
        assert!(matches!(test_channel_rate_bits(1.0, 1.5), Err(Error::Infeasible(_))));
        assert!(test_channel_rate_bits(1.0, 0.0).is_err());
    }

    #[test]
    fn law_examples() {
        let law = test_channel_law(2.0, 2.0).unwrap();
        assert_eq!(law.gain, 0.0);
        assert_eq!(law.conditional_variance, 0.0);
        let law = test_channel_law(1.0, 0.5).unwrap();
        assert_eq!((law.gain, law.conditional_variance), (0.5, 0.25));
        assert_eq!(law.description_variance(), 0.5);
        let law = test_channel_law(2.0, 1.0).unwrap();
        assert_eq!(law.gain, 0.5);
        assert_eq!(law.description_variance(), 1.0);
    }

    #[test]
    fn law_reproduced_by_sampling() {
        for (var, d) in [(1.0, 0.5), (2.0, 1.0)] {
            let law = test_channel_law(var, d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 1_000_000;
            let (mut sq_err, mut sq_v) = (0.0, 0.0);
            for _ in 0..n {
                let u: f64 = var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let v = law.gain * u
                    + law.conditional_variance.sqrt() * rng.sample::<f64, _>(StandardNormal);
                sq_err += (u - v) * (u - v);
                sq_v += v * v;
            }
            let (mse, var_v) = (sq_err / n as f64, sq_v / n as f64);
            // 3σ of a mean of n scaled χ²₁ draws
            let ci = |s: f64| 3.0 * s * (2.0 / n as f64).sqrt();
            assert!((mse - d).abs() < ci(d), "mse {mse} vs {d}");
            assert!((var_v - (var - d)).abs() < ci(var - d), "var {var_v}");
        }
    }

    #[test]
    fn smoothing_examples() {
        // x = y with identical marginals
        let same = GaussianSpec::centered(DMatrix::from_element(2, 2, 1.0)).unwrap();
        let m = verify_smoothing_inequality(&same, 1.0).unwrap();
        assert!(m.divergence.abs() < 1e-15 && m.bound.abs() < 1e-15 && m.margin.abs() < 1e-15);
        // independent standard normals
        let indep = GaussianSpec::centered(DMatrix::identity(2, 2)).unwrap();
        let m = verify_smoothing_inequality(&indep, 1.0).unwrap();
        assert!(m.divergence.abs() < 1e-15);
        assert!((m.bound - 1.0).abs() < 1e-15);
        assert!((m.margin - 1.0).abs() < 1e-15);
        assert!(verify_smoothing_inequality(&indep, 0.0).is_err());
        let odd = GaussianSpec::scalar(0.0, 1.0).unwrap();
        assert!(verify_smoothing_inequality(&odd, 1.0).is_err());
    }
}
