//! Multivariate normal utilities: jittered Cholesky, log-densities, KL divergences.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::MarginalPrediction;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter levels tried in order; scaled by the mean diagonal magnitude.
pub const JITTER_LADDER: [f64; 3] = [0.0, 1e-8, 1e-6];

pub fn normal_logpdf(value: f64, mean: f64, variance: f64) -> f64 {
    let r = value - mean;
    -0.5 * ((2.0 * PI * variance).ln() + r * r / variance)
}

/// Cholesky factorization of `cov`, escalating diagonal jitter along
/// [`JITTER_LADDER`]. Returns the factor and the absolute jitter that was added.
pub fn cholesky_jittered(cov: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cov.ncols(),
        });
    }
    let scale = if n == 0 {
        1.0
    } else {
        let s = cov.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64;
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    };
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        last = jitter;
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((chol, jitter));
            }
        }
    }
    Err(Error::Factorization { dim: n, jitter: last })
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Mean vector and full covariance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianJoint {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianJoint {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariance.nrows(),
            });
        }
        let tol = 1e-9 * covariance.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mean, covariance })
    }

    /// Scalar normal as a one-dimensional joint.
    pub fn scalar(mean: f64, variance: f64) -> Self {
        Self {
            mean: DVector::from_element(1, mean),
            covariance: DMatrix::from_element(1, 1, variance),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Drop the off-diagonal covariance.
    pub fn diagonal(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            covariance: DMatrix::from_diagonal(&self.covariance.diagonal()),
        }
    }

    pub fn marginals(&self) -> Result<MarginalPrediction> {
        MarginalPrediction::new(
            self.mean.iter().copied().collect(),
            self.covariance.diagonal().iter().copied().collect(),
        )
    }

    pub fn from_marginals(pred: &MarginalPrediction) -> Self {
        Self {
            mean: DVector::from_column_slice(&pred.means),
            covariance: DMatrix::from_diagonal(&DVector::from_column_slice(&pred.variances)),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        let (chol, _) = cholesky_jittered(&self.covariance)?;
        let z = DVector::from_fn(self.dim(), |_, _| rng.standard_normal());
        Ok(&self.mean + chol.l() * z)
    }
}

/// Exact multivariate normal log-density through a triangular factorization.
pub fn gaussian_logpdf(value: &DVector<f64>, dist: &GaussianJoint) -> Result<f64> {
    let n = dist.dim();
    if value.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: value.len(),
        });
    }
    let (chol, _) = cholesky_jittered(&dist.covariance)?;
    let diff = value - &dist.mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .ok_or(Error::Factorization { dim: n, jitter: 0.0 })?;
    Ok(-0.5 * (n as f64 * LN_2PI + log_det(&chol) + z.norm_squared()))
}

/// Closed-form `KL(p || q)` between multivariate normals.
pub fn gaussian_kl(p: &GaussianJoint, q: &GaussianJoint) -> Result<f64> {
    let n = p.dim();
    if q.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.dim(),
        });
    }
    let (chol_p, _) = cholesky_jittered(&p.covariance)?;
    let (chol_q, _) = cholesky_jittered(&q.covariance)?;
    let lq = chol_q.l_dirty();
    // tr(Σq⁻¹ Σp) = ‖Lq⁻¹ Lp‖_F²
    let m = lq
        .solve_lower_triangular(&chol_p.l())
        .ok_or(Error::Factorization { dim: n, jitter: 0.0 })?;
    let diff = &q.mean - &p.mean;
    let z = lq
        .solve_lower_triangular(&diff)
        .ok_or(Error::Factorization { dim: n, jitter: 0.0 })?;
    let kl = 0.5 * (m.norm_squared() + z.norm_squared() - n as f64 + log_det(&chol_q) - log_det(&chol_p));
    Ok(kl.max(0.0))
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Self {
                estimate: mean,
                std_error: 0.0,
            };
        }
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            estimate: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Monte-Carlo `KL(p || q) = E_p[log p − log q]` using draws from `sampler`,
/// which must sample from `p`.
pub fn mc_kl<S, P, Q>(
    mut log_p: P,
    mut log_q: Q,
    mut sampler: S,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<McEstimate>
where
    S: FnMut(&mut RngStream) -> Result<Vec<f64>>,
    P: FnMut(&[f64]) -> Result<f64>,
    Q: FnMut(&[f64]) -> Result<f64>,
{
    if n_samples < 2 {
        return Err(Error::InvalidArgument("mc_kl needs at least two samples".into()));
    }
    let mut diffs = Vec::with_capacity(n_samples);
    for index in 0..n_samples {
        let draw = sampler(rng)?;
        let d = log_p(&draw)? - log_q(&draw)?;
        if !d.is_finite() {
            return Err(Error::NonFiniteDensity { index });
        }
        diffs.push(d);
    }
    Ok(McEstimate::from_samples(&diffs))
}
