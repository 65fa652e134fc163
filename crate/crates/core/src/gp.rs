//! Exact Gaussian-process conditioning and the ideal CNP / GNP for GP data.

use nalgebra::{DMatrix, DVector};

use crate::data::{MarginalPrediction, Point};
use crate::error::{Error, Result};
use crate::gaussian::{cholesky_jittered, GaussianJoint};

/// Which exponent the Matérn-5/2 kernel uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaternForm {
    /// `(1 + √5 r + 5/3 r²) exp(−√5 r)`.
    #[default]
    Standard,
    /// `(1 + √5 r + 5/3 r²) exp(−r)`, as printed in the synthetic-data description.
    Literal,
}

/// Stationary unit-variance kernels on scalar inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    Eq {
        length_scale: f64,
    },
    Matern52 {
        length_scale: f64,
        form: MaternForm,
    },
    WeaklyPeriodic {
        decay_length: f64,
        periodic_length: f64,
        period: f64,
    },
}

impl Kernel {
    /// `ℓ = 1/4`.
    pub fn eq() -> Self {
        Kernel::Eq { length_scale: 0.25 }
    }

    pub fn matern52() -> Self {
        Kernel::Matern52 {
            length_scale: 0.25,
            form: MaternForm::Standard,
        }
    }

    /// `ℓ_d = 1/2`, `ℓ_p = 1`, `p = 1/4`.
    pub fn weakly_periodic() -> Self {
        Kernel::WeaklyPeriodic {
            decay_length: 0.5,
            periodic_length: 1.0,
            period: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Kernel::Eq { length_scale } | Kernel::Matern52 { length_scale, .. } => length_scale > 0.0,
            Kernel::WeaklyPeriodic {
                decay_length,
                periodic_length,
                period,
            } => decay_length > 0.0 && periodic_length > 0.0 && period > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("kernel scales must be positive: {self:?}")))
        }
    }

    pub fn eval(&self, x: f64, x2: f64) -> f64 {
        let d = x - x2;
        match *self {
            Kernel::Eq { length_scale } => (-0.5 * d * d / (length_scale * length_scale)).exp(),
            Kernel::Matern52 { length_scale, form } => {
                let r = d.abs() / length_scale;
                let s5 = 5f64.sqrt();
                let poly = 1.0 + s5 * r + 5.0 / 3.0 * r * r;
                match form {
                    MaternForm::Standard => poly * (-s5 * r).exp(),
                    MaternForm::Literal => poly * (-r).exp(),
                }
            }
            Kernel::WeaklyPeriodic {
                decay_length,
                periodic_length,
                period,
            } => {
                let s = (std::f64::consts::PI / period * d).sin();
                (-0.5 * d * d / (decay_length * decay_length) - 2.0 / (periodic_length * periodic_length) * s * s)
                    .exp()
            }
        }
    }

    pub fn gram(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(a[i], b[j]))
    }
}

/// Zero-mean GP prior plus i.i.d. Gaussian observation noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpModel {
    pub kernel: Kernel,
    pub noise_variance: f64,
}

impl GpModel {
    pub fn new(kernel: Kernel, noise_variance: f64) -> Result<Self> {
        kernel.validate()?;
        if !(noise_variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be nonnegative, got {noise_variance}"
            )));
        }
        Ok(Self { kernel, noise_variance })
    }

    /// EQ kernel with the synthetic-task noise variance 0.05.
    pub fn eq_default() -> Self {
        Self {
            kernel: Kernel::eq(),
            noise_variance: 0.05,
        }
    }

    /// Posterior over the latent `f(targets)`.
    pub fn latent_posterior(&self, context: &[Point], targets: &[f64]) -> Result<GaussianJoint> {
        let ktt = self.kernel.gram(targets, targets);
        if context.is_empty() {
            return GaussianJoint::new(DVector::zeros(targets.len()), ktt);
        }
        let xc: Vec<f64> = context.iter().map(|p| p.x).collect();
        let yc = DVector::from_iterator(context.len(), context.iter().map(|p| p.y));
        let mut kcc = self.kernel.gram(&xc, &xc);
        for i in 0..xc.len() {
            kcc[(i, i)] += self.noise_variance;
        }
        let (chol, _) = cholesky_jittered(&kcc)?;
        let kct = self.kernel.gram(&xc, targets);
        let alpha = chol.solve(&yc);
        let mean = kct.transpose() * alpha;
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kct)
            .ok_or(Error::Factorization {
                dim: xc.len(),
                jitter: 0.0,
            })?;
        let mut cov = ktt - v.transpose() * v;
        symmetrize(&mut cov);
        GaussianJoint::new(mean, cov)
    }

    /// Posterior over the noisy observations `y(targets)`.
    pub fn posterior(&self, context: &[Point], targets: &[f64]) -> Result<GaussianJoint> {
        let mut post = self.latent_posterior(context, targets)?;
        for i in 0..targets.len() {
            post.covariance[(i, i)] += self.noise_variance;
        }
        Ok(post)
    }

    /// Prior joint over noisy observations at `xs`.
    pub fn prior(&self, xs: &[f64]) -> Result<GaussianJoint> {
        self.posterior(&[], xs)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn gp_posterior(model: &GpModel, context: &[Point], targets: &[f64]) -> Result<GaussianJoint> {
    model.posterior(context, targets)
}

/// Smallest variance reported by [`ideal_cnp_gp`]; noiseless posteriors at
/// observed inputs are otherwise zero up to round-off.
pub const MIN_MARGINAL_VARIANCE: f64 = 1e-12;

/// Diagonal Gaussian matching the posterior marginals.
pub fn ideal_cnp_gp(model: &GpModel, context: &[Point], targets: &[f64]) -> Result<MarginalPrediction> {
    let post = model.posterior(context, targets)?;
    MarginalPrediction::new(
        post.mean.iter().copied().collect(),
        post.covariance.diagonal().iter().map(|v| v.max(MIN_MARGINAL_VARIANCE)).collect(),
    )
}

/// Moment-matched joint Gaussian; for GP data this is the posterior itself.
pub fn ideal_gnp_gp(model: &GpModel, context: &[Point], targets: &[f64]) -> Result<GaussianJoint> {
    model.posterior(context, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::gaussian_kl;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pts(xy: &[(f64, f64)]) -> Vec<Point> {
        xy.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn eq_kernel_values() {
        let k = Kernel::eq();
        assert_eq!(k.eval(0.3, 0.3), 1.0);
        assert_abs_diff_eq!(k.eval(0.0, 0.25), (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k.eval(0.0, 0.25), 0.606_531, epsilon = 1e-6);
    }

    #[test]
    fn matern_at_unit_distance() {
        let s5 = 5f64.sqrt();
        let k = Kernel::matern52();
        assert_abs_diff_eq!(k.eval(0.0, 0.25), (1.0 + s5 + 5.0 / 3.0) * (-s5).exp(), epsilon = 1e-15);
        let lit = Kernel::Matern52 {
            length_scale: 0.25,
            form: MaternForm::Literal,
        };
        assert_abs_diff_eq!(lit.eval(0.0, 0.25), (1.0 + s5 + 5.0 / 3.0) * (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernels_are_one_on_diagonal() {
        for k in [Kernel::eq(), Kernel::matern52(), Kernel::weakly_periodic()] {
            assert_eq!(k.eval(1.7, 1.7), 1.0);
        }
    }

    #[test]
    fn empty_context_is_prior() {
        let m = GpModel::eq_default();
        let xs = [-1.0, 0.0, 0.3];
        let post = gp_posterior(&m, &[], &xs).unwrap();
        let mut expected = Kernel::eq().gram(&xs, &xs);
        for i in 0..3 {
            expected[(i, i)] += 0.05;
        }
        assert_eq!(post.mean, DVector::zeros(3));
        assert_abs_diff_eq!(post.covariance, expected, epsilon = 1e-15);
        let cnp = ideal_cnp_gp(&m, &[], &xs).unwrap();
        for v in cnp.variances {
            assert_abs_diff_eq!(v, 1.05, epsilon = 1e-15);
        }
    }

    #[test]
    fn noiseless_interpolation() {
        let m = GpModel::new(Kernel::eq(), 0.0).unwrap();
        let post = gp_posterior(&m, &pts(&[(0.4, 1.3)]), &[0.4]).unwrap();
        assert_abs_diff_eq!(post.mean[0], 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(post.covariance[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_block_conditioning() {
        // Oracle: condition the 5-point joint with the explicit block formula and a dense inverse.
        let m = GpModel::eq_default();
        let ctx = pts(&[(-0.5, 0.2), (0.1, -0.4), (0.6, 0.9)]);
        let tx = [0.0, 0.35];
        let all = [-0.5, 0.1, 0.6, 0.0, 0.35];
        let mut joint = Kernel::eq().gram(&all, &all);
        for i in 0..5 {
            joint[(i, i)] += 0.05;
        }
        let a = joint.view((0, 0), (3, 3)).into_owned();
        let b = joint.view((0, 3), (3, 2)).into_owned();
        let c = joint.view((3, 3), (2, 2)).into_owned();
        let ainv = a.try_inverse().unwrap();
        let y = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let mean = b.transpose() * &ainv * y;
        let cov = c - b.transpose() * ainv * b;
        let post = gp_posterior(&m, &ctx, &tx).unwrap();
        assert_abs_diff_eq!(post.mean, mean, epsilon = 1e-12);
        assert_abs_diff_eq!(post.covariance, cov, epsilon = 1e-12);
    }

    #[test]
    fn ideal_cnp_is_posterior_diagonal() {
        let m = GpModel::eq_default();
        let ctx = pts(&[(-1.0, 0.5), (1.0, -0.5)]);
        let tx = [-0.2, 0.0, 0.9];
        let post = gp_posterior(&m, &ctx, &tx).unwrap();
        let cnp = ideal_cnp_gp(&m, &ctx, &tx).unwrap();
        for i in 0..3 {
            assert_eq!(cnp.means[i], post.mean[i]);
            assert_eq!(cnp.variances[i], post.covariance[(i, i)]);
        }
        let gnp = ideal_gnp_gp(&m, &ctx, &tx).unwrap();
        assert!(gaussian_kl(&post, &gnp).unwrap() < 1e-10);
    }

    #[test]
    fn gram_is_positive_definite_for_all_kernels() {
        let mut rng = RngStream::new(8);
        for k in [Kernel::eq(), Kernel::matern52(), Kernel::weakly_periodic()] {
            let xs: Vec<f64> = (0..50).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            let g = k.gram(&xs, &xs);
            assert_eq!(g, g.transpose());
            cholesky_jittered(&g).unwrap();
        }
    }

    proptest! {
        #[test]
        fn consistent_under_marginalization(
            ctx in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 0..8),
            x1 in -2.0f64..2.0,
            x2 in -2.0f64..2.0,
        ) {
            let m = GpModel::eq_default();
            let ctx = pts(&ctx);
            let pair = gp_posterior(&m, &ctx, &[x1, x2]).unwrap();
            let single = gp_posterior(&m, &ctx, &[x1]).unwrap();
            prop_assert!((pair.mean[0] - single.mean[0]).abs() < 1e-9);
            prop_assert!((pair.covariance[(0, 0)] - single.covariance[(0, 0)]).abs() < 1e-9);
        }

        #[test]
        fn permutation_invariant_in_context(
            ctx in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..10),
            seed in 0u64..100,
        ) {
            let m = GpModel::eq_default();
            let ctx = pts(&ctx);
            let perm = RngStream::new(seed).permutation(ctx.len());
            let shuffled: Vec<Point> = perm.iter().map(|&i| ctx[i]).collect();
            let tx = [-1.0, 0.5];
            let a = gp_posterior(&m, &ctx, &tx).unwrap();
            let b = gp_posterior(&m, &shuffled, &tx).unwrap();
            prop_assert!((a.mean - b.mean).amax() < 1e-9);
            prop_assert!((a.covariance - b.covariance).amax() < 1e-9);
        }
    }
}
