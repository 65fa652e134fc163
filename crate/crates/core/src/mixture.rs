//! Three-component function mixture with a closed-form ideal CNP.
//!
//! Component means are `x² + c`, `x` and `−x`. The two standard setups differ
//! in the offset `c` and the per-component noise variances.

use nalgebra::{DMatrix, DVector};

use crate::data::{MarginalPrediction, Point};
use crate::error::{Error, Result};
use crate::gaussian::{normal_logpdf, GaussianJoint};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunctionMixture {
    pub weights: [f64; 3],
    pub noise_variances: [f64; 3],
    /// Offset `c` of the quadratic component `x² + c`.
    pub square_offset: f64,
}

impl FunctionMixture {
    pub fn new(weights: [f64; 3], noise_variances: [f64; 3], square_offset: f64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights must be a distribution: {weights:?}")));
        }
        if noise_variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "noise variances must be positive: {noise_variances:?}"
            )));
        }
        Ok(Self {
            weights,
            noise_variances,
            square_offset,
        })
    }

    /// Weights (1/4, 1/2, 1/4), unit noise, quadratic `x² + 1`.
    pub fn illustration() -> Self {
        Self {
            weights: [0.25, 0.5, 0.25],
            noise_variances: [1.0, 1.0, 1.0],
            square_offset: 1.0,
        }
    }

    /// Weights (1/4, 1/2, 1/4), noise (0.25, 0.0625, 0.25), quadratic `x²`.
    pub fn auxiliary() -> Self {
        Self {
            weights: [0.25, 0.5, 0.25],
            noise_variances: [0.25, 0.0625, 0.25],
            square_offset: 0.0,
        }
    }

    pub fn component_mean(&self, component: usize, x: f64) -> f64 {
        match component {
            0 => x * x + self.square_offset,
            1 => x,
            2 => -x,
            _ => unreachable!("three components"),
        }
    }

    fn log_likelihoods(&self, points: &[Point]) -> [f64; 3] {
        std::array::from_fn(|i| {
            points
                .iter()
                .map(|p| normal_logpdf(p.y, self.component_mean(i, p.x), self.noise_variances[i]))
                .sum()
        })
    }

    /// Bayes-rule update of the weights, computed in log space.
    pub fn posterior(&self, context: &[Point]) -> Self {
        if context.is_empty() {
            return *self;
        }
        let ll = self.log_likelihoods(context);
        let logw: [f64; 3] = std::array::from_fn(|i| {
            if self.weights[i] > 0.0 {
                self.weights[i].ln() + ll[i]
            } else {
                f64::NEG_INFINITY
            }
        });
        Self {
            weights: normalize_log(logw),
            ..*self
        }
    }

    fn moments(&self, x: f64) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for i in 0..3 {
            let f = self.component_mean(i, x);
            mean += self.weights[i] * f;
            second += self.weights[i] * (self.noise_variances[i] + f * f);
        }
        (mean, second - mean * mean)
    }

    /// Moment-matched independent Gaussians at each target.
    pub fn ideal_cnp(&self, context: &[Point], targets: &[f64]) -> Result<MarginalPrediction> {
        let post = self.posterior(context);
        let (means, variances) = targets.iter().map(|&x| post.moments(x)).unzip();
        MarginalPrediction::new(means, variances)
    }

    /// Moment-matched joint Gaussian over the targets.
    pub fn ideal_gnp(&self, context: &[Point], targets: &[f64]) -> Result<GaussianJoint> {
        let post = self.posterior(context);
        let n = targets.len();
        let f = DMatrix::from_fn(n, 3, |j, i| post.component_mean(i, targets[j]));
        let mean = DVector::from_fn(n, |j, _| (0..3).map(|i| post.weights[i] * f[(j, i)]).sum());
        let cov = DMatrix::from_fn(n, n, |j, k| {
            let mut c = 0.0;
            for i in 0..3 {
                c += post.weights[i] * f[(j, i)] * f[(k, i)];
                if j == k {
                    c += post.weights[i] * post.noise_variances[i];
                }
            }
            c - mean[j] * mean[k]
        });
        GaussianJoint::new(mean, cov)
    }

    /// Exact joint log-density of `values` at `targets` given the context.
    pub fn true_logpdf(&self, context: &[Point], targets: &[f64], values: &[f64]) -> Result<f64> {
        if targets.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: targets.len(),
                got: values.len(),
            });
        }
        let post = self.posterior(context);
        let points: Vec<Point> = targets.iter().zip(values).map(|(&x, &y)| Point::new(x, y)).collect();
        let ll = post.log_likelihoods(&points);
        let terms: [f64; 3] = std::array::from_fn(|i| {
            if post.weights[i] > 0.0 {
                post.weights[i].ln() + ll[i]
            } else {
                f64::NEG_INFINITY
            }
        });
        Ok(log_sum_exp(&terms))
    }

    /// One joint draw at `targets` from the posterior given the context.
    pub fn sample(&self, context: &[Point], targets: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let post = self.posterior(context);
        let i = rng.categorical(&post.weights);
        targets
            .iter()
            .map(|&x| rng.normal(post.component_mean(i, x), post.noise_variances[i]))
            .collect()
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn normalize_log(logw: [f64; 3]) -> [f64; 3] {
    let lse = log_sum_exp(&logw);
    let mut w: [f64; 3] = std::array::from_fn(|i| (logw[i] - lse).exp());
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

pub fn mixture_posterior(mix: &FunctionMixture, context: &[Point]) -> FunctionMixture {
    mix.posterior(context)
}

pub fn ideal_cnp_mixture(mix: &FunctionMixture, context: &[Point], targets: &[f64]) -> Result<MarginalPrediction> {
    mix.ideal_cnp(context, targets)
}

pub fn ideal_gnp_mixture(mix: &FunctionMixture, context: &[Point], targets: &[f64]) -> Result<GaussianJoint> {
    mix.ideal_gnp(context, targets)
}

pub fn mixture_true_logpdf(mix: &FunctionMixture, context: &[Point], targets: &[f64], values: &[f64]) -> Result<f64> {
    mix.true_logpdf(context, targets, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{gaussian_logpdf, mc_kl};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn phi(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    }

    #[test]
    fn empty_context_keeps_prior_weights() {
        let m = FunctionMixture::illustration();
        assert_eq!(m.posterior(&[]).weights, [0.25, 0.5, 0.25]);
    }

    #[test]
    fn exact_hit_dominates_when_noise_is_small() {
        let m = FunctionMixture::new([0.25, 0.5, 0.25], [1e-3; 3], 1.0).unwrap();
        let post = m.posterior(&[Point::new(2.0, 5.0)]);
        assert!(post.weights[0] > 1.0 - 1e-12);
    }

    #[test]
    fn hand_computed_bayes_update() {
        // f(1) = (2, 1, -1); y = 1, unit noise
        let m = FunctionMixture::illustration();
        let post = m.posterior(&[Point::new(1.0, 1.0)]);
        let (l1, l2, l3) = (0.25 * phi(1.0), 0.5 * phi(0.0), 0.25 * phi(2.0));
        assert_abs_diff_eq!(post.weights[1], l2 / (l1 + l2 + l3), epsilon = 1e-14);
        assert_abs_diff_eq!(post.weights[0], l1 / (l1 + l2 + l3), epsilon = 1e-14);
    }

    #[test]
    fn long_context_does_not_underflow() {
        let m = FunctionMixture::illustration();
        let ctx: Vec<Point> = (0..2000).map(|i| Point::new(i as f64 * 1e-3, 50.0)).collect();
        let post = m.posterior(&ctx);
        assert!(post.weights.iter().all(|w| w.is_finite()));
        assert_abs_diff_eq!(post.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ideal_cnp_moments() {
        let m = FunctionMixture::illustration();
        let p = m.ideal_cnp(&[], &[0.0, 1.0]).unwrap();
        // x = 0: f = (1, 0, 0) → mean 0.25, var 0.25·2 + 0.5 + 0.25 − 0.0625
        assert_abs_diff_eq!(p.means[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p.variances[0], 1.1875, epsilon = 1e-15);
        assert_abs_diff_eq!(p.means[1], 0.75, epsilon = 1e-15);

        let degenerate = FunctionMixture::new([1.0, 0.0, 0.0], [0.3, 1.0, 1.0], 1.0).unwrap();
        let p = degenerate.ideal_cnp(&[], &[1.5]).unwrap();
        assert_abs_diff_eq!(p.means[0], 1.5 * 1.5 + 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.variances[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn true_logpdf_single_target_matches_direct_sum() {
        let m = FunctionMixture::illustration();
        for &(x, y) in &[(0.0, 0.3), (1.0, 2.0), (-2.0, -1.0)] {
            let direct: f64 = 0.25 * phi(y - (x * x + 1.0)) + 0.5 * phi(y - x) + 0.25 * phi(y + x);
            assert_abs_diff_eq!(m.true_logpdf(&[], &[x], &[y]).unwrap(), direct.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn true_logpdf_degenerate_is_gaussian() {
        let m = FunctionMixture::new([1.0, 0.0, 0.0], [0.5, 1.0, 1.0], 1.0).unwrap();
        let lp = m.true_logpdf(&[], &[0.5, 1.0], &[1.0, 2.5]).unwrap();
        let expected = normal_logpdf(1.0, 1.25, 0.5) + normal_logpdf(2.5, 2.0, 0.5);
        assert_abs_diff_eq!(lp, expected, epsilon = 1e-12);
    }

    #[test]
    fn joint_density_integrates_to_one() {
        let m = FunctionMixture::illustration();
        let ctx = [Point::new(-0.5, 0.2)];
        let h = 0.02;
        let grid: Vec<f64> = (0..1000).map(|i| -9.0 + h * (i as f64 + 0.5)).collect();
        let mut total = 0.0;
        for &a in &grid {
            for &b in &grid {
                total += m.true_logpdf(&ctx, &[0.5, 1.5], &[a, b]).unwrap().exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn gnp_covariance_matches_monte_carlo_moments() {
        let m = FunctionMixture::auxiliary();
        let ctx = [Point::new(0.3, 0.2)];
        let tx = [-1.0, 0.5, 1.5];
        let gnp = m.ideal_gnp(&ctx, &tx).unwrap();
        let mut rng = RngStream::new(77);
        let n = 400_000;
        let mut sum = DVector::zeros(3);
        let mut outer = DMatrix::zeros(3, 3);
        for _ in 0..n {
            let v = DVector::from_vec(m.sample(&ctx, &tx, &mut rng));
            outer += &v * v.transpose();
            sum += v;
        }
        let mean = sum / n as f64;
        let cov = outer / n as f64 - &mean * mean.transpose();
        assert!((mean - &gnp.mean).amax() < 0.02);
        assert!((cov - &gnp.covariance).amax() < 0.05);
    }

    #[test]
    fn moment_matched_gaussian_is_not_exact() {
        let m = FunctionMixture::illustration();
        let tx = [1.0, 2.0, 4.0, 6.0];
        let gnp = m.ideal_gnp(&[], &tx).unwrap();
        let mut rng = RngStream::new(4);
        let est = mc_kl(
            |v| m.true_logpdf(&[], &tx, v),
            |v| gaussian_logpdf(&DVector::from_column_slice(v), &gnp),
            |r| Ok(m.sample(&[], &tx, r)),
            10_000,
            &mut rng,
        )
        .unwrap();
        assert!(est.estimate > 3.0 * est.std_error);
    }

    proptest! {
        #[test]
        fn posterior_weights_form_a_distribution(
            ctx in prop::collection::vec((-3.0f64..3.0, -20.0f64..20.0), 0..30),
        ) {
            let ctx: Vec<Point> = ctx.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            for m in [FunctionMixture::illustration(), FunctionMixture::auxiliary()] {
                let w = m.posterior(&ctx).weights;
                prop_assert!(w.iter().all(|v| *v >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn cnp_variance_at_least_min_noise(
            ctx in prop::collection::vec((-3.0f64..3.0, -5.0f64..5.0), 0..5),
            x in -4.0f64..4.0,
        ) {
            let ctx: Vec<Point> = ctx.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let m = FunctionMixture::auxiliary();
            let p = m.ideal_cnp(&ctx, &[x]).unwrap();
            prop_assert!(p.variances[0] >= 0.0625 * (1.0 - 1e-12));
        }
    }
}
