//! Autoregressive rollouts and chain-rule densities.

use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use crate::data::{Input, Point};
use crate::error::{Error, Result};
use crate::gaussian::normal_logpdf;
use crate::rng::RngStream;

use super::adapter::ModelAdapter;

/// Order in which target points are visited.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    Random { seed: u64 },
    Given(Vec<usize>),
    /// Increasing input, ties broken by channel then index.
    LeftToRight,
}

impl Ordering {
    pub fn permutation(&self, targets: &[Input]) -> Result<Vec<usize>> {
        let n = targets.len();
        match self {
            Self::Random { seed } => Ok(RngStream::new(*seed).permutation(n)),
            Self::LeftToRight => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| {
                    targets[a]
                        .x
                        .total_cmp(&targets[b].x)
                        .then(targets[a].channel.cmp(&targets[b].channel))
                        .then(a.cmp(&b))
                });
                Ok(idx)
            }
            Self::Given(perm) => {
                let mut seen = vec![false; n];
                if perm.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: perm.len(),
                    });
                }
                for &i in perm {
                    if i >= n || seen[i] {
                        return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of 0..{n}")));
                    }
                    seen[i] = true;
                }
                Ok(perm.clone())
            }
        }
    }

    /// A random ordering seeded from `rng`.
    pub fn random(rng: &mut RngStream) -> Self {
        Self::Random { seed: rng.next_u64() }
    }
}

/// Sampled points in visiting order (data space) and the permutation used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Point>,
    pub permutation: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sampled outputs rearranged into the original target order.
    pub fn values_in_target_order(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.points.len()];
        for (p, &i) in self.points.iter().zip(&self.permutation) {
            out[i] = p.y;
        }
        out
    }
}

static GUARDRAIL_WARNED: AtomicBool = AtomicBool::new(false);

/// Warns (once per process) when a rollout conditions on more points than
/// the model was trained with.
fn guardrail<A: ModelAdapter + ?Sized>(model: &A, size: usize) {
    if let Some(max) = model.max_context() {
        if size > max && !GUARDRAIL_WARNED.swap(true, AtomicOrdering::Relaxed) {
            log::warn!("conditioning set grows to {size} points, beyond the {max} seen in training");
        }
    }
}

fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Rollout {
        step,
        source: Box::new(e),
    }
}

/// Sample target outputs `block_size` points at a time, each block conditioned
/// on the context and every earlier sample. `block_size = 1` is fully
/// autoregressive; `block_size ≥ N` is a single factorized draw.
pub fn ar_sample<A: ModelAdapter + ?Sized>(
    model: &A,
    context: &[Point],
    targets: &[Input],
    ordering: &Ordering,
    block_size: usize,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    if block_size == 0 {
        return Err(Error::InvalidArgument("block size must be at least 1".into()));
    }
    let permutation = ordering.permutation(targets)?;
    let transform = model.transform();
    guardrail(model, context.len() + targets.len().saturating_sub(1));
    let mut cond = model.conditioner(&transform.apply_points(context)?)?;
    let mut points = Vec::with_capacity(targets.len());
    for (b, block) in permutation.chunks(block_size).enumerate() {
        let step = b * block_size;
        let inputs: Vec<Input> = block.iter().map(|&i| targets[i]).collect();
        let pred = cond.predict(&inputs).map_err(at_step(step))?;
        let mut sampled = Vec::with_capacity(inputs.len());
        for (j, input) in inputs.iter().enumerate() {
            let z = rng.normal(pred.means[j], pred.variances[j]);
            sampled.push(input.at(z));
            points.push(input.at(transform.inverse(z)));
        }
        cond.push(&sampled).map_err(at_step(step))?;
    }
    Ok(Trajectory { points, permutation })
}

/// Chain-rule log-density of `values` (data space, target order) visiting
/// targets in `ordering`, one point per step.
pub fn ar_logpdf<A: ModelAdapter + ?Sized>(
    model: &A,
    context: &[Point],
    targets: &[Input],
    values: &[f64],
    ordering: &Ordering,
) -> Result<f64> {
    if values.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: values.len(),
        });
    }
    let permutation = ordering.permutation(targets)?;
    let transform = model.transform();
    guardrail(model, context.len() + targets.len().saturating_sub(1));
    let mut cond = model.conditioner(&transform.apply_points(context)?)?;
    let mut total = 0.0;
    for (step, &i) in permutation.iter().enumerate() {
        let pred = cond.predict(&targets[i..=i]).map_err(at_step(step))?;
        let z = transform.forward(values[i])?;
        let lp = normal_logpdf(z, pred.means[0], pred.variances[0]) + transform.log_jacobian(values[i]);
        if !lp.is_finite() {
            return Err(at_step(step)(Error::NonFiniteDensity { index: i }));
        }
        total += lp;
        cond.push(&[targets[i].at(z)]).map_err(at_step(step))?;
    }
    Ok(total)
}

/// Non-autoregressive (factorized) log-density of `values` in data space.
pub fn marginal_logpdf<A: ModelAdapter + ?Sized>(model: &A, context: &[Point], targets: &[Input], values: &[f64]) -> Result<f64> {
    if values.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: values.len(),
        });
    }
    let transform = model.transform();
    let pred = model.predict(&transform.apply_points(context)?, targets)?;
    let z = transform.apply_values(values)?;
    let jac: f64 = values.iter().map(|&y| transform.log_jacobian(y)).sum();
    Ok(pred.logpdf(&z)? + jac)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single ordering.
    pub std: f64,
}

/// Mean and standard deviation of the AR log-density of a task's targets
/// over `n_orderings` independent random orderings.
pub fn ar_loglik_spread<A: ModelAdapter + ?Sized>(
    model: &A,
    task: &crate::data::Task,
    n_orderings: usize,
    rng: &mut RngStream,
) -> Result<Spread> {
    if n_orderings == 0 {
        return Err(Error::InvalidArgument("need at least one ordering".into()));
    }
    let values = task.target_outputs()?;
    let lps = (0..n_orderings)
        .map(|_| ar_logpdf(model, &task.context, &task.targets, values, &Ordering::random(rng)))
        .collect::<Result<Vec<_>>>()?;
    let n = lps.len() as f64;
    let mean = lps.iter().sum::<f64>() / n;
    let std = if lps.len() < 2 {
        0.0
    } else {
        (lps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(Spread { mean, std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothSample {
    pub trajectory: Trajectory,
    /// Predictive means at the query inputs given context and trajectory.
    pub denoised: Vec<f64>,
}

/// AR-sample on `grid` in a random order, then read off the predictive mean
/// at `query` conditioned on the context and the sampled grid.
pub fn smooth_sample<A: ModelAdapter + ?Sized>(
    model: &A,
    context: &[Point],
    grid: &[Input],
    query: &[Input],
    rng: &mut RngStream,
) -> Result<SmoothSample> {
    let ordering = Ordering::random(rng);
    let trajectory = ar_sample(model, context, grid, &ordering, 1, rng)?;
    let transform = model.transform();
    let mut cond = transform.apply_points(context)?;
    cond.extend(transform.apply_points(&trajectory.points)?);
    let pred = model.predict(&cond, query)?;
    Ok(SmoothSample {
        trajectory,
        denoised: pred.means.iter().map(|&m| transform.inverse(m)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::{IdealCnpGp, TrivialBaseline};
    use crate::data::inputs;
    use crate::gaussian::gaussian_logpdf;
    use crate::gp::GpModel;
    use nalgebra::DVector;

    fn random_context(rng: &mut RngStream, n: usize) -> Vec<Point> {
        (0..n).map(|_| Point::new(rng.uniform_range(-2.0, 2.0), rng.standard_normal())).collect()
    }

    #[test]
    fn orderings_are_permutations() {
        let t = inputs(&[0.5, -1.0, 0.2]);
        assert_eq!(Ordering::LeftToRight.permutation(&t).unwrap(), vec![1, 2, 0]);
        let mut p = Ordering::Random { seed: 5 }.permutation(&t).unwrap();
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2]);
        assert!(Ordering::Given(vec![0, 0, 1]).permutation(&t).is_err());
        assert!(Ordering::Given(vec![0, 1]).permutation(&t).is_err());
    }

    #[test]
    fn chain_rule_matches_gp_joint() {
        let gp = GpModel::eq_default();
        let adapter = IdealCnpGp(gp);
        let mut rng = RngStream::new(11);
        for _ in 0..20 {
            let nc = rng.int_range(0, 8);
            let nt = rng.int_range(1, 10);
            let context = random_context(&mut rng, nc);
            let xs: Vec<f64> = (0..nt).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            let values: Vec<f64> = (0..nt).map(|_| rng.standard_normal()).collect();
            let joint = gp.posterior(&context, &xs).unwrap();
            let exact = gaussian_logpdf(&DVector::from_vec(values.clone()), &joint).unwrap();
            let ar = ar_logpdf(&adapter, &context, &inputs(&xs), &values, &Ordering::random(&mut rng)).unwrap();
            assert!((ar - exact).abs() < 1e-6, "{ar} vs {exact}");
        }
    }

    #[test]
    fn single_target_is_the_marginal() {
        let adapter = IdealCnpGp(GpModel::eq_default());
        let ctx = vec![Point::new(0.0, 1.0)];
        let t = inputs(&[0.4]);
        let ar = ar_logpdf(&adapter, &ctx, &t, &[0.3], &Ordering::LeftToRight).unwrap();
        let m = marginal_logpdf(&adapter, &ctx, &t, &[0.3]).unwrap();
        assert!((ar - m).abs() < 1e-12);
    }

    #[test]
    fn full_block_is_one_factorized_draw() {
        let adapter = IdealCnpGp(GpModel::eq_default());
        let ctx = vec![Point::new(0.0, 1.0)];
        let t = inputs(&[-1.0, 0.5, 1.5]);
        let ord = Ordering::Given(vec![2, 0, 1]);
        let traj = ar_sample(&adapter, &ctx, &t, &ord, 3, &mut RngStream::new(1)).unwrap();
        let pred = adapter.predict(&ctx, &t).unwrap();
        let mut rng = RngStream::new(1);
        for (p, &i) in traj.points.iter().zip(&ord.permutation(&t).unwrap()) {
            assert_eq!(p.y, rng.normal(pred.means[i], pred.variances[i]));
        }
    }

    #[test]
    fn reproducible_and_empty() {
        let adapter = IdealCnpGp(GpModel::eq_default());
        let t = inputs(&[-1.0, 0.0, 1.0, 1.2]);
        let a = ar_sample(&adapter, &[], &t, &Ordering::Random { seed: 3 }, 1, &mut RngStream::new(8)).unwrap();
        let b = ar_sample(&adapter, &[], &t, &Ordering::Random { seed: 3 }, 1, &mut RngStream::new(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let e = ar_sample(&adapter, &[], &[], &Ordering::LeftToRight, 1, &mut RngStream::new(8)).unwrap();
        assert!(e.is_empty());
        assert_eq!(ar_logpdf(&adapter, &[], &[], &[], &Ordering::LeftToRight).unwrap(), 0.0);
        assert!(ar_sample(&adapter, &[], &t, &Ordering::LeftToRight, 0, &mut RngStream::new(8)).is_err());
    }

    #[test]
    fn spread_is_zero_for_gaussian_truth() {
        let adapter = IdealCnpGp(GpModel::eq_default());
        let mut rng = RngStream::new(2);
        let task = crate::data::Task::new(random_context(&mut rng, 3), inputs(&[-1.0, 0.0, 0.7, 1.9]), Some(vec![0.1, -0.3, 0.5, 1.0])).unwrap();
        let s = ar_loglik_spread(&adapter, &task, 8, &mut rng).unwrap();
        assert!(s.std < 1e-9);
        assert_eq!(ar_loglik_spread(&adapter, &task, 1, &mut rng).unwrap().std, 0.0);
    }

    #[test]
    fn trivial_baseline_ordering_matters() {
        let task = crate::data::Task::new(vec![], inputs(&[0.0, 1.0, 2.0]), Some(vec![0.0, 3.0, -1.0])).unwrap();
        let s = ar_loglik_spread(&TrivialBaseline::default(), &task, 6, &mut RngStream::new(0)).unwrap();
        assert!(s.std > 0.0);
    }

    #[test]
    fn noiseless_denoising_interpolates() {
        let gp = GpModel::new(crate::gp::Kernel::eq(), 0.0).unwrap();
        let adapter = IdealCnpGp(gp);
        let grid = inputs(&[-1.5, -0.5, 0.5, 1.5]);
        let s = smooth_sample(&adapter, &[], &grid, &grid, &mut RngStream::new(4)).unwrap();
        let values = s.trajectory.values_in_target_order();
        for (d, v) in s.denoised.iter().zip(values) {
            assert!((d - v).abs() < 1e-9);
        }
        let off = smooth_sample(&adapter, &[], &grid, &inputs(&[0.0, 0.1, 0.2]), &mut RngStream::new(4)).unwrap();
        assert_eq!(off.denoised.len(), 3);
    }
}
