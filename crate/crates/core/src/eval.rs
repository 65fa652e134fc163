//! Normalized log-likelihood and KL reports.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar::{ar_logpdf, marginal_logpdf, ModelAdapter, Ordering, TrivialBaseline};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::gaussian::{normal_logpdf, gaussian_kl, gaussian_logpdf, GaussianJoint, McEstimate};
use crate::gp::GpModel;
use crate::rng::RngStream;

/// Per-task values (per target point) with their mean and 95% half-width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub experiment: String,
    pub model: String,
    pub metric: String,
    pub per_task: Vec<f64>,
    pub mean: f64,
    /// `1.96 · std / √n`; 0 for a single task.
    pub ci95: f64,
    pub n_tasks: usize,
    pub n_excluded: usize,
    /// Monte Carlo standard error of each per-task value, for MC estimates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_task_se: Option<Vec<f64>>,
}

pub const CSV_HEADER: &str = "experiment,model,metric,mean,ci95,n_tasks,n_excluded";

impl MetricReport {
    /// Aggregate per-task results; failed tasks are counted, not dropped silently.
    pub fn from_results(experiment: &str, model: &str, metric: &str, results: Vec<Result<f64>>) -> Self {
        let n_tasks = results.len();
        let mut per_task = Vec::with_capacity(n_tasks);
        let mut n_excluded = 0;
        for r in results {
            match r {
                Ok(v) if v.is_finite() => per_task.push(v),
                Ok(v) => {
                    log::warn!("{experiment}/{model}: excluding non-finite task value {v}");
                    n_excluded += 1;
                }
                Err(e) => {
                    log::warn!("{experiment}/{model}: excluding task: {e}");
                    n_excluded += 1;
                }
            }
        }
        let (mean, ci95) = mean_ci95(&per_task);
        Self {
            experiment: experiment.into(),
            model: model.into(),
            metric: metric.into(),
            per_task,
            mean,
            ci95,
            n_tasks,
            n_excluded,
            per_task_se: None,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.experiment,
            self.model,
            self.metric,
            format_sig(self.mean),
            format_sig(self.ci95),
            self.n_tasks,
            self.n_excluded
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Mean and `1.96 · SE` (sample standard deviation); NaN mean when empty.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Nine significant digits; scientific notation outside `[1e-4, 1e9)`.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-4..1e9).contains(&a) {
        let decimals = (8 - a.log10().floor() as i32).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

/// Apply `density` (total log-density of a task's targets) to each task in
/// parallel and normalize by the number of targets.
pub fn eval_loglik<F>(experiment: &str, model: &str, density: F, tasks: &[Task]) -> MetricReport
where
    F: Fn(&Task) -> Result<f64> + Sync,
{
    let results = tasks
        .par_iter()
        .map(|t| {
            if t.num_targets() == 0 {
                return Err(Error::InvalidArgument("task has no targets".into()));
            }
            Ok(density(t)? / t.num_targets() as f64)
        })
        .collect();
    MetricReport::from_results(experiment, model, "loglik", results)
}

/// Factorized predictive log-density of a task.
pub fn marginal_density<A: ModelAdapter + ?Sized>(model: &A) -> impl Fn(&Task) -> Result<f64> + Sync + '_ {
    move |t| marginal_logpdf(model, &t.context, &t.targets, t.target_outputs()?)
}

/// AR log-density of each task under one random ordering drawn per task.
/// Orderings depend only on `seed` and the task's position.
pub fn eval_ar_loglik<A: ModelAdapter + ?Sized>(experiment: &str, model_name: &str, model: &A, tasks: &[Task], seed: u64) -> MetricReport {
    let base = RngStream::new(seed);
    let results = (0..tasks.len())
        .into_par_iter()
        .map(|i| {
            let t = &tasks[i];
            if t.num_targets() == 0 {
                return Err(Error::InvalidArgument("task has no targets".into()));
            }
            let ordering = Ordering::random(&mut base.fork(i as u64));
            Ok(ar_logpdf(model, &t.context, &t.targets, t.target_outputs()?, &ordering)? / t.num_targets() as f64)
        })
        .collect();
    MetricReport::from_results(experiment, model_name, "loglik", results)
}

/// Context-moment baseline; `N(0, 1)` for empty contexts.
pub fn trivial_baseline() -> TrivialBaseline {
    TrivialBaseline::default()
}

/// Moments of a task's own target outputs (population std, same floor as
/// the context-moment baseline), scored on those outputs.
pub fn trivial_data_density() -> impl Fn(&Task) -> Result<f64> + Sync {
    |t| {
        let ys = t.target_outputs()?;
        if ys.is_empty() {
            return Err(Error::InvalidArgument("task has no targets".into()));
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).max(TrivialBaseline::default().std_floor.powi(2));
        Ok(ys.iter().map(|&y| normal_logpdf(y, mean, var)).sum())
    }
}

/// Exact GP posterior with its off-diagonal covariance removed.
pub fn diagonal_gp(truth: &GpModel, task: &Task) -> Result<GaussianJoint> {
    Ok(truth.posterior(&task.context, &task.target_x())?.diagonal())
}

/// Exact `KL(posterior ‖ candidate)` per target point, Gaussian candidates.
pub fn eval_kl_to_truth<F>(experiment: &str, model: &str, truth: &GpModel, candidate: F, tasks: &[Task]) -> MetricReport
where
    F: Fn(&Task) -> Result<GaussianJoint> + Sync,
{
    let results = tasks
        .par_iter()
        .map(|t| {
            let p = truth.posterior(&t.context, &t.target_x())?;
            let q = candidate(t)?;
            Ok(gaussian_kl(&p, &q)? / t.num_targets().max(1) as f64)
        })
        .collect();
    MetricReport::from_results(experiment, model, "kl", results)
}

/// Monte Carlo `KL(posterior ‖ candidate)` per target point for candidates
/// known only through a log-density of the target values (data space).
pub fn eval_kl_to_truth_mc<F>(
    experiment: &str,
    model: &str,
    truth: &GpModel,
    candidate_logpdf: F,
    tasks: &[Task],
    samples_per_task: usize,
    seed: u64,
) -> MetricReport
where
    F: Fn(&Task, &[f64]) -> Result<f64> + Sync,
{
    let base = RngStream::new(seed);
    let per: Vec<Result<McEstimate>> = (0..tasks.len())
        .into_par_iter()
        .map(|i| {
            let t = &tasks[i];
            let n = t.num_targets().max(1) as f64;
            let p = truth.posterior(&t.context, &t.target_x())?;
            let mut rng = base.fork(i as u64);
            let mut diffs = Vec::with_capacity(samples_per_task);
            for _ in 0..samples_per_task {
                let y = p.sample(&mut rng)?;
                let lp = gaussian_logpdf(&y, &p)?;
                let lq = candidate_logpdf(t, y.as_slice())?;
                diffs.push((lp - lq) / n);
            }
            Ok(McEstimate::from_samples(&diffs))
        })
        .collect();
    let ses: Vec<f64> = per
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter(|e| e.estimate.is_finite())
        .map(|e| e.std_error)
        .collect();
    let mut report = MetricReport::from_results(experiment, model, "kl", per.into_iter().map(|r| r.map(|e| e.estimate)).collect());
    report.per_task_se = Some(ses);
    report
}

/// Joint log-density of a task's targets under a Gaussian.
pub fn joint_density<F>(joint: F) -> impl Fn(&Task) -> Result<f64> + Sync
where
    F: Fn(&Task) -> Result<GaussianJoint> + Sync,
{
    move |t| gaussian_logpdf(&DVector::from_column_slice(t.target_outputs()?), &joint(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::IdealCnpGp;
    use crate::data::inputs;
    use crate::generators::{sample_gp_task, TaskSpec};

    #[test]
    fn standard_normal_constant() {
        let tasks = vec![Task::new(vec![], inputs(&[0.0, 1.0, 2.0]), Some(vec![0.0; 3])).unwrap(); 4];
        let r = eval_loglik("t", "trivial", marginal_density(&trivial_baseline()), &tasks);
        for v in &r.per_task {
            assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
        }
        assert!(r.ci95.abs() < 1e-12);
        let single = eval_loglik("t", "trivial", marginal_density(&trivial_baseline()), &tasks[..1]);
        assert_eq!(single.ci95, 0.0);
    }

    #[test]
    fn failures_are_counted() {
        let tasks = vec![
            Task::new(vec![], inputs(&[0.0]), Some(vec![0.0])).unwrap(),
            Task::new(vec![], inputs(&[0.0]), None).unwrap(),
        ];
        let r = eval_loglik("t", "m", marginal_density(&trivial_baseline()), &tasks);
        assert_eq!((r.n_tasks, r.n_excluded, r.per_task.len()), (2, 1, 1));
    }

    #[test]
    fn invariant_to_task_order() {
        let gp = GpModel::eq_default();
        let mut rng = RngStream::new(1);
        let mut tasks: Vec<Task> = (0..20).map(|_| sample_gp_task(&gp, &TaskSpec::new(0, 10, 5), &mut rng).unwrap()).collect();
        let a = eval_loglik("t", "m", marginal_density(&IdealCnpGp(gp)), &tasks);
        tasks.reverse();
        let b = eval_loglik("t", "m", marginal_density(&IdealCnpGp(gp)), &tasks);
        assert!((a.mean - b.mean).abs() < 1e-12);
        assert!((a.ci95 - b.ci95).abs() < 1e-12);
    }

    #[test]
    fn kl_of_exact_posterior_is_zero_and_diagonal_positive() {
        let gp = GpModel::eq_default();
        let mut rng = RngStream::new(2);
        let tasks: Vec<Task> = (0..50).map(|_| sample_gp_task(&gp, &TaskSpec::new(0, 10, 8), &mut rng).unwrap()).collect();
        let exact = eval_kl_to_truth("t", "exact", &gp, |t| gp.posterior(&t.context, &t.target_x()), &tasks);
        assert!(exact.per_task.iter().all(|v| v.abs() < 1e-10));
        let diag = eval_kl_to_truth("t", "diag", &gp, |t| diagonal_gp(&gp, t), &tasks);
        assert!(diag.per_task.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn mc_kl_of_ar_ideal_cnp_vanishes() {
        let gp = GpModel::eq_default();
        let adapter = IdealCnpGp(gp);
        let mut rng = RngStream::new(3);
        let tasks: Vec<Task> = (0..5).map(|_| sample_gp_task(&gp, &TaskSpec::new(0, 5, 6), &mut rng).unwrap()).collect();
        let r = eval_kl_to_truth_mc(
            "t",
            "ar",
            &gp,
            |t, y| ar_logpdf(&adapter, &t.context, &t.targets, y, &Ordering::Random { seed: 1 }),
            &tasks,
            20,
            0,
        );
        assert!(r.per_task.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn data_moment_baseline_on_sawtooth() {
        use crate::generators::{Process, SawtoothVariant, TaskSpec};
        let mut rng = RngStream::new(21);
        let spec = TaskSpec::new(0, 75, 100);
        let tasks: Vec<Task> = (0..256)
            .map(|_| Process::Sawtooth(SawtoothVariant::Auxiliary).sample_task(&spec, &mut rng).unwrap())
            .collect();
        let r = eval_loglik("t", "trivial-data", trivial_data_density(), &tasks);
        // a Gaussian fitted to a uniform on [0, 1] scores -ln(2 pi / 12) / 2 - 1/2
        let uniform = -0.5 * (2.0 * std::f64::consts::PI / 12.0).ln() - 0.5;
        assert!((r.mean - uniform).abs() < 0.02, "{}", r.mean);
        assert!((r.mean + 0.18).abs() < 0.1);
    }

    #[test]
    fn csv_formatting() {
        assert_eq!(format_sig(0.4), "0.4");
        assert_eq!(format_sig(-0.918938533204), "-0.918938533");
        assert_eq!(format_sig(1234.5678901234), "1234.56789");
        assert_eq!(format_sig(1.5e-7), "1.50000000e-7");
        let r = MetricReport::from_results("eq-kl", "exact", "kl", vec![Ok(0.0), Ok(0.0)]);
        assert_eq!(r.csv_row(), "eq-kl,exact,kl,0,0,2,0");
    }
}
