//! The named experiments. Each returns metric reports and sample records;
//! writing them out is left to the caller.

use std::collections::BTreeMap;
use std::path::Path;

use arcnp::ar::{
    aux_ar_predict_many, ar_logpdf, ar_loglik_spread, ar_sample, marginal_logpdf, smooth_sample, IdealCnpGp,
    IdealCnpMixture, ModelAdapter, Ordering, OutputTransform, UniformInputs,
};
use arcnp::data::{inputs, Point, Task};
use arcnp::eval::{
    diagonal_gp, eval_kl_to_truth, eval_kl_to_truth_mc, eval_loglik, marginal_density, mean_ci95, trivial_baseline, trivial_data_density,
    MetricReport,
};
use arcnp::gaussian::{gaussian_logpdf, GaussianJoint, McEstimate};
use arcnp::generators::{
    sample_gp_task, sample_predprey_task, simulate_lotka_volterra, LotkaVolterraParams, LvGrid, PredPreySplit, Process,
    SawtoothVariant, TaskSpec,
};
use arcnp::gp::{GpModel, Kernel};
use arcnp::mixture::FunctionMixture;
use arcnp::neural::{train, Checkpoint, CnpConfig, CnpModel, TaskSampler, TrainConfig};
use arcnp::{Error, Result, RngStream};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::Config;

/// Stream indices forked from the run seed.
const EVAL_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub reports: Vec<MetricReport>,
    pub samples: Vec<Value>,
}

/// Tracks which phase of a run is executing, for failure manifests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Setup,
    Generate,
    Train,
    Evaluate,
    Sample,
    Write,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::Generate => "generate",
            Phase::Train => "train",
            Phase::Evaluate => "evaluate",
            Phase::Sample => "sample",
            Phase::Write => "write",
        }
    }
}

pub fn parse_process(name: &str) -> std::result::Result<Process, String> {
    Ok(match name {
        "eq" => Process::Gp(GpModel::eq_default()),
        "matern" => Process::Gp(GpModel::new(Kernel::matern52(), 0.05).unwrap()),
        "weakly-periodic" => Process::Gp(GpModel::new(Kernel::weakly_periodic(), 0.05).unwrap()),
        "sawtooth" => Process::Sawtooth(SawtoothVariant::Standard),
        "sawtooth-aux" => Process::Sawtooth(SawtoothVariant::Auxiliary),
        "mixture" => Process::SyntheticMixture,
        "function-mixture" => Process::FunctionMixture(FunctionMixture::auxiliary()),
        "function-mixture-illustration" => Process::FunctionMixture(FunctionMixture::illustration()),
        "audio" => Process::Audio,
        other => {
            return Err(format!(
                "unknown process `{other}` (eq, matern, weakly-periodic, sawtooth, sawtooth-aux, mixture, \
                 function-mixture, function-mixture-illustration, audio)"
            ))
        }
    })
}

fn oracle_for(process: &Process) -> Option<Box<dyn ModelAdapter>> {
    match process {
        Process::Gp(gp) => Some(Box::new(IdealCnpGp(*gp))),
        Process::FunctionMixture(mix) => Some(Box::new(IdealCnpMixture(*mix))),
        _ => None,
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("field `{key}`: {}", message.into()))
}

fn get<T: std::str::FromStr>(cfg: &Config, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    cfg.get(key).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn list<T: std::str::FromStr>(cfg: &Config, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    cfg.list(key).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn task_spec(cfg: &Config) -> Result<TaskSpec> {
    let spec = TaskSpec::new(get(cfg, "context_min")?, get(cfg, "context_max")?, get(cfg, "num_targets")?);
    spec.validate()?;
    Ok(spec)
}

fn gp_from(cfg: &Config) -> Result<GpModel> {
    let lengthscale: f64 = get(cfg, "lengthscale")?;
    GpModel::new(Kernel::Eq { length_scale: lengthscale }, get(cfg, "noise_variance")?)
}

fn draw_tasks<F>(n: usize, rng: &mut RngStream, mut sample: F) -> Result<Vec<Task>>
where
    F: FnMut(&mut RngStream) -> Result<Task>,
{
    (0..n).map(|_| sample(rng)).collect()
}

/// Density-evaluation ordering for the `i`-th task.
fn ordering_for(cfg: &Config, base: &RngStream, i: usize) -> Ordering {
    match cfg.raw("ordering") {
        "left-to-right" => Ordering::LeftToRight,
        _ => Ordering::random(&mut base.fork(i as u64)),
    }
}

fn ar_loglik_report(experiment: &str, model_name: &str, model: &dyn ModelAdapter, tasks: &[Task], cfg: &Config, base: &RngStream) -> MetricReport {
    let results = (0..tasks.len())
        .into_par_iter()
        .map(|i| {
            let t = &tasks[i];
            let values = t.target_outputs()?;
            if values.is_empty() {
                return Err(Error::InvalidArgument("task has no targets".into()));
            }
            Ok(ar_logpdf(model, &t.context, &t.targets, values, &ordering_for(cfg, base, i))? / values.len() as f64)
        })
        .collect();
    MetricReport::from_results(experiment, model_name, "loglik", results)
}

fn points_json(points: &[Point]) -> Value {
    json!({
        "x": points.iter().map(|p| p.x).collect::<Vec<_>>(),
        "y": points.iter().map(|p| p.y).collect::<Vec<_>>(),
        "channel": points.iter().map(|p| p.channel).collect::<Vec<_>>(),
    })
}

/// AR samples for the first `num_samples` tasks.
fn rollout_samples(model_name: &str, model: &dyn ModelAdapter, tasks: &[Task], cfg: &Config, root: &RngStream) -> Result<Vec<Value>> {
    let n: usize = get(cfg, "num_samples")?;
    let block: usize = get(cfg, "block_size")?;
    let base = root.fork(SAMPLE_STREAM);
    let mut out = Vec::new();
    for (i, t) in tasks.iter().take(n).enumerate() {
        let mut rng = base.fork(i as u64);
        let ordering = match cfg.raw("ordering") {
            "left-to-right" => Ordering::LeftToRight,
            _ => Ordering::random(&mut rng),
        };
        let traj = ar_sample(model, &t.context, &t.targets, &ordering, block, &mut rng)?;
        out.push(json!({
            "task": i,
            "model": model_name,
            "context": points_json(&t.context),
            "sample": points_json(&traj.points),
            "permutation": traj.permutation,
        }));
    }
    Ok(out)
}

struct BuiltModel {
    name: String,
    adapter: Box<dyn ModelAdapter>,
}

fn train_config(cfg: &Config, seed: u64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        learning_rate: get(cfg, "learning_rate")?,
        batch_size: get(cfg, "batch_size")?,
        tasks_per_epoch: get(cfg, "tasks_per_epoch")?,
        epochs: get(cfg, "epochs")?,
        validation_tasks: get(cfg, "validation_tasks")?,
        seed,
    })
}

/// Train, load or pick the closed-form model, as configured.
fn build_model(
    cfg: &Config,
    oracle: Option<Box<dyn ModelAdapter>>,
    cnp_config: CnpConfig,
    sampler: &dyn TaskSampler,
    root: &RngStream,
    phase: &mut Phase,
) -> Result<BuiltModel> {
    match cfg.raw("model") {
        "ideal-oracle" => Ok(BuiltModel {
            name: "ideal-cnp".into(),
            adapter: oracle.ok_or_else(|| config_error("model", "no closed-form ideal model for this process"))?,
        }),
        "load-checkpoint" => {
            let path = cfg.checkpoint().ok_or_else(|| config_error("checkpoint", "missing"))?;
            let model = Checkpoint::load(&path)?.into_model()?;
            Ok(BuiltModel {
                name: "cnp".into(),
                adapter: Box::new(model),
            })
        }
        _ => {
            *phase = Phase::Train;
            let mut config = cnp_config;
            let width: usize = get(cfg, "width")?;
            config.latent_dim = width;
            config.encoder_hidden = vec![width; 3];
            config.decoder_hidden = vec![width; 4];
            let init_seed = root.fork(INIT_STREAM).next_u64();
            let model = CnpModel::new(config, &mut RngStream::new(init_seed))?;
            let outcome = train(model, sampler, &train_config(cfg, root.fork(TRAIN_STREAM).next_u64())?)?;
            if let Some(reason) = &outcome.aborted {
                log::warn!("training stopped early: {reason}");
            }
            let out = cfg.out_dir();
            std::fs::create_dir_all(&out)?;
            let mut meta = BTreeMap::new();
            meta.insert("experiment".into(), json!(cfg.experiment()));
            meta.insert("seed".into(), json!(cfg.raw("seed")));
            meta.insert("best_epoch".into(), json!(outcome.best_epoch));
            meta.insert("best_objective".into(), json!(outcome.best_objective));
            Checkpoint::from_model(&outcome.model, meta).save(&out.join("model.json"))?;
            write_history(&out.join("training.csv"), &outcome.history)?;
            Ok(BuiltModel {
                name: "cnp".into(),
                adapter: Box::new(outcome.model),
            })
        }
    }
}

fn write_history(path: &Path, history: &[arcnp::neural::EpochMetrics]) -> Result<()> {
    use arcnp::eval::format_sig;
    let mut s = String::from("epoch,train_loss,val_loglik,val_objective\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch,
            format_sig(h.train_loss),
            format_sig(h.val_loglik),
            format_sig(h.val_objective)
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn run(cfg: &Config, phase: &mut Phase) -> Result<Outcome> {
    let root = RngStream::new(get(cfg, "seed")?);
    match cfg.experiment() {
        "eq-kl" => eq_kl(cfg, &root, phase),
        "sawtooth-loglik" => sawtooth_loglik(cfg, &root, phase),
        "mixture-prop1" => mixture_prop1(cfg, &root, phase),
        "smooth-samples" => smooth_samples(cfg, &root, phase),
        "predprey" => predprey(cfg, &root, phase),
        "auxar" => auxar(cfg, &root, phase),
        "ordering-spread" => ordering_spread(cfg, &root, phase),
        other => Err(Error::InvalidArgument(format!("unknown experiment {other}"))),
    }
}

/// Phases listed by `describe`.
pub fn plan(cfg: &Config) -> Vec<String> {
    let model = cfg.raw("model");
    let model_step = match model {
        "train-fresh" => "train a deep-set CNP (Adam, best validation lower bound kept) and save model.json".to_string(),
        "load-checkpoint" => format!("load the CNP checkpoint {}", cfg.raw("checkpoint")),
        _ => "use the closed-form ideal CNP".to_string(),
    };
    let mut steps = vec![];
    match cfg.experiment() {
        "eq-kl" => {
            steps.push(format!("generate {} EQ GP tasks", cfg.raw("eval_tasks")));
            steps.push(model_step);
            steps.push("exact KL to the GP posterior for the exact, diagonal-GP, trivial and non-AR model predictives".into());
            steps.push(format!("Monte Carlo KL ({} draws per task) for the AR model", cfg.raw("mc_samples")));
        }
        "sawtooth-loglik" => {
            steps.push(format!("generate {} sawtooth tasks ({})", cfg.raw("eval_tasks"), cfg.raw("sawtooth_variant")));
            steps.push(model_step);
            steps.push("normalized log-likelihood: trivial baselines (context and target moments), non-AR and AR".into());
        }
        "mixture-prop1" => {
            steps.push(format!("draw {} context sets from the three-function mixture", cfg.raw("eval_tasks")));
            steps.push(format!("Monte Carlo KL ({} truth draws) to the AR ideal CNP and the ideal GNP", cfg.raw("mc_samples")));
            steps.push("report the difference with combined standard errors".into());
        }
        "smooth-samples" => {
            steps.push(model_step);
            steps.push(format!(
                "for grid sizes {}: AR-sample the grid, denoise at {} query points, compare with a latent draw ({} seeds)",
                cfg.raw("grid_sizes"),
                cfg.raw("query_points"),
                cfg.raw("eval_tasks")
            ));
        }
        "predprey" => {
            steps.push(format!("simulate Lotka-Volterra trajectories (step {})", cfg.raw("lv_step")));
            steps.push(model_step);
            steps.push(format!("evaluate {} tasks per split ({})", cfg.raw("eval_tasks"), cfg.raw("splits")));
        }
        "auxar" => {
            steps.push(format!("generate {} {} tasks", cfg.raw("eval_tasks"), cfg.raw("process")));
            steps.push(model_step);
            steps.push(format!(
                "marginal log-likelihood without and with {} auxiliary rollouts of length {}",
                cfg.raw("aux_trajectories"),
                cfg.raw("aux_length")
            ));
        }
        "ordering-spread" => {
            steps.push(model_step);
            steps.push(format!(
                "for context sizes {}: spread of the AR log-likelihood over {} orderings on {} {} tasks",
                cfg.raw("context_sizes"),
                cfg.raw("n_orderings"),
                cfg.raw("eval_tasks"),
                cfg.raw("process")
            ));
        }
        _ => {}
    }
    steps.push("write metrics.csv, metrics.json, samples.jsonl and manifest.json".into());
    steps
}

fn eq_kl(cfg: &Config, root: &RngStream, phase: &mut Phase) -> Result<Outcome> {
    const EXP: &str = "eq-kl";
    *phase = Phase::Generate;
    let gp = gp_from(cfg)?;
    let spec = task_spec(cfg)?;
    let process = Process::Gp(gp);
    let tasks = draw_tasks(get(cfg, "eval_tasks")?, &mut root.fork(EVAL_STREAM), |r| process.sample_task(&spec, r))?;
    let sampler = move |r: &mut RngStream| process.sample_task(&spec, r);
    let built = build_model(cfg, Some(Box::new(IdealCnpGp(gp))), CnpConfig::default(), &sampler, root, phase)?;
    let model = built.adapter.as_ref();

    *phase = Phase::Evaluate;
    let mut reports = vec![
        eval_kl_to_truth(EXP, "exact", &gp, |t| gp.posterior(&t.context, &t.target_x()), &tasks),
        eval_kl_to_truth(EXP, "diagonal-gp", &gp, |t| diagonal_gp(&gp, t), &tasks),
        eval_kl_to_truth(
            EXP,
            "trivial",
            &gp,
            |t| Ok(GaussianJoint::from_marginals(&trivial_baseline().predict(&t.context, &t.targets)?)),
            &tasks,
        ),
        eval_kl_to_truth(
            EXP,
            &built.name,
            &gp,
            |t| Ok(GaussianJoint::from_marginals(&model.predict(&t.context, &t.targets)?)),
            &tasks,
        ),
    ];
    let base = root.fork(ORDER_STREAM);
    reports.push(eval_kl_to_truth_mc(
        EXP,
        &format!("ar-{}", built.name),
        &gp,
        |t, y| ar_logpdf(model, &t.context, &t.targets, y, &ordering_for(cfg, &base, tasks.iter().position(|u| std::ptr::eq(u, t)).unwrap_or(0))),
        &tasks,
        get(cfg, "mc_samples")?,
        root.fork(EVAL_STREAM).fork(1).next_u64(),
    ));

    *phase = Phase::Sample;
    let samples = rollout_samples(&format!("ar-{}", built.name), model, &tasks, cfg, root)?;
    Ok(Outcome { reports, samples })
}

fn sawtooth_loglik(cfg: &Config, root: &RngStream, phase: &mut Phase) -> Result<Outcome> {
    const EXP: &str = "sawtooth-loglik";
    *phase = Phase::Generate;
    let variant = match cfg.raw("sawtooth_variant") {
        "standard" => SawtoothVariant::Standard,
        "auxiliary" => SawtoothVariant::Auxiliary,
        other => return Err(config_error("sawtooth_variant", format!("unknown variant `{other}` (standard, auxiliary)"))),
    };
    let spec = task_spec(cfg)?;
    let process = Process::Sawtooth(variant);
    let tasks = draw_tasks(get(cfg, "eval_tasks")?, &mut root.fork(EVAL_STREAM), |r| process.sample_task(&spec, r))?;
    let cnp = CnpConfig {
        max_context: Some(spec.context_size.1),
        ..CnpConfig::default()
    };
    let sampler = move |r: &mut RngStream| process.sample_task(&spec, r);
    let built = build_model(cfg, None, cnp, &sampler, root, phase)?;
    let model = built.adapter.as_ref();

    *phase = Phase::Evaluate;
    let reports = vec![
        eval_loglik(EXP, "trivial", marginal_density(&trivial_baseline()), &tasks),
        eval_loglik(EXP, "trivial-data", trivial_data_density(), &tasks),
        eval_loglik(EXP, &built.name, marginal_density(model), &tasks),
        ar_loglik_report(EXP, &format!("ar-{}", built.name), model, &tasks, cfg, &root.fork(ORDER_STREAM)),
    ];
    *phase = Phase::Sample;
    let samples = rollout_samples(&format!("ar-{}", built.name), model, &tasks, cfg, root)?;
    Ok(Outcome { reports, samples })
}

fn mixture_prop1(cfg: &Config, root: &RngStream, phase: &mut Phase) -> Result<Outcome> {
    const EXP: &str = "mixture-prop1";
    *phase = Phase::Generate;
    let mix = FunctionMixture::illustration();
    let targets: Vec<f64> = list(cfg, "targets")?;
    if targets.is_empty() {
        return Err(config_error("targets", "need at least one target input"));
    }
    let (cmin, cmax): (usize, usize) = (get(cfg, "context_min")?, get(cfg, "context_max")?);
    let n_contexts: usize = get(cfg, "eval_tasks")?;
    let n_samples: usize = get(cfg, "mc_samples")?;
    if n_samples < 2 {
        return Err(config_error("mc_samples", "need at least two Monte Carlo draws"));
    }
    let (lo, hi) = (
        targets.iter().copied().fold(f64::INFINITY, f64::min),
        targets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let mut ctx_rng = root.fork(EVAL_STREAM);
    let contexts: Vec<Vec<Point>> = (0..n_contexts)
        .map(|_| {
            let n = ctx_rng.int_range(cmin, cmax);
            let xs: Vec<f64> = (0..n).map(|_| ctx_rng.uniform_range(lo, hi)).collect();
            let ys = mix.sample(&[], &xs, &mut ctx_rng);
            xs.iter().zip(ys).map(|(&x, y)| Point::new(x, y)).collect()
        })
        .collect();
    let target_inputs = inputs(&targets);
    let adapter = IdealCnpMixture(mix);
    let ordering = match cfg.raw("ordering") {
        "left-to-right" => Some(Ordering::LeftToRight),
        _ => None,
    };

    *phase = Phase::Evaluate;
    let base = root.fork(SAMPLE_STREAM);
    let n_t = targets.len() as f64;
    let per: Vec<Result<(McEstimate, McEstimate, McEstimate)>> = (0..n_contexts)
        .into_par_iter()
        .map(|i| {
            let ctx = &contexts[i];
            let mut rng = base.fork(i as u64);
            let gnp = mix.ideal_gnp(ctx, &targets)?;
            let ord = ordering.clone().unwrap_or_else(|| Ordering::random(&mut rng));
            let (mut ar, mut g, mut d) = (Vec::with_capacity(n_samples), Vec::with_capacity(n_samples), Vec::with_capacity(n_samples));
            for _ in 0..n_samples {
                let y = mix.sample(ctx, &targets, &mut rng);
                let lp = mix.true_logpdf(ctx, &targets, &y)?;
                let lq_ar = ar_logpdf(&adapter, ctx, &target_inputs, &y, &ord)?;
                let lq_g = gaussian_logpdf(&DVector::from_column_slice(&y), &gnp)?;
                ar.push((lp - lq_ar) / n_t);
                g.push((lp - lq_g) / n_t);
                d.push((lq_g - lq_ar) / n_t);
            }
            Ok((McEstimate::from_samples(&ar), McEstimate::from_samples(&g), McEstimate::from_samples(&d)))
        })
        .collect();
    let mut ok = Vec::new();
    for r in per {
        ok.push(r?);
    }
    let mut kl_ar = MetricReport::from_results(EXP, "ar-ideal-cnp", "kl", ok.iter().map(|e| Ok(e.0.estimate)).collect());
    kl_ar.per_task_se = Some(ok.iter().map(|e| e.0.std_error).collect());
    let mut kl_g = MetricReport::from_results(EXP, "ideal-gnp", "kl", ok.iter().map(|e| Ok(e.1.estimate)).collect());
    kl_g.per_task_se = Some(ok.iter().map(|e| e.1.std_error).collect());
    let mut diff = MetricReport::from_results(EXP, "ar-minus-gnp", "kl-diff", ok.iter().map(|e| Ok(e.0.estimate - e.1.estimate)).collect());
    diff.per_task_se = Some(ok.iter().map(|e| (e.0.std_error.powi(2) + e.1.std_error.powi(2)).sqrt()).collect());
    let mut paired = MetricReport::from_results(EXP, "ar-minus-gnp-paired", "kl-diff", ok.iter().map(|e| Ok(e.2.estimate)).collect());
    paired.per_task_se = Some(ok.iter().map(|e| e.2.std_error).collect());

    *phase = Phase::Sample;
    let n_draws: usize = get(cfg, "num_samples")?;
    let mut rng = root.fork(SAMPLE_STREAM).fork(u64::MAX);
    let mut samples = Vec::new();
    let empty: &[Point] = &[];
    for k in 0..n_draws {
        let truth = mix.sample(empty, &targets, &mut rng);
        let ar = ar_sample(&adapter, empty, &target_inputs, &Ordering::LeftToRight, 1, &mut rng)?.values_in_target_order();
        let cnp = ar_sample(&adapter, empty, &target_inputs, &Ordering::LeftToRight, targets.len(), &mut rng)?.values_in_target_order();
        samples.push(json!({"sample": k, "x": targets, "truth": truth, "ar_ideal_cnp": ar, "ideal_cnp": cnp}));
    }
    Ok(Outcome {
        reports: vec![kl_ar, kl_g, diff, paired],
        samples,
    })
}

fn evenly_spaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn smooth_samples(cfg: &Config, root: &RngStream, phase: &mut Phase) -> Result<Outcome> {
    const EXP: &str = "smooth-samples";
    *phase = Phase::Generate;
    let gp = gp_from(cfg)?;
    let ctx_spec = TaskSpec::new(get(cfg, "context_min")?, get(cfg, "context_max")?, 0);
    let sizes: Vec<usize> = list(cfg, "grid_sizes")?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(config_error("grid_sizes", "need positive grid sizes"));
    }
    let query = inputs(&evenly_spaced(get(cfg, "query_points")?, -2.0, 2.0));
    let n_seeds: usize = get(cfg, "eval_tasks")?;
    let process = Process::Gp(gp);
    let sampler = move |r: &mut RngStream| process.sample_task(&TaskSpec::new(0, 30, 50), r);
    let built = build_model(cfg, Some(Box::new(IdealCnpGp(gp))), CnpConfig::default(), &sampler, root, phase)?;
    let model = built.adapter.as_ref();

    *phase = Phase::Evaluate;
    let base = root.fork(EVAL_STREAM);
    let query_x: Vec<f64> = query.iter().map(|q| q.x).collect();
    let mut reports = Vec::new();
    let mut samples = Vec::new();
    let n_keep: usize = get(cfg, "num_samples")?;
    for &n in &sizes {
        let grid = inputs(&evenly_spaced(n, -2.0, 2.0));
        let runs: Vec<Result<(f64, Value)>> = (0..n_seeds)
            .into_par_iter()
            .map(|s| {
                let mut rng = base.fork(s as u64);
                let context = sample_gp_task(&gp, &ctx_spec, &mut rng)?.context;
                let smooth = smooth_sample(model, &context, &grid, &query, &mut rng)?;
                let mut cond = context.clone();
                cond.extend(smooth.trajectory.points.iter().copied());
                let f = gp.latent_posterior(&cond, &query_x)?.sample(&mut rng)?;
                let mse = smooth.denoised.iter().zip(f.iter()).map(|(d, f)| (d - f).powi(2)).sum::<f64>() / query.len() as f64;
                let record = json!({
                    "grid_size": n,
                    "seed": s,
                    "context": points_json(&context),
                    "trajectory": points_json(&smooth.trajectory.points),
                    "query_x": query_x,
                    "denoised": smooth.denoised,
                    "latent": f.as_slice(),
                });
                Ok((mse, record))
            })
            .collect();
        let mut mses = Vec::with_capacity(runs.len());
        for (s, r) in runs.into_iter().enumerate() {
            match r {
                Ok((mse, record)) => {
                    if s < n_keep {
                        samples.push(record);
                    }
                    mses.push(Ok(mse));
                }
                Err(e) => mses.push(Err(e)),
            }
        }
        reports.push(MetricReport::from_results(EXP, &format!("{}-n{n}", built.name), "mse", mses));
    }
    Ok(Outcome { reports, samples })
}

/// Times are shifted and scaled so that the recorded window maps to `[-2, 2]`.
fn predprey_cnp_config(grid: &LvGrid) -> CnpConfig {
    CnpConfig {
        channels: 2,
        transform: OutputTransform::Log1p,
        input_shift: 0.5 * (grid.discard_before + grid.end),
        input_scale: 0.25 * (grid.end - grid.discard_before),
        ..CnpConfig::default()
    }
}

fn predprey(cfg: &Config, root: &RngStream, phase: &mut Phase) -> Result<Outcome> {
    const EXP: &str = "predprey";
    *phase = Phase::Generate;
    let grid = LvGrid {
        step: get(cfg, "lv_step")?,
        ..LvGrid::default()
    };
    let splits: Vec<PredPreySplit> = cfg
        .raw("splits")
        .split(',')
        .map(|s| match s.trim() {
            "interpolation" => Ok(PredPreySplit::Interpolation),
            "forecasting" => Ok(PredPreySplit::Forecasting),
            "reconstruction" => Ok(PredPreySplit::Reconstruction),
            other => Err(config_error("splits", format!("unknown split `{other}`"))),
        })
        .collect::<Result<_>>()?;
    let simulate = move |split: Option<PredPreySplit>, rng: &mut RngStream| -> Result<Task> {
        let params = LotkaVolterraParams::sample(rng);
        let traj = simulate_lotka_volterra(&params, &grid, rng)?;
        let split = split.unwrap_or_else(|| PredPreySplit::random(rng));
        sample_predprey_task(&traj, split, rng)
    };
    let n_eval: usize = get(cfg, "eval_tasks")?;
    let eval_sets: Vec<(PredPreySplit, Vec<Task>)> = splits
        .iter()
        .enumerate()
        .map(|(k, &split)| {
            let mut rng = root.fork(EVAL_STREAM).fork(k as u64);
            Ok((split, draw_tasks(n_eval, &mut rng, |r| simulate(Some(split), r))?))
        })
        .collect::<Result<_>>()?;
    let sampler = move |r: &mut RngStream| simulate(None, r);
    let built = build_model(cfg, None, predprey_cnp_config(&grid), &sampler, root, phase)?;
    let model = built.adapter.as_ref();

    *phase = Phase::Evaluate;
    let mut reports = Vec::new();
    for (k, (split, tasks)) in eval_sets.iter().enumerate() {
        let exp = format!("{EXP}-{}", split.name());
        reports.push(eval_loglik(&exp, "trivial", marginal_density(&trivial_baseline()), tasks));
        reports.push(eval_loglik(&exp, "trivial-data", trivial_data_density(), tasks));
        reports.push(eval_loglik(&exp, &built.name, marginal_density(model), tasks));
        reports.push(ar_loglik_report(&exp, &format!("ar-{}", built.name), model, tasks, cfg, &root.fork(ORDER_STREAM).fork(k as u64)));
    }
    *phase = Phase::Sample;
    let first = eval_sets.first().map(|(_, t)| t.as_slice()).unwrap_or(&[]);
    let samples = rollout_samples(&format!("ar-{}", built.name), model, first, cfg, root)?;
    Ok(Outcome { reports, samples })
}

fn auxar(cfg: &Config, root: &RngStream, phase: &mut Phase) -> Result<Outcome> {
    const EXP: &str = "auxar";
    *phase = Phase::Generate;
    let process = parse_process(cfg.raw("process")).map_err(|m| config_error("process", m))?;
    let spec = task_spec(cfg)?;
    let tasks = draw_tasks(get(cfg, "eval_tasks")?, &mut root.fork(EVAL_STREAM), |r| process.sample_task(&spec, r))?;
    let oracle = oracle_for(&process);
    let sampler = {
        let process = process.clone();
        move |r: &mut RngStream| process.sample_task(&spec, r)
    };
    let built = build_model(cfg, oracle, CnpConfig::default(), &sampler, root, phase)?;
    let model = built.adapter.as_ref();
    let aux = UniformInputs::new(get(cfg, "aux_lo")?, get(cfg, "aux_hi")?);
    let (r, m): (usize, usize) = (get(cfg, "aux_length")?, get(cfg, "aux_trajectories")?);

    *phase = Phase::Evaluate;
    let base = root.fork(ORDER_STREAM);
    let pairs: Vec<Result<(f64, f64)>> = (0..tasks.len())
        .into_par_iter()
        .map(|i| {
            let t = &tasks[i];
            let ys = t.target_outputs()?;
            let n = ys.len() as f64;
            let plain = marginal_logpdf(model, &t.context, &t.targets, ys)? / n;
            let mixes = aux_ar_predict_many(model, &t.context, &t.targets, &aux, r, m, &mut base.fork(i as u64))?;
            let mut total = 0.0;
            for (mix, &y) in mixes.iter().zip(ys) {
                total += mix.logpdf(y)?;
            }
            Ok((plain, total / n))
        })
        .collect();
    let plain = MetricReport::from_results(EXP, &built.name, "loglik", pairs.iter().map(|p| p.as_ref().map(|v| v.0).map_err(clone_err)).collect());
    let aux_report = MetricReport::from_results(
        EXP,
        &format!("auxar-{}", built.name),
        "loglik",
        pairs.iter().map(|p| p.as_ref().map(|v| v.1).map_err(clone_err)).collect(),
    );
    let diff = MetricReport::from_results(
        EXP,
        "auxar-minus-plain",
        "loglik-diff",
        pairs.iter().map(|p| p.as_ref().map(|v| v.1 - v.0).map_err(clone_err)).collect(),
    );

    *phase = Phase::Sample;
    let n_keep: usize = get(cfg, "num_samples")?;
    let mut samples = Vec::new();
    for (i, t) in tasks.iter().take(n_keep).enumerate() {
        let mixes = aux_ar_predict_many(model, &t.context, &t.targets, &aux, r, m, &mut base.fork(i as u64))?;
        samples.push(json!({
            "task": i,
            "context": points_json(&t.context),
            "target_x": t.target_x(),
            "target_y": t.target_y,
            "mixtures": mixes,
        }));
    }
    Ok(Outcome {
        reports: vec![plain, aux_report, diff],
        samples,
    })
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

fn ordering_spread(cfg: &Config, root: &RngStream, phase: &mut Phase) -> Result<Outcome> {
    const EXP: &str = "ordering-spread";
    *phase = Phase::Generate;
    let process = parse_process(cfg.raw("process")).map_err(|m| config_error("process", m))?;
    let sizes: Vec<usize> = list(cfg, "context_sizes")?;
    let n_targets: usize = get(cfg, "num_targets")?;
    let n_orderings: usize = get(cfg, "n_orderings")?;
    let n_tasks: usize = get(cfg, "eval_tasks")?;
    let oracle = oracle_for(&process);
    let sampler = {
        let process = process.clone();
        let spec = TaskSpec::new(0, 30, n_targets);
        move |r: &mut RngStream| process.sample_task(&spec, r)
    };
    let built = build_model(cfg, oracle, CnpConfig::default(), &sampler, root, phase)?;
    let model = built.adapter.as_ref();

    *phase = Phase::Evaluate;
    let mut reports = Vec::new();
    let mut samples = Vec::new();
    for (k, &c) in sizes.iter().enumerate() {
        let spec = TaskSpec::fixed(c, n_targets, (-2.0, 2.0));
        let tasks = draw_tasks(n_tasks, &mut root.fork(EVAL_STREAM).fork(k as u64), |r| process.sample_task(&spec, r))?;
        let base = root.fork(ORDER_STREAM).fork(k as u64);
        let spreads: Vec<Result<arcnp::ar::Spread>> = (0..tasks.len())
            .into_par_iter()
            .map(|i| ar_loglik_spread(model, &tasks[i], n_orderings, &mut base.fork(i as u64)))
            .collect();
        let per_point = n_targets.max(1) as f64;
        let stds = spreads.iter().map(|s| s.as_ref().map(|s| s.std / per_point).map_err(clone_err)).collect();
        let means = spreads.iter().map(|s| s.as_ref().map(|s| s.mean / per_point).map_err(clone_err)).collect();
        reports.push(MetricReport::from_results(EXP, &format!("ar-{}-c{c}", built.name), "ordering-std", stds));
        reports.push(MetricReport::from_results(EXP, &format!("ar-{}-c{c}", built.name), "loglik", means));
        if let Some(Ok(s)) = spreads.first() {
            samples.push(json!({"context_size": c, "task": 0, "mean": s.mean, "std": s.std}));
        }
    }
    let (mean_std, _) = mean_ci95(&reports.iter().filter(|r| r.metric == "ordering-std").map(|r| r.mean).collect::<Vec<_>>());
    log::info!("mean ordering spread across context sizes: {mean_std}");
    Ok(Outcome { reports, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing() {
        assert_eq!(evenly_spaced(3, -2.0, 2.0), vec![-2.0, 0.0, 2.0]);
        assert_eq!(evenly_spaced(1, -2.0, 2.0), vec![0.0]);
    }

    #[test]
    fn process_names() {
        for name in ["eq", "matern", "weakly-periodic", "sawtooth", "sawtooth-aux", "mixture", "function-mixture", "audio"] {
            assert_eq!(parse_process(name).unwrap().name(), name);
        }
        assert!(parse_process("nope").is_err());
    }

    #[test]
    fn input_window_maps_to_unit_range() {
        let c = predprey_cnp_config(&LvGrid::default());
        assert_eq!(((0.0 - c.input_shift) / c.input_scale, (100.0 - c.input_shift) / c.input_scale), (-2.0, 2.0));
    }
}
