//! Maximum-likelihood training with Adam and confidence-bound model selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::adam::Adam;
use super::cnp::CnpModel;

/// Something that can draw a fresh training task.
pub trait TaskSampler: Sync {
    fn sample(&self, rng: &mut RngStream) -> Result<Task>;
}

impl<F> TaskSampler for F
where
    F: Fn(&mut RngStream) -> Result<Task> + Sync,
{
    fn sample(&self, rng: &mut RngStream) -> Result<Task> {
        self(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub tasks_per_epoch: usize,
    pub epochs: usize,
    pub validation_tasks: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 16,
            tasks_per_epoch: 1 << 10,
            epochs: 100,
            validation_tasks: 1 << 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.tasks_per_epoch == 0 || self.validation_tasks < 2 {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean normalized NLL over the epoch's training batches.
    pub train_loss: f64,
    /// Mean normalized log-likelihood on the validation set.
    pub val_loglik: f64,
    /// `mean − 1.96·std/√n` of the validation log-likelihoods.
    pub val_objective: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation objective.
    pub model: CnpModel,
    pub history: Vec<EpochMetrics>,
    /// 0 means the initial parameters were never beaten.
    pub best_epoch: usize,
    pub best_objective: f64,
    /// Set when training stopped on a non-finite loss.
    pub aborted: Option<String>,
}

/// Per-task normalized log-likelihoods, computed in parallel, in task order.
pub fn validation_logliks(model: &CnpModel, tasks: &[Task]) -> Result<Vec<f64>> {
    tasks
        .par_iter()
        .map(|t| {
            let task = model.config().transform.apply_task(t)?;
            let pred = model.predict(&task.context, &task.targets)?;
            Ok(pred.logpdf(task.target_outputs()?)? / task.num_targets() as f64)
        })
        .collect()
}

/// Lower 95% confidence bound of the mean.
pub fn lower_confidence_bound(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    mean - 1.96 * var.sqrt() / n.sqrt()
}

/// Gradient of the batch objective: per-task gradients in parallel, summed in task order.
fn batch_gradient(model: &CnpModel, batch: &[Task]) -> Result<(f64, Vec<f64>)> {
    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch.par_iter().map(|t| model.task_loss_and_grad(t, weight)).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (i, part) in parts.into_iter().enumerate() {
        let (l, g) = part?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { task: i });
        }
        loss += l * weight;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((loss, grad))
}

pub fn train(mut model: CnpModel, sampler: &dyn TaskSampler, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let root = RngStream::new(config.seed);
    let mut val_rng = root.fork(0);
    let validation: Vec<Task> = (0..config.validation_tasks)
        .map(|_| sampler.sample(&mut val_rng))
        .collect::<Result<_>>()?;
    let mut train_rng = root.fork(1);

    let mut best_model = model.clone();
    let mut best_objective = lower_confidence_bound(&validation_logliks(&model, &validation)?);
    if !best_objective.is_finite() {
        best_objective = f64::NEG_INFINITY;
    }
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut opt = Adam::new(model.num_params());
    let batches = config.tasks_per_epoch.div_ceil(config.batch_size);

    for epoch in 1..=config.epochs {
        let mut epoch_loss = 0.0;
        for b in 0..batches {
            let size = config.batch_size.min(config.tasks_per_epoch - b * config.batch_size);
            let batch: Vec<Task> = (0..size)
                .map(|_| sampler.sample(&mut train_rng))
                .collect::<Result<_>>()?;
            let (loss, grad) = match batch_gradient(&model, &batch) {
                Ok(v) => v,
                Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteActivation { .. })) => {
                    log::warn!("aborting training in epoch {epoch}: {e}");
                    return Ok(TrainOutcome {
                        model: best_model,
                        history,
                        best_epoch,
                        best_objective,
                        aborted: Some(format!("epoch {epoch}, batch {b}: {e}")),
                    });
                }
                Err(e) => return Err(e),
            };
            opt.step(model.params_mut(), &grad, config.learning_rate);
            epoch_loss += loss * size as f64;
        }
        let logliks = validation_logliks(&model, &validation)?;
        let val_loglik = logliks.iter().sum::<f64>() / logliks.len() as f64;
        let val_objective = lower_confidence_bound(&logliks);
        history.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / config.tasks_per_epoch as f64,
            val_loglik,
            val_objective,
        });
        log::info!("epoch {epoch}: train {:.4} val {val_loglik:.4} ({val_objective:.4})", epoch_loss / config.tasks_per_epoch as f64);
        if val_objective > best_objective {
            best_objective = val_objective;
            best_epoch = epoch;
            best_model = model.clone();
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        best_objective,
        aborted: None,
    })
}
