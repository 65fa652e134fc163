//! Deep-set conditional neural process.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ar::OutputTransform;
use crate::data::{Input, MarginalPrediction, Point, Task};
use crate::error::{Error, Result};
use crate::gaussian::LN_2PI;
use crate::rng::RngStream;

use super::mlp::{Activation, Mlp, MlpConfig};

/// Encoding used for an empty context set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyEncoding {
    #[default]
    Zeros,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnpConfig {
    /// Encoding dimension `K`.
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Number of output series; more than one adds a one-hot channel input.
    pub channels: usize,
    pub variance_floor: f64,
    /// Inputs are fed to the networks as `(x − shift) / scale`.
    pub input_shift: f64,
    pub input_scale: f64,
    pub empty_encoding: EmptyEncoding,
    pub transform: OutputTransform,
    /// Largest context size seen in training, if declared.
    pub max_context: Option<usize>,
}

impl Default for CnpConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            encoder_hidden: vec![64; 3],
            decoder_hidden: vec![64; 4],
            channels: 1,
            variance_floor: 1e-6,
            input_shift: 0.0,
            input_scale: 1.0,
            empty_encoding: EmptyEncoding::Zeros,
            transform: OutputTransform::Identity,
            max_context: None,
        }
    }
}

impl CnpConfig {
    /// Every hidden layer and the encoding share one width.
    pub fn uniform_width(width: usize) -> Self {
        Self {
            latent_dim: width,
            encoder_hidden: vec![width; 3],
            decoder_hidden: vec![width; 4],
            ..Self::default()
        }
    }

    fn channel_inputs(&self) -> usize {
        if self.channels > 1 {
            self.channels
        } else {
            0
        }
    }

    pub fn encoder_config(&self) -> MlpConfig {
        MlpConfig {
            input: 2 + self.channel_inputs(),
            hidden: self.encoder_hidden.clone(),
            output: self.latent_dim,
            activation: Activation::Relu,
        }
    }

    pub fn decoder_config(&self) -> MlpConfig {
        MlpConfig {
            input: self.latent_dim + 1 + self.channel_inputs(),
            hidden: self.decoder_hidden.clone(),
            output: 2,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        self.decoder_config().validate()?;
        if !(self.variance_floor > 0.0) || !(self.input_scale > 0.0) || self.channels == 0 {
            return Err(Error::InvalidArgument(format!("invalid CNP config {self:?}")));
        }
        Ok(())
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Encoder MLP → mean pool → decoder MLP producing `(mean, floor + softplus(raw))`.
#[derive(Clone, Debug, PartialEq)]
pub struct CnpModel {
    config: CnpConfig,
    params: Vec<f64>,
    encoder: Mlp,
    decoder: Mlp,
    empty_offset: Option<usize>,
}

struct Forward {
    encoder_acts: Vec<DMatrix<f64>>,
    decoder_acts: Vec<DMatrix<f64>>,
}

impl CnpModel {
    pub fn new(config: CnpConfig, rng: &mut RngStream) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let (enc, dec) = (model.encoder.clone(), model.decoder.clone());
        enc.init(&mut model.params, || rng.uniform());
        dec.init(&mut model.params, || rng.uniform());
        Ok(model)
    }

    fn zeroed(config: CnpConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Mlp::new(&config.encoder_config(), 0);
        let decoder = Mlp::new(&config.decoder_config(), encoder.num_params());
        let mut total = encoder.num_params() + decoder.num_params();
        let empty_offset = match config.empty_encoding {
            EmptyEncoding::Zeros => None,
            EmptyEncoding::Learned => {
                let at = total;
                total += config.latent_dim;
                Some(at)
            }
        };
        Ok(Self {
            config,
            params: vec![0.0; total],
            encoder,
            decoder,
            empty_offset,
        })
    }

    pub fn from_params(config: CnpConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        if params.len() != model.params.len() {
            return Err(Error::DimensionMismatch {
                expected: model.params.len(),
                got: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &CnpConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut CnpConfig {
        &mut self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Named tensors `(name, shape, offset)` in parameter order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out: Vec<_> = self
            .encoder
            .tensors()
            .into_iter()
            .map(|(n, s, o)| (format!("encoder.{n}"), s, o))
            .collect();
        out.extend(self.decoder.tensors().into_iter().map(|(n, s, o)| (format!("decoder.{n}"), s, o)));
        if let Some(at) = self.empty_offset {
            out.push(("empty_encoding".into(), vec![self.config.latent_dim], at));
        }
        out
    }

    fn scale(&self, x: f64) -> f64 {
        (x - self.config.input_shift) / self.config.input_scale
    }

    fn one_hot(&self, row: &mut [f64], channel: u8) {
        if self.config.channels > 1 {
            let c = (channel as usize).min(self.config.channels - 1);
            row[c] = 1.0;
        }
    }

    fn encoder_input(&self, context: &[Point]) -> DMatrix<f64> {
        let d = self.config.encoder_config().input;
        let mut m = DMatrix::zeros(context.len(), d);
        let mut row = vec![0.0; d];
        for (i, p) in context.iter().enumerate() {
            row.fill(0.0);
            row[0] = self.scale(p.x);
            row[1] = p.y;
            self.one_hot(&mut row[2..], p.channel);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    fn decoder_input(&self, encoding: &DVector<f64>, targets: &[Input]) -> DMatrix<f64> {
        let k = self.config.latent_dim;
        let d = self.config.decoder_config().input;
        let mut m = DMatrix::zeros(targets.len(), d);
        let mut extra = vec![0.0; d - k - 1];
        for (i, t) in targets.iter().enumerate() {
            for j in 0..k {
                m[(i, j)] = encoding[j];
            }
            m[(i, k)] = self.scale(t.x);
            extra.fill(0.0);
            self.one_hot(&mut extra, t.channel);
            for (j, v) in extra.iter().enumerate() {
                m[(i, k + 1 + j)] = *v;
            }
        }
        m
    }

    pub fn empty_encoding(&self) -> DVector<f64> {
        match self.empty_offset {
            None => DVector::zeros(self.config.latent_dim),
            Some(at) => DVector::from_column_slice(&self.params[at..at + self.config.latent_dim]),
        }
    }

    /// Per-point encodings, one row per context point.
    pub fn encode(&self, context: &[Point]) -> Result<DMatrix<f64>> {
        Ok(self
            .encoder
            .forward(&self.params, self.encoder_input(context), 0)?
            .pop()
            .unwrap())
    }

    /// Mean of encoding rows, summed in row order.
    pub fn pool(&self, encodings: &DMatrix<f64>) -> DVector<f64> {
        if encodings.nrows() == 0 {
            return self.empty_encoding();
        }
        let mut sum = DVector::zeros(encodings.ncols());
        for row in encodings.row_iter() {
            sum += row.transpose();
        }
        sum / encodings.nrows() as f64
    }

    fn decode_raw(&self, encoding: &DVector<f64>, targets: &[Input]) -> Result<Vec<DMatrix<f64>>> {
        self.decoder
            .forward(&self.params, self.decoder_input(encoding, targets), self.encoder.num_layers())
    }

    fn marginals(&self, out: &DMatrix<f64>) -> Result<MarginalPrediction> {
        let means = out.column(0).iter().copied().collect();
        let variances = out
            .column(1)
            .iter()
            .map(|&z| self.config.variance_floor + softplus(z))
            .collect();
        MarginalPrediction::new(means, variances)
    }

    /// Predict marginals at `targets` from a pooled encoding.
    pub fn decode(&self, encoding: &DVector<f64>, targets: &[Input]) -> Result<MarginalPrediction> {
        if targets.is_empty() {
            return Ok(MarginalPrediction {
                means: vec![],
                variances: vec![],
            });
        }
        let acts = self.decode_raw(encoding, targets)?;
        self.marginals(acts.last().unwrap())
    }

    /// Independent Gaussian marginals given the context (outputs in model space).
    pub fn predict(&self, context: &[Point], targets: &[Input]) -> Result<MarginalPrediction> {
        let encoding = self.pool(&self.encode(context)?);
        self.decode(&encoding, targets)
    }

    fn forward_cached(&self, context: &[Point], targets: &[Input]) -> Result<Forward> {
        let encoder_acts = if context.is_empty() {
            Vec::new()
        } else {
            self.encoder.forward(&self.params, self.encoder_input(context), 0)?
        };
        let encoding = match encoder_acts.last() {
            Some(e) => self.pool(e),
            None => self.empty_encoding(),
        };
        let decoder_acts = self.decode_raw(&encoding, targets)?;
        Ok(Forward {
            encoder_acts,
            decoder_acts,
        })
    }

    /// Normalized negative log-likelihood of one task (model space) and its
    /// gradient, accumulated into `grad` with weight `weight`.
    fn task_loss(&self, task: &Task, weight: f64, grad: &mut [f64]) -> Result<f64> {
        let ys = task.target_outputs()?;
        let n = ys.len();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot score a task without targets".into()));
        }
        let fwd = self.forward_cached(&task.context, &task.targets)?;
        let out = fwd.decoder_acts.last().unwrap();
        let mut loss = 0.0;
        let mut d_out = DMatrix::zeros(n, 2);
        for (j, &y) in ys.iter().enumerate() {
            let mean = out[(j, 0)];
            let raw = out[(j, 1)];
            let var = self.config.variance_floor + softplus(raw);
            let r = y - mean;
            loss += 0.5 * (LN_2PI + var.ln() + r * r / var);
            d_out[(j, 0)] = -r / var;
            d_out[(j, 1)] = (0.5 / var - 0.5 * r * r / (var * var)) * sigmoid(raw);
        }
        let scale = weight / n as f64;
        d_out *= scale;
        let d_in = self.decoder.backward(&self.params, &fwd.decoder_acts, d_out, grad);
        let k = self.config.latent_dim;
        // every target row shares the pooled encoding
        let d_encoding: DVector<f64> = d_in.columns(0, k).row_sum().transpose();
        match fwd.encoder_acts.last() {
            Some(enc) => {
                let rows = enc.nrows();
                let d_rows = DMatrix::from_fn(rows, k, |_, j| d_encoding[j] / rows as f64);
                self.encoder.backward(&self.params, &fwd.encoder_acts, d_rows, grad);
            }
            None => {
                if let Some(at) = self.empty_offset {
                    for j in 0..k {
                        grad[at + j] += d_encoding[j];
                    }
                }
            }
        }
        Ok(loss / n as f64)
    }

    /// Loss and gradient of one task with the output transform applied.
    pub fn task_loss_and_grad(&self, task: &Task, weight: f64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let task = self.config.transform.apply_task(task)?;
        let loss = self.task_loss(&task, weight, &mut grad)?;
        Ok((loss, grad))
    }
}

/// Mean over tasks of the per-target normalized negative log-likelihood, and
/// its gradient with respect to all parameters.
pub fn nll_loss(model: &CnpModel, tasks: &[Task]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    let mut total = 0.0;
    let weight = 1.0 / tasks.len() as f64;
    for (i, task) in tasks.iter().enumerate() {
        let task = model.config.transform.apply_task(task)?;
        let loss = model.task_loss(&task, weight, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { task: i });
        }
        total += loss * weight;
    }
    Ok((total, grad))
}

pub fn cnp_forward(model: &CnpModel, context: &[Point], targets: &[Input]) -> Result<MarginalPrediction> {
    model.predict(context, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::inputs;

    fn small(seed: u64) -> CnpModel {
        CnpModel::new(CnpConfig::uniform_width(8), &mut RngStream::new(seed)).unwrap()
    }

    fn random_task(rng: &mut RngStream, n_ctx: usize, n_tgt: usize) -> Task {
        let context = (0..n_ctx)
            .map(|_| Point::new(rng.uniform_range(-2.0, 2.0), rng.standard_normal()))
            .collect();
        let xs: Vec<f64> = (0..n_tgt).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let ys = (0..n_tgt).map(|_| rng.standard_normal()).collect();
        Task::new(context, inputs(&xs), Some(ys)).unwrap()
    }

    #[test]
    fn default_architecture_sizes() {
        let m = CnpModel::new(CnpConfig::default(), &mut RngStream::new(0)).unwrap();
        let enc = (2 * 64 + 64) + 2 * (64 * 64 + 64) + (64 * 64 + 64);
        let dec = (65 * 64 + 64) + 3 * (64 * 64 + 64) + (64 * 2 + 2);
        assert_eq!(m.num_params(), enc + dec);
    }

    #[test]
    fn permutation_invariant() {
        let m = small(1);
        let mut rng = RngStream::new(2);
        let task = random_task(&mut rng, 12, 5);
        let perm = rng.permutation(12);
        let shuffled: Vec<Point> = perm.iter().map(|&i| task.context[i]).collect();
        let a = m.predict(&task.context, &task.targets).unwrap();
        let b = m.predict(&shuffled, &task.targets).unwrap();
        for j in 0..5 {
            assert!((a.means[j] - b.means[j]).abs() < 1e-9);
            assert!((a.variances[j] - b.variances[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_context_is_finite() {
        let m = small(3);
        let p = m.predict(&[], &inputs(&[0.0, 1.0])).unwrap();
        assert!(p.means.iter().all(|v| v.is_finite()));
        assert!(p.variances.iter().all(|v| *v > 1e-6));
    }

    #[test]
    fn duplicate_point_reweights_pool() {
        let m = small(4);
        let a = Point::new(0.5, 1.0);
        let b = Point::new(-1.0, -0.3);
        let targets = inputs(&[0.2]);
        let with_dup = m.predict(&[a, a, b], &targets).unwrap();
        // by hand: pooled encoding = (2·e(a) + e(b)) / 3
        let e = m.encode(&[a, b]).unwrap();
        let pooled = (e.row(0).transpose() * 2.0 + e.row(1).transpose()) / 3.0;
        let by_hand = m.decode(&pooled, &targets).unwrap();
        assert!((with_dup.means[0] - by_hand.means[0]).abs() < 1e-12);
        assert!((with_dup.variances[0] - by_hand.variances[0]).abs() < 1e-12);
    }

    #[test]
    fn variance_floor_respected() {
        let mut cfg = CnpConfig::uniform_width(8);
        cfg.variance_floor = 1e-3;
        let m = CnpModel::new(cfg, &mut RngStream::new(5)).unwrap();
        let mut rng = RngStream::new(6);
        for _ in 0..100 {
            let n_ctx = rng.int_range(0, 5);
            let task = random_task(&mut rng, n_ctx, 10);
            let p = m.predict(&task.context, &task.targets).unwrap();
            assert!(p.variances.iter().all(|v| *v > 1e-3));
        }
    }

    #[test]
    fn exact_mean_gives_entropy_term() {
        // zero every weight; bias the mean head to the target value and set the raw variance
        let mut m = small(7);
        m.params_mut().fill(0.0);
        let dec = m.decoder.tensors();
        let (_, _, bias_at) = dec.last().unwrap().clone();
        m.params_mut()[bias_at] = 0.7;
        m.params_mut()[bias_at + 1] = 0.3;
        let task = Task::new(vec![], inputs(&[0.0, 1.0]), Some(vec![0.7, 0.7])).unwrap();
        let (loss, _) = nll_loss(&m, &[task]).unwrap();
        let v = 1e-6 + softplus(0.3);
        assert!((loss - 0.5 * (2.0 * std::f64::consts::PI * v).ln()).abs() < 1e-12);
    }

    #[test]
    fn normalization_by_target_count() {
        let mut m = small(8);
        m.params_mut().fill(0.0);
        let one = Task::new(vec![], inputs(&[0.0]), Some(vec![0.4])).unwrap();
        let two = Task::new(vec![], inputs(&[0.0, 0.0]), Some(vec![0.4, 0.4])).unwrap();
        let (a, _) = nll_loss(&m, &[one]).unwrap();
        let (b, _) = nll_loss(&m, &[two]).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn learned_empty_encoding_gets_gradient() {
        let mut cfg = CnpConfig::uniform_width(8);
        cfg.empty_encoding = EmptyEncoding::Learned;
        let m = CnpModel::new(cfg, &mut RngStream::new(9)).unwrap();
        let task = random_task(&mut RngStream::new(10), 0, 4);
        let (_, grad) = nll_loss(&m, &[task]).unwrap();
        let at = m.empty_offset.unwrap();
        assert!(grad[at..].iter().any(|g| *g != 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = small(11);
        let mut rng = RngStream::new(12);
        let tasks = vec![random_task(&mut rng, 6, 4), random_task(&mut rng, 0, 3)];
        let (_, grad) = nll_loss(&m, &tasks).unwrap();
        for i in 0..m.num_params() {
            let orig = m.params[i];
            m.params[i] = orig + 1e-6;
            let (up, _) = nll_loss(&m, &tasks).unwrap();
            m.params[i] = orig - 1e-6;
            let (down, _) = nll_loss(&m, &tasks).unwrap();
            m.params[i] = orig;
            let fd = (up - down) / 2e-6;
            assert!((fd - grad[i]).abs() <= 1e-4f64.max(1e-2 * grad[i].abs()), "param {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
