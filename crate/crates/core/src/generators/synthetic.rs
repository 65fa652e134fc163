//! Synthetic regression processes on scalar inputs.

use crate::data::{Input, Point, Task};
use crate::error::{Error, Result};
use crate::gaussian::cholesky_jittered;
use crate::gp::{GpModel, Kernel};
use crate::mixture::FunctionMixture;
use crate::rng::RngStream;
use nalgebra::DVector;

use super::TaskSpec;

/// Which sawtooth family to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SawtoothVariant {
    /// `y = (ω d x + φ) mod 1`, `ω ~ U[2, 4]`, `φ ~ U[0, 1]`.
    Standard,
    /// `y = (ω (d x − φ)) mod 1`, `ω ~ U[3, 5]`, `φ ~ U[1/ω, 1]`.
    Auxiliary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SawtoothParams {
    pub frequency: f64,
    pub direction: f64,
    pub phase: f64,
    pub variant: SawtoothVariant,
}

impl SawtoothParams {
    pub fn sample(variant: SawtoothVariant, rng: &mut RngStream) -> Self {
        let direction = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        let (frequency, phase) = match variant {
            SawtoothVariant::Standard => {
                let w = rng.uniform_range(2.0, 4.0);
                (w, rng.uniform())
            }
            SawtoothVariant::Auxiliary => {
                let w = rng.uniform_range(3.0, 5.0);
                (w, rng.uniform_range(1.0 / w, 1.0))
            }
        };
        Self {
            frequency,
            direction,
            phase,
            variant,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let raw = match self.variant {
            SawtoothVariant::Standard => self.frequency * self.direction * x + self.phase,
            SawtoothVariant::Auxiliary => self.frequency * (self.direction * x - self.phase),
        };
        let y = raw.rem_euclid(1.0);
        // rem_euclid can round up to exactly 1.0 for tiny negative inputs
        if y >= 1.0 {
            0.0
        } else {
            y
        }
    }
}

/// Periodic train of truncated, decaying two-tone bursts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AudioParams {
    pub omega1: f64,
    pub omega2: f64,
    pub period: f64,
    pub decay: f64,
    pub noise_variance: f64,
}

impl AudioParams {
    pub fn sample(rng: &mut RngStream) -> Self {
        Self {
            omega1: rng.uniform_range(50.0, 70.0),
            omega2: rng.uniform_range(50.0, 70.0),
            period: rng.uniform_range(0.75, 1.25),
            decay: rng.uniform_range(0.1, 0.3),
            noise_variance: 0.001,
        }
    }

    /// The burst `s(t)`, supported on `[0, T)`.
    pub fn burst(&self, t: f64) -> f64 {
        if (0.0..self.period).contains(&t) {
            (-t / self.decay).exp() * ((self.omega1 * t).sin() + (self.omega2 * t).sin())
        } else {
            0.0
        }
    }

    /// Comb convolved with the burst: exactly one shifted copy covers each `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = (x / self.period).floor();
        let mut t = x - k * self.period;
        if t >= self.period {
            t -= self.period;
        }
        self.burst(t.max(0.0))
    }
}

/// Processes that produce one scalar function per task.
#[derive(Clone, Debug, PartialEq)]
pub enum Process {
    Gp(GpModel),
    Sawtooth(SawtoothVariant),
    /// Equal-probability choice of EQ, Matérn-5/2, weakly periodic (all noisy) or sawtooth.
    SyntheticMixture,
    FunctionMixture(FunctionMixture),
    Audio,
}

impl Process {
    pub fn name(&self) -> &'static str {
        match self {
            Process::Gp(m) => match m.kernel {
                Kernel::Eq { .. } => "eq",
                Kernel::Matern52 { .. } => "matern",
                Kernel::WeaklyPeriodic { .. } => "weakly-periodic",
            },
            Process::Sawtooth(SawtoothVariant::Standard) => "sawtooth",
            Process::Sawtooth(SawtoothVariant::Auxiliary) => "sawtooth-aux",
            Process::SyntheticMixture => "mixture",
            Process::FunctionMixture(_) => "function-mixture",
            Process::Audio => "audio",
        }
    }

    /// Default sizes for the process: GPs use 50 targets, everything else 100.
    pub fn default_spec(&self) -> TaskSpec {
        match self {
            Process::Gp(_) => TaskSpec::new(0, 30, 50),
            _ => TaskSpec::new(0, 30, 100),
        }
    }

    pub fn sample_task(&self, spec: &TaskSpec, rng: &mut RngStream) -> Result<Task> {
        match self {
            Process::Gp(model) => sample_gp_task(model, spec, rng),
            Process::Sawtooth(variant) => sample_sawtooth_task(*variant, spec, rng),
            Process::SyntheticMixture => sample_mixture_task(spec, rng),
            Process::FunctionMixture(mix) => sample_function_mixture_task(mix, spec, rng),
            Process::Audio => sample_audio_task(spec, rng),
        }
    }
}

fn split(xs: &[f64], ys: &[f64], n_context: usize) -> Result<Task> {
    let context = xs[..n_context]
        .iter()
        .zip(&ys[..n_context])
        .map(|(&x, &y)| Point::new(x, y))
        .collect();
    let targets = xs[n_context..].iter().map(|&x| Input::new(x)).collect();
    Task::new(context, targets, Some(ys[n_context..].to_vec()))
}

fn draw_inputs(spec: &TaskSpec, rng: &mut RngStream) -> (usize, Vec<f64>) {
    let n_context = spec.sample_context_size(rng);
    let xs = (0..n_context + spec.num_targets)
        .map(|_| rng.uniform_range(spec.input_range.0, spec.input_range.1))
        .collect();
    (n_context, xs)
}

fn draw_from_gp(model: &GpModel, xs: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    let cov = model.prior(xs)?.covariance;
    let (chol, _) = cholesky_jittered(&cov)?;
    let z = DVector::from_fn(xs.len(), |_, _| rng.standard_normal());
    Ok((chol.l() * z).iter().copied().collect())
}

/// Uniform inputs on the task range; outputs are one joint draw of `f + ε`.
pub fn sample_gp_task(model: &GpModel, spec: &TaskSpec, rng: &mut RngStream) -> Result<Task> {
    spec.validate()?;
    let (n_context, xs) = draw_inputs(spec, rng);
    let ys = match draw_from_gp(model, &xs, rng) {
        Ok(ys) => ys,
        Err(Error::Factorization { .. }) => {
            let (_, xs2) = draw_inputs(&TaskSpec::fixed(n_context, spec.num_targets, spec.input_range), rng);
            let ys = draw_from_gp(model, &xs2, rng)?;
            return split(&xs2, &ys, n_context);
        }
        Err(e) => return Err(e),
    };
    split(&xs, &ys, n_context)
}

pub fn sample_sawtooth_task(variant: SawtoothVariant, spec: &TaskSpec, rng: &mut RngStream) -> Result<Task> {
    spec.validate()?;
    let params = SawtoothParams::sample(variant, rng);
    let (n_context, xs) = draw_inputs(spec, rng);
    let ys: Vec<f64> = xs.iter().map(|&x| params.eval(x)).collect();
    split(&xs, &ys, n_context)
}

pub fn sample_mixture_task(spec: &TaskSpec, rng: &mut RngStream) -> Result<Task> {
    match rng.int_range(0, 3) {
        0 => sample_gp_task(&GpModel { kernel: Kernel::eq(), noise_variance: 0.05 }, spec, rng),
        1 => sample_gp_task(&GpModel { kernel: Kernel::matern52(), noise_variance: 0.05 }, spec, rng),
        2 => sample_gp_task(&GpModel { kernel: Kernel::weakly_periodic(), noise_variance: 0.05 }, spec, rng),
        _ => sample_sawtooth_task(SawtoothVariant::Standard, spec, rng),
    }
}

/// One mixture component per task, plus that component's observation noise.
pub fn sample_function_mixture_task(mix: &FunctionMixture, spec: &TaskSpec, rng: &mut RngStream) -> Result<Task> {
    spec.validate()?;
    let component = rng.categorical(&mix.weights);
    let (n_context, xs) = draw_inputs(spec, rng);
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| rng.normal(mix.component_mean(component, x), mix.noise_variances[component]))
        .collect();
    split(&xs, &ys, n_context)
}

pub fn sample_audio_task(spec: &TaskSpec, rng: &mut RngStream) -> Result<Task> {
    spec.validate()?;
    let params = AudioParams::sample(rng);
    let (n_context, xs) = draw_inputs(spec, rng);
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| rng.normal(params.eval(x), params.noise_variance))
        .collect();
    split(&xs, &ys, n_context)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sawtooth_direct_evaluation() {
        let p = SawtoothParams {
            frequency: 2.0,
            direction: 1.0,
            phase: 0.0,
            variant: SawtoothVariant::Standard,
        };
        assert_abs_diff_eq!(p.eval(0.25), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(-0.25), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sawtooth_outputs_in_unit_interval() {
        let mut rng = RngStream::new(3);
        for variant in [SawtoothVariant::Standard, SawtoothVariant::Auxiliary] {
            for _ in 0..200 {
                let task = sample_sawtooth_task(variant, &TaskSpec::new(0, 30, 100), &mut rng).unwrap();
                let ys = task.target_y.iter().flatten().chain(task.context.iter().map(|p| &p.y));
                for &y in ys {
                    assert!((0.0..1.0).contains(&y), "{y}");
                }
            }
        }
    }

    #[test]
    fn sawtooth_parameter_ranges() {
        let mut rng = RngStream::new(4);
        for _ in 0..1000 {
            let s = SawtoothParams::sample(SawtoothVariant::Standard, &mut rng);
            assert!((2.0..4.0).contains(&s.frequency) && (0.0..1.0).contains(&s.phase));
            let a = SawtoothParams::sample(SawtoothVariant::Auxiliary, &mut rng);
            assert!((3.0..5.0).contains(&a.frequency));
            assert!(a.phase >= 1.0 / a.frequency && a.phase < 1.0);
            assert!(a.direction == 1.0 || a.direction == -1.0);
        }
    }

    /// Kolmogorov-Smirnov statistic of the marginal at a fixed x over random phase.
    #[test]
    fn sawtooth_marginal_is_uniform() {
        let mut rng = RngStream::new(99);
        let n = 10_000;
        let mut ys: Vec<f64> = (0..n)
            .map(|_| SawtoothParams::sample(SawtoothVariant::Standard, &mut rng).eval(0.7))
            .collect();
        ys.sort_by(f64::total_cmp);
        let d = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| ((i + 1) as f64 / n as f64 - y).max(y - i as f64 / n as f64))
            .fold(0.0, f64::max);
        // 1% critical value ≈ 1.628 / √n
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn gp_task_with_no_context() {
        let mut rng = RngStream::new(1);
        let task = sample_gp_task(&GpModel::eq_default(), &TaskSpec::new(0, 0, 50), &mut rng).unwrap();
        assert!(task.context.is_empty());
        assert_eq!(task.num_targets(), 50);
    }

    #[test]
    fn gp_prior_marginal_variance() {
        let spec = TaskSpec::fixed(0, 1, (0.0, 0.0));
        let mut rng = RngStream::new(12);
        let ys: Vec<f64> = (0..10_000)
            .map(|_| sample_gp_task(&GpModel::eq_default(), &spec, &mut rng).unwrap().target_y.unwrap()[0])
            .collect();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // SE of a sample variance of a Gaussian: σ²·√(2/(n−1))
        let se = 1.05 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - 1.05).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn synthetic_mixture_picks_uniformly() {
        let mut rng = RngStream::new(5);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[rng.int_range(0, 3)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() < 0.02);
        }
        // and the sampler itself draws from every branch
        let spec = TaskSpec::new(0, 5, 10);
        for _ in 0..50 {
            sample_mixture_task(&spec, &mut rng).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn degenerate_function_mixture() {
        let mix = FunctionMixture::new([1.0, 0.0, 0.0], [0.25, 0.0625, 0.25], 1.0).unwrap();
        let spec = TaskSpec::fixed(0, 1, (0.0, 0.0));
        let mut rng = RngStream::new(6);
        let ys: Vec<f64> = (0..10_000)
            .map(|_| sample_function_mixture_task(&mix, &spec, &mut rng).unwrap().target_y.unwrap()[0])
            .collect();
        let mean = ys.iter().sum::<f64>() / 1e4;
        assert!((mean - 1.0).abs() < 3.0 * (0.25f64 / 1e4).sqrt());
    }

    #[test]
    fn audio_burst_starts_at_zero_and_repeats() {
        let mut p = AudioParams {
            omega1: 60.0,
            omega2: 60.0,
            period: 1.0,
            decay: f64::INFINITY,
            noise_variance: 0.001,
        };
        assert_eq!(p.eval(0.0), 0.0);
        for i in 0..50 {
            let x = -2.0 + 0.037 * i as f64;
            assert_abs_diff_eq!(p.eval(x), p.eval(x + p.period), epsilon = 1e-9);
        }
        p.decay = 0.2;
        assert_abs_diff_eq!(p.eval(2.0), 0.0, epsilon = 1e-12);
        assert!(p.eval(0.5).abs() <= 2.0 * (-0.5f64 / 0.2).exp() + 1e-12);
    }

    #[test]
    fn audio_parameter_ranges() {
        let mut rng = RngStream::new(8);
        for _ in 0..100 {
            let p = AudioParams::sample(&mut rng);
            assert!((50.0..70.0).contains(&p.omega1) && (50.0..70.0).contains(&p.omega2));
            assert!((0.75..1.25).contains(&p.period) && (0.1..0.3).contains(&p.decay));
        }
    }
}
