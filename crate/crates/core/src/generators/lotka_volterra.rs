//! Stochastic Lotka-Volterra simulator (Euler-Maruyama).

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Populations never drop below this floor.
pub const POPULATION_FLOOR: f64 = 1e-6;

/// Form of the predator drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PredatorDrift {
    /// `dY = (−γ Y + δ X Y) dt + …`
    #[default]
    Classical,
    /// `dY = (−γ X + δ X Y) dt + …`, taken literally from the published form.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LotkaVolterraParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub sigma: f64,
    pub nu: f64,
    pub eta: f64,
    pub prey0: f64,
    pub predator0: f64,
    pub drift: PredatorDrift,
}

impl LotkaVolterraParams {
    /// Draw from the standard parameter distributions; `ν` fixed to 1/6.
    pub fn sample(rng: &mut RngStream) -> Self {
        Self {
            prey0: rng.uniform_range(5.0, 100.0),
            predator0: rng.uniform_range(5.0, 100.0),
            alpha: rng.uniform_range(0.2, 0.8),
            beta: rng.uniform_range(0.04, 0.08),
            gamma: rng.uniform_range(0.8, 1.2),
            delta: rng.uniform_range(0.04, 0.08),
            nu: 1.0 / 6.0,
            sigma: rng.uniform_range(0.5, 10.0),
            eta: rng.uniform_range(1.0, 5.0),
            drift: PredatorDrift::Classical,
        }
    }

    /// Midpoint of every sampling interval.
    pub fn midpoint() -> Self {
        Self {
            prey0: 52.5,
            predator0: 52.5,
            alpha: 0.5,
            beta: 0.06,
            gamma: 1.0,
            delta: 0.06,
            nu: 1.0 / 6.0,
            sigma: 5.25,
            eta: 3.0,
            drift: PredatorDrift::Classical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.delta,
            self.nu,
            self.eta,
            self.prey0,
            self.predator0,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) || !(self.sigma >= 0.0) || self.eta <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid Lotka-Volterra parameters {self:?}")));
        }
        Ok(())
    }

    /// Deterministic drift `(dX/dt, dY/dt)`.
    pub fn drift(&self, prey: f64, predator: f64) -> (f64, f64) {
        let dx = self.alpha * prey - self.beta * predator * prey;
        let dy = match self.drift {
            PredatorDrift::Classical => -self.gamma * predator + self.delta * predator * prey,
            PredatorDrift::Literal => -self.gamma * prey + self.delta * predator * prey,
        };
        (dx, dy)
    }
}

/// Simulation grid. Records every `output_interval` years from `discard_before` on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LvGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
    pub output_interval: f64,
    pub discard_before: f64,
}

impl Default for LvGrid {
    fn default() -> Self {
        Self {
            start: -10.0,
            end: 100.0,
            step: 2.5e-4,
            output_interval: 0.1,
            discard_before: 0.0,
        }
    }
}

impl LvGrid {
    fn stride(&self) -> usize {
        ((self.output_interval / self.step).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LvTrajectory {
    pub times: Vec<f64>,
    pub prey: Vec<f64>,
    pub predator: Vec<f64>,
}

impl LvTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Euler-Maruyama integration with a population floor; output scaled by `η`.
pub fn simulate_lotka_volterra(params: &LotkaVolterraParams, grid: &LvGrid, rng: &mut RngStream) -> Result<LvTrajectory> {
    params.validate()?;
    if !(grid.step > 0.0) || !(grid.end > grid.start) {
        return Err(Error::InvalidArgument(format!("invalid grid {grid:?}")));
    }
    let n_steps = ((grid.end - grid.start) / grid.step).round() as usize;
    let stride = grid.stride();
    let sqrt_dt = grid.step.sqrt();
    let mut prey = params.prey0.max(POPULATION_FLOOR);
    let mut predator = params.predator0.max(POPULATION_FLOOR);
    let mut out = LvTrajectory::default();
    let record = |out: &mut LvTrajectory, step: usize, prey: f64, predator: f64| {
        let t = grid.start + step as f64 * grid.step;
        if step.is_multiple_of(stride) && t >= grid.discard_before - 1e-9 {
            out.times.push(t);
            out.prey.push(params.eta * prey);
            out.predator.push(params.eta * predator);
        }
    };
    record(&mut out, 0, prey, predator);
    for step in 1..=n_steps {
        let (dx, dy) = params.drift(prey, predator);
        let (z1, z2) = if params.sigma > 0.0 {
            (rng.standard_normal(), rng.standard_normal())
        } else {
            (0.0, 0.0)
        };
        prey += dx * grid.step + params.sigma * prey.powf(params.nu) * sqrt_dt * z1;
        predator += dy * grid.step + params.sigma * predator.powf(params.nu) * sqrt_dt * z2;
        if !prey.is_finite() || !predator.is_finite() {
            return Err(Error::NonFiniteState {
                step,
                params: format!("{params:?}"),
            });
        }
        prey = prey.max(POPULATION_FLOOR);
        predator = predator.max(POPULATION_FLOOR);
        record(&mut out, step, prey, predator);
    }
    Ok(out)
}
