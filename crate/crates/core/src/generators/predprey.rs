//! Predator-prey tasks cut from a simulated trajectory.

use crate::data::{Point, Task};
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::LvTrajectory;

pub const PREY: u8 = 0;
pub const PREDATOR: u8 = 1;

/// How a retained set of observations is divided into context and targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredPreySplit {
    /// Random partition; between 1 and half of the points become targets.
    Interpolation,
    /// Everything before a random time is context, everything after is target.
    Forecasting,
    /// One series is split as in forecasting, the other is appended to the context.
    Reconstruction,
}

impl PredPreySplit {
    pub const ALL: [PredPreySplit; 3] = [Self::Interpolation, Self::Forecasting, Self::Reconstruction];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Interpolation => "interpolation",
            Self::Forecasting => "forecasting",
            Self::Reconstruction => "reconstruction",
        }
    }

    pub fn random(rng: &mut RngStream) -> Self {
        Self::ALL[rng.int_range(0, 2)]
    }
}

const RETAIN_MIN: usize = 150;
const RETAIN_MAX: usize = 250;
const MAX_RESAMPLES: usize = 1000;

fn retain(traj: &LvTrajectory, rng: &mut RngStream) -> Vec<Point> {
    let mut points = Vec::new();
    for (channel, series) in [(PREY, &traj.prey), (PREDATOR, &traj.predator)] {
        let k = rng.int_range(RETAIN_MIN, RETAIN_MAX).min(traj.len());
        for i in rng.subset(traj.len(), k) {
            points.push(Point::with_channel(traj.times[i], series[i], channel));
        }
    }
    points
}

fn into_task(context: Vec<Point>, targets: Vec<Point>) -> Result<Task> {
    Task::new(
        context,
        targets.iter().map(Point::input).collect(),
        Some(targets.iter().map(|p| p.y).collect()),
    )
}

/// Sample 150-250 observation times per series (independently) and split them.
pub fn sample_predprey_task(traj: &LvTrajectory, split: PredPreySplit, rng: &mut RngStream) -> Result<Task> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument("trajectory too short".into()));
    }
    let points = retain(traj, rng);
    let (t0, t1) = (traj.times[0], *traj.times.last().unwrap());
    match split {
        PredPreySplit::Interpolation => {
            let n = points.len();
            let n_targets = rng.int_range(1, (n / 2).max(1));
            let perm = rng.permutation(n);
            let mut is_target = vec![false; n];
            for &i in &perm[..n_targets] {
                is_target[i] = true;
            }
            let mut context = Vec::with_capacity(n - n_targets);
            let mut targets = Vec::with_capacity(n_targets);
            for (p, t) in points.into_iter().zip(is_target) {
                if t {
                    targets.push(p);
                } else {
                    context.push(p);
                }
            }
            into_task(context, targets)
        }
        PredPreySplit::Forecasting => {
            for _ in 0..MAX_RESAMPLES {
                let cut = rng.uniform_range(t0, t1);
                let (context, targets): (Vec<Point>, Vec<Point>) = points.iter().partition(|p| p.x < cut);
                if !targets.is_empty() {
                    return into_task(context, targets);
                }
            }
            Err(Error::InvalidArgument("no feasible forecasting split".into()))
        }
        PredPreySplit::Reconstruction => {
            for _ in 0..MAX_RESAMPLES {
                let channel = if rng.bernoulli(0.5) { PREY } else { PREDATOR };
                let cut = rng.uniform_range(t0, t1);
                let (targets, context): (Vec<Point>, Vec<Point>) =
                    points.iter().partition(|p| p.channel == channel && p.x >= cut);
                if !targets.is_empty() {
                    return into_task(context, targets);
                }
            }
            Err(Error::InvalidArgument("no feasible reconstruction split".into()))
        }
    }
}
