//! Task samplers for every data process.

mod lotka_volterra;
mod predprey;
mod synthetic;

pub use lotka_volterra::{simulate_lotka_volterra, LotkaVolterraParams, LvGrid, LvTrajectory, PredatorDrift};
pub use predprey::{sample_predprey_task, PredPreySplit};
pub use synthetic::{
    sample_audio_task, sample_function_mixture_task, sample_gp_task, sample_mixture_task, sample_sawtooth_task,
    AudioParams, Process, SawtoothParams, SawtoothVariant,
};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Context-size distribution (uniform over an inclusive range), target count
/// and input range of a synthetic task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpec {
    pub context_size: (usize, usize),
    pub num_targets: usize,
    pub input_range: (f64, f64),
}

impl TaskSpec {
    /// Inputs on `[-2, 2]`.
    pub fn new(min_context: usize, max_context: usize, num_targets: usize) -> Self {
        Self {
            context_size: (min_context, max_context),
            num_targets,
            input_range: (-2.0, 2.0),
        }
    }

    pub fn fixed(num_context: usize, num_targets: usize, input_range: (f64, f64)) -> Self {
        Self {
            context_size: (num_context, num_context),
            num_targets,
            input_range,
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.input_range = (lo, hi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.input_range;
        if self.context_size.0 > self.context_size.1 {
            return Err(Error::InvalidArgument(format!("bad context size range {:?}", self.context_size)));
        }
        // a degenerate range (lo == hi) pins every input to one location
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad input range {:?}", self.input_range)));
        }
        Ok(())
    }

    pub fn sample_context_size(&self, rng: &mut RngStream) -> usize {
        rng.int_range(self.context_size.0, self.context_size.1)
    }
}
