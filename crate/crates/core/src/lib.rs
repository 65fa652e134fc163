//! Conditional neural processes deployed autoregressively, together with the
//! closed-form ideal predictors they are measured against.
//!
//! Layout:
//! - [`data`], [`rng`], [`gaussian`]: shared types and Gaussian math.
//! - [`gp`], [`mixture`]: exact posteriors and ideal CNP/GNP oracles.
//! - [`generators`]: synthetic task samplers and the stochastic Lotka-Volterra simulator.
//! - [`neural`]: a deep-set CNP with hand-written backpropagation, Adam and the trainer.
//! - [`ar`]: autoregressive rollouts, chain-rule densities, smooth samples and AuxAR.
//! - [`eval`]: normalized log-likelihood / KL reports and baselines.

pub mod ar;
pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod generators;
pub mod gp;
pub mod mixture;
pub mod neural;
pub mod rng;

pub use data::{Input, MarginalPrediction, Point, Task};
pub use error::{Error, Result};
pub use gaussian::GaussianJoint;
pub use rng::RngStream;
