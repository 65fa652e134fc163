//! Autoregressive deployment of marginal predictors.

mod adapter;
mod aux;
mod engine;
mod transform;

pub use adapter::{Conditioner, IdealCnpGp, IdealCnpMixture, ModelAdapter, TrivialBaseline};
pub use aux::{aux_ar_predict, aux_ar_predict_many, MixtureMarginal, UniformInputs};
pub use engine::{ar_logpdf, ar_loglik_spread, ar_sample, marginal_logpdf, smooth_sample, Ordering, SmoothSample, Spread, Trajectory};
pub use transform::OutputTransform;
