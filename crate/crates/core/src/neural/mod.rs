//! Deep-set CNP, Adam and the training loop.

mod adam;
mod checkpoint;
mod cnp;
mod mlp;
mod train;

pub use adam::{adam_step, Adam};
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use cnp::{cnp_forward, nll_loss, CnpConfig, CnpModel, EmptyEncoding};
pub use mlp::{Activation, Mlp, MlpConfig};
pub use train::{lower_confidence_bound, train, validation_logliks, EpochMetrics, TaskSampler, TrainConfig, TrainOutcome};
