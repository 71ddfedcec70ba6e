//! Objective, optimisation, memory synchronisation and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod momentum;
pub mod optimizer;
pub mod trainer;

pub use checkpoint::{Checkpoint, Manifest};
pub use config::TrainConfig;
pub use loss::{batch_gradients, batch_loss, case_loss, compute_loss, BatchGradients, LossParts, LossWeights};
pub use momentum::{momentum_update, warmup_init};
pub use optimizer::Adam;
pub use trainer::{train, EpochRecord, NoObserver, StepEvent, StepObserver, TrainOptions, TrainOutcome};
