//! Frame-level training on simulated samples with the amplitude-
//! reconstruction loss: the posterior-weighted mix of per-channel clean
//! amplitude spectra is driven toward the near microphone's amplitude
//! spectrum, which makes silent frames cost nothing and needs no frame
//! labels beyond the simulation's near/far construction.

mod dataset;
mod gradcheck;
mod loss;
mod optim;
mod run;

pub use dataset::{Dataset, FrameExample};
pub use gradcheck::gradient_check;
pub use loss::frame_loss;
pub use optim::{Optimizer, OptimizerKind};
pub use run::{train, train_step, StepLog, TrainConfig};
