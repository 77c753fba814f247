//! Real-time channel selection for ad hoc microphone arrays.
//!
//! Several independent recording devices (phones, laptops) capture the same
//! conversation. For every 16 ms frame, a small convolutional network with
//! cross-channel layers estimates which device is closest to the active
//! speaker, and the enhanced output is the posterior-weighted sum of the
//! per-device STFT coefficients. The crate covers the whole desk-scale loop:
//!
//! * [`dsp`] — STFT analysis/synthesis, amplitude and log-mel features,
//!   causal mean normalization, context stacking, WAV I/O.
//! * [`model`] — a small tensor engine and the channel-selection network
//!   (shared-parameter convolution stacks with cross-channel mean-pooling
//!   layers), with analytic forward and backward passes and a portable
//!   checkpoint format.
//! * [`sim`] — image-method room simulation for generating near/far
//!   microphone training pairs with Hoth-shaped noise and transient events.
//! * [`train`] — frame-level training with an amplitude-reconstruction loss,
//!   Adam/SGD optimizers and finite-difference gradient verification.
//! * [`stream`] — the streaming pipeline: correlation-based multi-device
//!   synchronization, subsampled model evaluation, posterior-weighted
//!   enhancement, overlap-add synthesis and device diarization.
//! * [`eval`] — closest-microphone accuracy metrics against simulated
//!   ground truth.

pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod sim;
pub mod stream;
pub mod train;

pub use error::{Error, Result};
