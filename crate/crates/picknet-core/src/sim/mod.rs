//! Training-data simulation: sampled shoebox rooms, image-method impulse
//! responses, reverberant near/far microphone pairs, Hoth-shaped ambient
//! noise at a target SNR, and single-channel transient injection.
//!
//! Everything is a pure function of its inputs and a seed; independent
//! samples can be generated fully in parallel.

mod dataset;
mod noise;
mod rir;
mod scene;
mod speech;

pub use dataset::{
    make_training_sample, read_manifest, simulate_dataset, write_manifest, SampleRecord,
    SimulateOptions, TrainingSample,
};
pub use noise::{
    hoth_noise, hoth_noise_with_table, inject_transient, mix_at_snr, TransientInfo, HOTH_TABLE,
};
pub use rir::{convolve, image_method_rir, image_method_rir_truncated, place_impulse};
pub use scene::{sample_room, sample_room_with, t60_to_reflection, RoomScene};
pub use speech::{builtin_transients, synthetic_speech};

/// Speed of sound used throughout, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
