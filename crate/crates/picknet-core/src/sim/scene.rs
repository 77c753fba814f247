//! Room geometry sampling and the reverberation-time/reflection relation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin kept between any sampled position and a wall, m.
const WALL_MARGIN: f64 = 0.1;
/// Give up after this many rejected geometry draws.
const MAX_REJECTIONS: usize = 10_000;

/// A sampled shoebox room with one speaker and M microphones. Microphone 0
/// is the near-field device by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomScene {
    /// Interior extents in meters: (depth, width, height).
    pub dims: (f64, f64, f64),
    /// Uniform reflection coefficient of all six surfaces.
    pub reflection: f64,
    /// Target reverberation time the reflection coefficient was derived
    /// from, s.
    pub t60: f64,
    pub speaker_pos: (f64, f64, f64),
    pub mic_pos: Vec<(f64, f64, f64)>,
}

impl RoomScene {
    pub fn contains(&self, p: (f64, f64, f64)) -> bool {
        p.0 > 0.0 && p.0 < self.dims.0 && p.1 > 0.0 && p.1 < self.dims.1 && p.2 > 0.0
            && p.2 < self.dims.2
    }

    /// Check every geometric range this generator promises.
    pub fn validate(&self) -> Result<()> {
        let (d, w, h) = self.dims;
        let ok_dims = (5.0..=16.0).contains(&d)
            && (5.0..=16.0).contains(&w)
            && (2.5..=4.5).contains(&h);
        if !ok_dims {
            return Err(Error::InvalidInput(format!("room dims out of range: {:?}", self.dims)));
        }
        if !(0.0..1.0).contains(&self.reflection) {
            return Err(Error::InvalidInput("reflection must be in [0,1)".into()));
        }
        if !(0.2..=0.6).contains(&self.t60) {
            return Err(Error::InvalidInput(format!("t60 out of range: {}", self.t60)));
        }
        if !self.contains(self.speaker_pos) || self.mic_pos.iter().any(|&m| !self.contains(m)) {
            return Err(Error::InvalidInput("positions must lie inside the room".into()));
        }
        if self.mic_pos.len() < 2 {
            return Err(Error::InvalidInput("scene needs at least two microphones".into()));
        }
        let near = self.mic_pos[0];
        let hd = horizontal_dist(self.speaker_pos, near);
        if !(0.30..=0.70).contains(&hd) {
            return Err(Error::InvalidInput(format!(
                "speaker-to-near-mic horizontal distance {hd} outside [0.30, 0.70]"
            )));
        }
        let vd = (self.speaker_pos.2 - near.2).abs();
        if !(0.10..=0.30).contains(&vd) {
            return Err(Error::InvalidInput(format!(
                "speaker-to-near-mic vertical offset {vd} outside [0.10, 0.30]"
            )));
        }
        let dd = dist(self.mic_pos[0], self.mic_pos[1]);
        if !(1.0..=4.0).contains(&dd) {
            return Err(Error::InvalidInput(format!(
                "microphone spacing {dd} outside [1, 4]"
            )));
        }
        Ok(())
    }
}

pub(crate) fn dist(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt()
}

fn horizontal_dist(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Invert Eyring's formula T60 = 0.161 V / (-S ln(1 - alpha)) with uniform
/// surface absorption alpha = 1 - beta^2. Returns the reflection
/// coefficient beta = exp(-0.161 V / (2 S T60)).
pub fn t60_to_reflection(t60: f64, dims: (f64, f64, f64)) -> Result<f64> {
    let (d, w, h) = dims;
    if !(t60 > 0.0) || !t60.is_finite() {
        return Err(Error::OutOfRange(format!("t60 must be positive, got {t60}")));
    }
    if d <= 0.0 || w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidInput(format!("non-positive room dims {dims:?}")));
    }
    let volume = d * w * h;
    let surface = 2.0 * (d * w + d * h + w * h);
    let beta = (-0.161 * volume / (2.0 * surface * t60)).exp();
    // Eyring keeps alpha = 1 - beta^2 strictly below 1 for any t60 > 0;
    // tiny t60 values degrade gracefully toward beta = 0.
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::OutOfRange(format!(
            "no physical reflection coefficient for t60 = {t60} in {dims:?}"
        )));
    }
    Ok(beta)
}

/// Draw a two-microphone scene from the generator's distributions:
/// depth/width U[5,16] m, height U[2.5,4.5] m, T60 U[0.2,0.6] s, near mic
/// 0.30-0.70 m horizontal and 0.10-0.30 m vertical from the speaker, far
/// mic 1-4 m from the near mic. Rejection-samples until all placement
/// constraints hold.
pub fn sample_room(seed: u64) -> Result<RoomScene> {
    sample_room_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// [`sample_room`] drawing from a caller-owned RNG stream.
pub fn sample_room_with<R: Rng>(rng: &mut R) -> Result<RoomScene> {
    let depth = rng.gen_range(5.0..16.0);
    let width = rng.gen_range(5.0..16.0);
    let height = rng.gen_range(2.5..4.5);
    let t60 = rng.gen_range(0.2..0.6);
    let dims = (depth, width, height);
    let reflection = t60_to_reflection(t60, dims)?;

    let inside = |p: (f64, f64, f64)| {
        p.0 > WALL_MARGIN
            && p.0 < depth - WALL_MARGIN
            && p.1 > WALL_MARGIN
            && p.1 < width - WALL_MARGIN
            && p.2 > WALL_MARGIN
            && p.2 < height - WALL_MARGIN
    };

    for _ in 0..MAX_REJECTIONS {
        let speaker = (
            rng.gen_range(WALL_MARGIN..depth - WALL_MARGIN),
            rng.gen_range(WALL_MARGIN..width - WALL_MARGIN),
            rng.gen_range(WALL_MARGIN..height - WALL_MARGIN),
        );
        // Near microphone: horizontal ring around the speaker plus a signed
        // vertical offset.
        let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
        let radius = rng.gen_range(0.30..0.70);
        let dz = rng.gen_range(0.10..0.30) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let near = (
            speaker.0 + radius * azimuth.cos(),
            speaker.1 + radius * azimuth.sin(),
            speaker.2 + dz,
        );
        if !inside(near) {
            continue;
        }
        // Far microphone: uniform direction from the near mic.
        let z = rng.gen_range(-1.0..1.0f64);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = rng.gen_range(1.0..4.0);
        let horiz = (1.0 - z * z).sqrt();
        let far = (
            near.0 + r * horiz * phi.cos(),
            near.1 + r * horiz * phi.sin(),
            near.2 + r * z,
        );
        if !inside(far) {
            continue;
        }
        let scene = RoomScene {
            dims,
            reflection,
            t60,
            speaker_pos: speaker,
            mic_pos: vec![near, far],
        };
        debug_assert!(scene.validate().is_ok());
        return Ok(scene);
    }
    Err(Error::SamplingFailure(format!(
        "no valid geometry in {MAX_REJECTIONS} draws for dims {dims:?}"
    )))
}
