//! Image-method room impulse responses and FFT convolution.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use super::scene::{dist, RoomScene};
use super::SPEED_OF_SOUND;
use crate::dsp::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Half-width of the fractional-delay interpolator; 81 taps total.
const HALF_TAPS: isize = 40;
const WINDOW_STEP: f64 = PI / 40.5;

/// Place one impulse of height `amp` at a fractional sample `delay` using
/// an 81-tap Hann-windowed sinc. Exposed so independent enumeration oracles
/// can share the interpolator.
pub fn place_impulse(h: &mut [f64], delay: f64, amp: f64) {
    let center = delay.round();
    let phi = delay - center;
    let center = center as isize;
    let len = h.len() as isize;
    if center + HALF_TAPS < 0 || center - HALF_TAPS >= len {
        return;
    }
    let sin_pi_phi = (PI * phi).sin();
    // Hann window evaluated by rotation: theta(o) = (o - phi) * pi / 40.5.
    let theta0 = WINDOW_STEP * (-(HALF_TAPS as f64) - phi);
    let (mut wsin, mut wcos) = theta0.sin_cos();
    let (dsin, dcos) = WINDOW_STEP.sin_cos();
    let mut sign = 1.0; // (-1)^o starting at o = -40
    for o in -HALF_TAPS..=HALF_TAPS {
        let n = center + o;
        if n >= 0 && n < len {
            let t = o as f64 - phi;
            let sinc = if t.abs() < 1e-9 {
                1.0
            } else {
                // sin(pi t) for t = o - phi collapses to +/- sin(pi phi).
                -sign * sin_pi_phi / (PI * t)
            };
            let w = 0.5 * (1.0 + wcos);
            h[n as usize] += amp * sinc * w;
        }
        let (nc, ns) = (wcos * dcos - wsin * dsin, wsin * dcos + wcos * dsin);
        wcos = nc;
        wsin = ns;
        sign = -sign;
    }
}

fn rir_impl(
    scene: &RoomScene,
    src: (f64, f64, f64),
    mic: (f64, f64, f64),
    length: usize,
    max_order: Option<usize>,
) -> Result<AudioClip> {
    if length == 0 {
        return Err(Error::InvalidInput("RIR length must be positive".into()));
    }
    if !scene.contains(src) || !scene.contains(mic) {
        return Err(Error::InvalidInput(
            "source and microphone must lie inside the room".into(),
        ));
    }
    let fs = DEFAULT_SAMPLE_RATE as f64;
    let cts = SPEED_OF_SOUND / fs; // meters per sample
    let (lx, ly, lz) = scene.dims;
    let beta = scene.reflection;

    // Images beyond this distance cannot contribute inside `length`.
    let max_dist = (length as isize + HALF_TAPS + 1) as f64 * cts;
    let n1 = (max_dist / (2.0 * lx)).ceil() as i64 + 1;
    let n2 = (max_dist / (2.0 * ly)).ceil() as i64 + 1;
    let n3 = (max_dist / (2.0 * lz)).ceil() as i64 + 1;

    let mut h = vec![0.0; length];
    for mx in -n1..=n1 {
        for my in -n2..=n2 {
            for mz in -n3..=n3 {
                for q in 0..=1i64 {
                    for j in 0..=1i64 {
                        for k in 0..=1i64 {
                            let n_reflections = ((mx - q).abs()
                                + mx.abs()
                                + (my - j).abs()
                                + my.abs()
                                + (mz - k).abs()
                                + mz.abs()) as usize;
                            if let Some(order) = max_order {
                                if n_reflections > order {
                                    continue;
                                }
                            }
                            let img = (
                                (1 - 2 * q) as f64 * src.0 + 2.0 * mx as f64 * lx,
                                (1 - 2 * j) as f64 * src.1 + 2.0 * my as f64 * ly,
                                (1 - 2 * k) as f64 * src.2 + 2.0 * mz as f64 * lz,
                            );
                            let d = dist(img, mic);
                            if d < 1e-9 || d > max_dist {
                                continue;
                            }
                            let amp = beta.powi(n_reflections as i32) / (4.0 * PI * d);
                            place_impulse(&mut h, d / cts, amp);
                        }
                    }
                }
            }
        }
    }
    AudioClip::new(h, DEFAULT_SAMPLE_RATE)
}

/// Image-method RIR between a source and a microphone, summing every image
/// whose delay falls inside `length` samples. Each image contributes
/// `beta^reflections / (4 pi d)` at delay `d / c`, placed with an 81-tap
/// Hann-windowed sinc.
pub fn image_method_rir(
    scene: &RoomScene,
    src: (f64, f64, f64),
    mic: (f64, f64, f64),
    length: usize,
) -> Result<AudioClip> {
    rir_impl(scene, src, mic, length, None)
}

/// [`image_method_rir`] restricted to images with at most `max_order` wall
/// reflections.
pub fn image_method_rir_truncated(
    scene: &RoomScene,
    src: (f64, f64, f64),
    mic: (f64, f64, f64),
    length: usize,
    max_order: usize,
) -> Result<AudioClip> {
    rir_impl(scene, src, mic, length, Some(max_order))
}

/// Full linear convolution trimmed to the length of `clip`, computed in the
/// frequency domain. Matches direct convolution to rounding error.
pub fn convolve(clip: &AudioClip, rir: &AudioClip) -> Result<AudioClip> {
    if clip.is_empty() || rir.is_empty() {
        return Err(Error::InvalidInput("convolve requires non-empty inputs".into()));
    }
    if clip.sample_rate != rir.sample_rate {
        return Err(Error::InvalidInput(format!(
            "sample rate mismatch: {} vs {}",
            clip.sample_rate, rir.sample_rate
        )));
    }
    let n = clip.len() + rir.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut a = vec![Complex64::default(); size];
    let mut b = vec![Complex64::default(); size];
    for (dst, s) in a.iter_mut().zip(&clip.samples) {
        dst.re = *s;
    }
    for (dst, s) in b.iter_mut().zip(&rir.samples) {
        dst.re = *s;
    }
    fft.process(&mut a);
    fft.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    ifft.process(&mut a);
    let scale = 1.0 / size as f64;
    let out: Vec<f64> = a[..clip.len()].iter().map(|c| c.re * scale).collect();
    AudioClip::new(out, clip.sample_rate)
}
