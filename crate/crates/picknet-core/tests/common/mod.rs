//! Independent oracles shared by the integration suites. Everything here is
//! deliberately written as plain nested loops, separate from the library's
//! implementation paths.

#![allow(dead_code)]

use num_complex::Complex64;
use picknet_core::dsp::AudioClip;
use picknet_core::model::{LayerSpec, ModelCheckpoint, Tensor};
use picknet_core::sim::{place_impulse, RoomScene, SPEED_OF_SOUND};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// O(N^2) DFT of a windowed segment.
pub fn direct_dft(samples: &[f64]) -> Vec<Complex64> {
    let n = samples.len();
    (0..n / 2 + 1)
        .map(|k| {
            let mut acc = Complex64::default();
            for (i, &x) in samples.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                acc += x * Complex64::new(phase.cos(), phase.sin());
            }
            acc
        })
        .collect()
}

/// O(n*m) direct linear convolution, trimmed to `n`.
pub fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &hv) in h.iter().enumerate() {
            if j <= i {
                acc += x[i - j] * hv;
            }
        }
        *o = acc;
    }
    out
}

/// Six-nested-loop 3x3 convolution with zero padding, matching the
/// C_out x C_in x 3 x 3 kernel layout.
pub fn naive_conv3x3(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kernels: &[f64],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * h * w];
    for co in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for dy in 0..3usize {
                        for dx in 0..3usize {
                            let sy = y as isize + dy as isize - 1;
                            let sx = x as isize + dx as isize - 1;
                            if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let k = kernels[((co * c_in + ci) * 3 + dy) * 3 + dx];
                            acc += k * input[(ci * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(co * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Brute-force image enumeration over the full index cube up to
/// `max_order` reflections, sharing the library's interpolator.
pub fn brute_force_rir(
    scene: &RoomScene,
    src: (f64, f64, f64),
    mic: (f64, f64, f64),
    length: usize,
    max_order: usize,
) -> Vec<f64> {
    let fs = 16_000.0;
    let cts = SPEED_OF_SOUND / fs;
    let (lx, ly, lz) = scene.dims;
    let beta = scene.reflection;
    let bound = max_order as i64 + 1;
    let mut h = vec![0.0; length];
    for q in 0..=1i64 {
        for j in 0..=1i64 {
            for k in 0..=1i64 {
                for mx in -bound..=bound {
                    for my in -bound..=bound {
                        for mz in -bound..=bound {
                            let order = (mx - q).abs()
                                + mx.abs()
                                + (my - j).abs()
                                + my.abs()
                                + (mz - k).abs()
                                + mz.abs();
                            if order as usize > max_order {
                                continue;
                            }
                            let img = (
                                (1 - 2 * q) as f64 * src.0 + 2.0 * mx as f64 * lx,
                                (1 - 2 * j) as f64 * src.1 + 2.0 * my as f64 * ly,
                                (1 - 2 * k) as f64 * src.2 + 2.0 * mz as f64 * lz,
                            );
                            let d = ((img.0 - mic.0).powi(2)
                                + (img.1 - mic.1).powi(2)
                                + (img.2 - mic.2).powi(2))
                            .sqrt();
                            if d < 1e-9 {
                                continue;
                            }
                            let amp =
                                beta.powi(order as i32) / (4.0 * std::f64::consts::PI * d);
                            place_impulse(&mut h, d / cts, amp);
                        }
                    }
                }
            }
        }
    }
    h
}

/// Reverberation time from Schroeder backward integration: linear read-off
/// between the -5 dB and -25 dB points, extrapolated to 60 dB.
pub fn schroeder_t60(rir: &AudioClip) -> f64 {
    let energy: Vec<f64> = rir.samples.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    let mut tail = total;
    let mut curve_db = Vec::with_capacity(energy.len());
    for e in &energy {
        curve_db.push(10.0 * (tail / total).max(1e-300).log10());
        tail -= e;
    }
    let t_at = |level: f64| -> usize {
        curve_db
            .iter()
            .position(|&d| d <= level)
            .unwrap_or(curve_db.len() - 1)
    };
    let t5 = t_at(-5.0);
    let t25 = t_at(-25.0);
    let dt = (t25.saturating_sub(t5)) as f64 / rir.sample_rate as f64;
    3.0 * dt
}

/// Mean squared magnitude of the DFT bins falling inside [f_lo, f_hi),
/// averaged over Hann-windowed segments.
pub fn band_power(clip: &AudioClip, f_lo: f64, f_hi: f64) -> f64 {
    let seg_len = 2048usize;
    let fs = clip.sample_rate as f64;
    let mut acc = 0.0;
    let mut count = 0usize;
    let window: Vec<f64> = (0..seg_len)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / seg_len as f64).cos())
        .collect();
    let mut start = 0;
    while start + seg_len <= clip.len() {
        let seg: Vec<f64> = clip.samples[start..start + seg_len]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        let spec = direct_dft(&seg);
        for (k, c) in spec.iter().enumerate() {
            let f = k as f64 * fs / seg_len as f64;
            if f >= f_lo && f < f_hi {
                acc += c.norm_sqr();
                count += 1;
            }
        }
        start += seg_len; // non-overlapping segments keep the oracle cheap
    }
    acc / count.max(1) as f64
}

type Maps = Vec<Vec<f64>>; // per feature map, h*w row-major

/// Independent straightforward forward pass over a checkpoint, eval mode.
/// Returns the channel posteriors.
pub fn reference_forward(ck: &ModelCheckpoint, patches: &[Vec<f64>], h0: usize, w0: usize) -> Vec<f64> {
    let tensor = |name: &str| -> &Tensor<f32> {
        &ck.tensors
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
            .1
    };
    let m = patches.len();
    let mut acts: Vec<Maps> = patches.iter().map(|p| vec![p.clone()]).collect();
    let mut shape = (1usize, h0, w0);
    let mut flat: Vec<Vec<f64>> = Vec::new();
    let mut is_flat = false;

    for (i, layer) in ck.config.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv3x3 { out_channels, .. } => {
                let (c_in, h, w) = shape;
                let kernels: Vec<f64> = tensor(&format!("layers.{i}.kernels"))
                    .data
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let bias: Vec<f64> = tensor(&format!("layers.{i}.bias"))
                    .data
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                for maps in acts.iter_mut() {
                    let input: Vec<f64> = maps.concat();
                    let out = naive_conv3x3(&input, c_in, h, w, &kernels, &bias, *out_channels);
                    *maps = out.chunks(h * w).map(|c| c.to_vec()).collect();
                }
                let k_xc = layer.xc_kernels();
                if k_xc > 0 {
                    for map_idx in out_channels - k_xc..*out_channels {
                        let mut mean = vec![0.0; h * w];
                        for maps in acts.iter() {
                            for (s, v) in mean.iter_mut().zip(&maps[map_idx]) {
                                *s += v;
                            }
                        }
                        for s in mean.iter_mut() {
                            *s /= m as f64;
                        }
                        for maps in acts.iter_mut() {
                            maps[map_idx] = mean.clone();
                        }
                    }
                }
                shape = (*out_channels, h, w);
            }
            LayerSpec::BatchNorm => {
                let gamma = tensor(&format!("layers.{i}.gamma"));
                let beta = tensor(&format!("layers.{i}.beta"));
                let rm = tensor(&format!("layers.{i}.running_mean"));
                let rv = tensor(&format!("layers.{i}.running_var"));
                if is_flat {
                    for v in flat.iter_mut() {
                        for (u, val) in v.iter_mut().enumerate() {
                            let inv = 1.0 / ((rv.data[u] as f64) + 1e-5).sqrt();
                            *val = (*val - rm.data[u] as f64) * inv * gamma.data[u] as f64
                                + beta.data[u] as f64;
                        }
                    }
                } else {
                    for maps in acts.iter_mut() {
                        for (c, map) in maps.iter_mut().enumerate() {
                            let inv = 1.0 / ((rv.data[c] as f64) + 1e-5).sqrt();
                            for val in map.iter_mut() {
                                *val = (*val - rm.data[c] as f64) * inv * gamma.data[c] as f64
                                    + beta.data[c] as f64;
                            }
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                if is_flat {
                    for v in flat.iter_mut() {
                        for x in v.iter_mut() {
                            if *x < 0.0 {
                                *x = 0.0;
                            }
                        }
                    }
                } else {
                    for maps in acts.iter_mut() {
                        for map in maps.iter_mut() {
                            for x in map.iter_mut() {
                                if *x < 0.0 {
                                    *x = 0.0;
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::MaxPool2x2 => {
                let (c, h, w) = shape;
                let (ho, wo) = (h / 2, w / 2);
                for maps in acts.iter_mut() {
                    for map in maps.iter_mut() {
                        let mut out = vec![0.0; ho * wo];
                        for y in 0..ho {
                            for x in 0..wo {
                                let mut best = f64::NEG_INFINITY;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let v = map[(2 * y + dy) * w + 2 * x + dx];
                                        if v > best {
                                            best = v;
                                        }
                                    }
                                }
                                out[y * wo + x] = best;
                            }
                        }
                        *map = out;
                    }
                }
                shape = (c, ho, wo);
            }
            LayerSpec::Flatten => {
                flat = acts.iter().map(|maps| maps.concat()).collect();
                is_flat = true;
            }
            LayerSpec::Dense { out_units } => {
                let weight = tensor(&format!("layers.{i}.weight"));
                let bias = tensor(&format!("layers.{i}.bias"));
                let in_units = flat[0].len();
                for v in flat.iter_mut() {
                    let mut out = vec![0.0; *out_units];
                    for (o, ov) in out.iter_mut().enumerate() {
                        let mut acc = bias.data[o] as f64;
                        for (u, x) in v.iter().enumerate() {
                            acc += weight.data[o * in_units + u] as f64 * x;
                        }
                        *ov = acc;
                    }
                    *v = out;
                }
            }
        }
    }

    let logits: Vec<f64> = flat.iter().map(|v| v[0]).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Random feature patch of the given shape.
pub fn random_patch(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> picknet_core::dsp::FeaturePatch {
    picknet_core::dsp::FeaturePatch {
        values: (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        dim,
        center_index: 0,
    }
}
