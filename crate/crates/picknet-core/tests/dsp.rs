mod common;

use picknet_core::dsp::{
    amplitude, istft, logmel, mel_filterbank, running_mean_normalize, stack_context, stft,
    AudioClip, FeatureKind, FeatureSeq, CONTEXT_LEFT, DEFAULT_HOP, DEFAULT_WIN_LEN,
};
use proptest::prelude::*;
use rand::Rng;

fn sine(freq: f64, len: usize) -> AudioClip {
    AudioClip::new(
        (0..len)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / 16_000.0).sin())
            .collect(),
        16_000,
    )
    .unwrap()
}

fn noise(len: usize, seed: u64) -> AudioClip {
    let mut rng = common::rng(seed);
    AudioClip::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16_000).unwrap()
}

#[test]
fn sine_at_bin_16_peaks_there_and_matches_direct_dft() {
    // 16 * 16000 / 512 = 500 Hz lands exactly on bin 16.
    let clip = sine(500.0, 16_000);
    let spec = stft(&clip, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();

    let window: Vec<f64> = (0..DEFAULT_WIN_LEN)
        .map(|n| (std::f64::consts::PI * n as f64 / DEFAULT_WIN_LEN as f64).sin())
        .collect();
    for t in [5usize, 20, 40] {
        let frame = spec.frame(t);
        let peak = (0..spec.n_bins)
            .max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm()))
            .unwrap();
        assert_eq!(peak, 16, "frame {t} peak bin");

        // Oracle: direct DFT of the windowed segment.
        let seg: Vec<f64> = clip.samples[t * DEFAULT_HOP..t * DEFAULT_HOP + DEFAULT_WIN_LEN]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        let oracle = common::direct_dft(&seg);
        for (a, b) in frame.iter().zip(&oracle) {
            let scale = b.norm().max(1.0);
            assert!(
                (a - b).norm() / scale < 1e-10,
                "frame {t}: {a} vs oracle {b}"
            );
        }
    }
}

#[test]
fn white_noise_roundtrip_snr_exceeds_60_db() {
    let x = noise(16_000, 3);
    let y = istft(&stft(&x, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap()).unwrap();
    let lo = DEFAULT_WIN_LEN;
    let hi = 16_000 - DEFAULT_WIN_LEN;
    let mut sig = 0.0;
    let mut err = 0.0;
    for i in lo..hi {
        sig += x.samples[i] * x.samples[i];
        err += (x.samples[i] - y.samples[i]).powi(2);
    }
    let snr = 10.0 * (sig / err).log10();
    assert!(snr > 60.0, "roundtrip SNR {snr} dB");
}

#[test]
fn amplitude_matches_elementwise_modulus_oracle() {
    let x = noise(8_192, 11);
    let spec = stft(&x, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();
    let amp = amplitude(&spec);
    for (a, c) in amp.data.iter().zip(&spec.data) {
        let oracle = (c.re * c.re + c.im * c.im).sqrt();
        assert!((a - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}

#[test]
fn mel_filter_centers_follow_htk_formula() {
    let n_mels = 80;
    let n_bins = 257;
    let fb = mel_filterbank(n_mels, n_bins, 16_000).unwrap();
    // Oracle: recompute center frequencies from the HTK formula.
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let unmel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let mel_max = mel(8_000.0);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| unmel(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    // Strictly increasing centers.
    for pair in centers.windows(2) {
        assert!(pair[1] > pair[0]);
    }
    let bin_hz = 8_000.0 / (n_bins - 1) as f64;
    for k in 0..n_mels - 1 {
        let row = &fb[k * n_bins..(k + 1) * n_bins];
        let next = &fb[(k + 1) * n_bins..(k + 2) * n_bins];
        // Peak of filter k sits at its center: the nearest bin carries the
        // row maximum.
        let peak_bin = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(
            ((peak_bin as f64 * bin_hz) - centers[k + 1]).abs() <= bin_hz,
            "filter {k} peak at {} Hz, center {}",
            peak_bin as f64 * bin_hz,
            centers[k + 1]
        );
        // Filter k+1 is still (near) zero where filter k peaks: it starts
        // rising at filter k's center frequency.
        assert!(next[peak_bin] <= row[peak_bin]);
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            if f < centers[k + 1] - bin_hz {
                assert_eq!(next[bin], 0.0, "filter {} rising before {}", k + 1, centers[k + 1]);
            }
        }
    }
}

#[test]
fn interior_stack_center_row_is_the_frame() {
    let dim = 5;
    let n = 100;
    let mut rng = common::rng(4);
    let seq = FeatureSeq {
        data: (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        n_frames: n,
        dim,
        kind: FeatureKind::Amplitude,
        frame_period: 0.016,
    };
    for t in 40..60 {
        let p = stack_context(&seq, t).unwrap();
        assert_eq!(p.row(CONTEXT_LEFT), seq.frame(t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_is_linear(
        seed_x in 0u64..1000,
        seed_y in 1000u64..2000,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let x = noise(2048, seed_x);
        let y = noise(2048, seed_y);
        let combined = AudioClip::new(
            x.samples.iter().zip(&y.samples).map(|(xv, yv)| a * xv + b * yv).collect(),
            16_000,
        ).unwrap();
        let sx = stft(&x, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();
        let sy = stft(&y, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();
        let sc = stft(&combined, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();
        for ((c, xv), yv) in sc.data.iter().zip(&sx.data).zip(&sy.data) {
            let expect = a * xv + b * yv;
            let scale = expect.norm().max(1.0);
            prop_assert!((c - expect).norm() / scale < 1e-10);
        }
    }

    #[test]
    fn roundtrip_reconstructs_interior_samples(seed in 0u64..500) {
        let x = noise(4096, seed);
        let y = istft(&stft(&x, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap()).unwrap();
        for i in DEFAULT_WIN_LEN..4096 - DEFAULT_WIN_LEN {
            prop_assert!((x.samples[i] - y.samples[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_normalization_is_causal_bitwise(seed in 0u64..500, cut in 5usize..45) {
        let dim = 3;
        let n = 50;
        let mut rng = common::rng(seed);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let full = FeatureSeq {
            data: data.clone(),
            n_frames: n,
            dim,
            kind: FeatureKind::Amplitude,
            frame_period: 0.016,
        };
        let cut_seq = FeatureSeq {
            data: data[..cut * dim].to_vec(),
            n_frames: cut,
            dim,
            kind: FeatureKind::Amplitude,
            frame_period: 0.016,
        };
        let a = running_mean_normalize(&full, 0.25).unwrap();
        let b = running_mean_normalize(&cut_seq, 0.25).unwrap();
        // Truncating the future changes nothing in the past, bitwise.
        prop_assert_eq!(&a.data[..cut * dim], &b.data[..]);
    }

    #[test]
    fn logmel_is_monotone_in_amplitude(seed in 0u64..300, bump_bin in 0usize..257) {
        let mut rng = common::rng(seed);
        let dim = 257;
        let base: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut bumped = base.clone();
        bumped[bump_bin] += rng.gen_range(0.1..2.0);
        let mk = |data: Vec<f64>| FeatureSeq {
            data,
            n_frames: 1,
            dim,
            kind: FeatureKind::Amplitude,
            frame_period: 0.016,
        };
        let a = logmel(&mk(base), 80, 16_000).unwrap();
        let b = logmel(&mk(bumped), 80, 16_000).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!(y >= x, "mel output decreased: {y} < {x}");
        }
    }
}
