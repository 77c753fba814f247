mod common;

use picknet_core::dsp::{FeatureKind, FeaturePatch};
use picknet_core::model::{
    batch_norm, conv3x3_forward, cross_channel_layer, LayerSpec, Mode, ModelConfig, PickNet,
    Tensor,
};
use rand::seq::SliceRandom;
use rand::Rng;

fn random_tensor(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(
        shape,
        (0..shape.iter().product())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
}

#[test]
fn conv_matches_six_loop_oracle() {
    let mut rng = common::rng(21);
    let input = random_tensor(&[2, 4, 4], &mut rng);
    let kernels = random_tensor(&[3, 2, 3, 3], &mut rng);
    let bias = random_tensor(&[3], &mut rng);
    let out = conv3x3_forward(&input, &kernels, &bias).unwrap();
    let oracle = common::naive_conv3x3(&input.data, 2, 4, 4, &kernels.data, &bias.data, 3);
    for (a, b) in out.data.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn batchnorm_matches_direct_formula_oracle() {
    let mut rng = common::rng(9);
    let n_feat = 3;
    let plane = 10;
    let inputs: Vec<Tensor<f64>> = (0..4)
        .map(|_| random_tensor(&[n_feat, 2, 5], &mut rng))
        .collect();
    let gamma = random_tensor(&[n_feat], &mut rng);
    let beta = random_tensor(&[n_feat], &mut rng);
    let mut rm = Tensor::<f64>::zeros(&[n_feat]);
    let mut rv = Tensor::<f64>::zeros(&[n_feat]);
    rv.fill(1.0);

    let outs = batch_norm(&inputs, &gamma, &beta, &mut rm, &mut rv, Mode::Train).unwrap();

    // Oracle: mean/var over every instance and position, per feature map.
    for f in 0..n_feat {
        let mut vals = Vec::new();
        for x in &inputs {
            vals.extend_from_slice(&x.data[f * plane..(f + 1) * plane]);
        }
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for (i, x) in inputs.iter().enumerate() {
            for k in 0..plane {
                let expect = gamma.data[f] * (x.data[f * plane + k] - mean)
                    / (var + 1e-5).sqrt()
                    + beta.data[f];
                let got = outs[i].data[f * plane + k];
                assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
            }
        }
        // Running statistics move toward the batch with momentum 0.9.
        assert!((rm.data[f] - 0.1 * mean).abs() < 1e-12);
        assert!((rv.data[f] - (0.9 + 0.1 * var)).abs() < 1e-12);
    }

    // Normalized outputs (gamma=1, beta=0) have mean 0, variance 1.
    let mut g1 = Tensor::<f64>::zeros(&[n_feat]);
    g1.fill(1.0);
    let b0 = Tensor::<f64>::zeros(&[n_feat]);
    let mut rm2 = Tensor::<f64>::zeros(&[n_feat]);
    let mut rv2 = Tensor::<f64>::zeros(&[n_feat]);
    let outs = batch_norm(&inputs, &g1, &b0, &mut rm2, &mut rv2, Mode::Train).unwrap();
    for f in 0..n_feat {
        let mut vals = Vec::new();
        for o in &outs {
            vals.extend_from_slice(&o.data[f * plane..(f + 1) * plane]);
        }
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_eval_identity_with_unit_stats() {
    let mut rng = common::rng(10);
    let x = random_tensor(&[2, 3, 3], &mut rng);
    let mut gamma = Tensor::<f64>::zeros(&[2]);
    gamma.fill(1.0);
    let beta = Tensor::<f64>::zeros(&[2]);
    let mut rm = Tensor::<f64>::zeros(&[2]);
    let mut rv = Tensor::<f64>::zeros(&[2]);
    rv.fill(1.0);
    let outs = batch_norm(
        std::slice::from_ref(&x),
        &gamma,
        &beta,
        &mut rm,
        &mut rv,
        Mode::Eval,
    )
    .unwrap();
    for (a, b) in outs[0].data.iter().zip(&x.data) {
        assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
    }
}

#[test]
fn cross_channel_hand_case_shares_the_mean_map() {
    // Identity kernels: map 0 local copy, map 1 shared mean of (A, B).
    let a = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let b = Tensor::<f64>::from_vec(&[1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]);
    let mut kernels = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
    kernels.data[4] = 1.0; // map 0: identity
    kernels.data[9 + 4] = 1.0; // map 1: identity
    let bias = Tensor::<f64>::zeros(&[2]);
    let outs = cross_channel_layer(&[a.clone(), b.clone()], &kernels, &bias, 1).unwrap();
    // Local maps.
    assert_eq!(&outs[0].data[0..4], &a.data[..]);
    assert_eq!(&outs[1].data[0..4], &b.data[..]);
    // Shared map = (A + B) / 2 = [3, 4, 5, 6].
    for o in &outs {
        assert_eq!(&o.data[4..8], &[3.0, 4.0, 5.0, 6.0]);
    }
}

#[test]
fn forward_matches_independent_reference_implementation() {
    let config = ModelConfig {
        layers: vec![
            LayerSpec::Conv3x3 {
                out_channels: 4,
                cross_channel: false,
                xc_fraction: 0.0,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Conv3x3 {
                out_channels: 8,
                cross_channel: true,
                xc_fraction: 0.25,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_units: 10 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_units: 1 },
        ],
        input_shape: (10, 12),
        feature_kind: FeatureKind::LogMel,
        xc_pool_after_bn: false,
    };
    let net = PickNet::<f64>::new(config, 77).unwrap();
    let ck = net.to_checkpoint();
    // Run the f32-checkpoint parameters through both implementations.
    let net32 = PickNet::<f64>::from_checkpoint(&ck).unwrap();

    let mut rng = common::rng(5);
    let base: Vec<f64> = (0..120).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let weak: Vec<f64> = base.iter().map(|v| v / 10.0).collect();
    let patches = vec![
        FeaturePatch {
            values: base.clone(),
            dim: 12,
            center_index: 0,
        },
        FeaturePatch {
            values: weak.clone(),
            dim: 12,
            center_index: 0,
        },
    ];
    let (post, _) = net32.forward(&patches, 0, Mode::Eval).unwrap();
    let oracle = common::reference_forward(&ck, &[base, weak], 10, 12);
    for (a, b) in post.p.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "engine {a} vs reference {b}");
    }
}

#[test]
fn permutation_equivariance_over_random_models() {
    let mut rng = common::rng(42);
    for trial in 0..20 {
        let m = rng.gen_range(2..=6usize);
        let xc = [0.25, 0.5][rng.gen_range(0..2usize)];
        let config = ModelConfig {
            layers: vec![
                LayerSpec::Conv3x3 {
                    out_channels: 4,
                    cross_channel: true,
                    xc_fraction: xc,
                },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Conv3x3 {
                    out_channels: 4,
                    cross_channel: true,
                    xc_fraction: xc,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_units: 1 },
            ],
            input_shape: (9, 8),
            feature_kind: FeatureKind::LogMel,
            xc_pool_after_bn: false,
        };
        let net = PickNet::<f64>::new(config, 1000 + trial).unwrap();
        let patches: Vec<FeaturePatch> =
            (0..m).map(|_| common::random_patch(9, 8, &mut rng)).collect();
        let (base, _) = net.forward(&patches, 0, Mode::Eval).unwrap();

        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<FeaturePatch> = order.iter().map(|&i| patches[i].clone()).collect();
        let (perm, _) = net.forward(&permuted, 0, Mode::Eval).unwrap();
        for (pos, &src) in order.iter().enumerate() {
            assert!(
                (perm.p[pos] - base.p[src]).abs() <= 1e-10,
                "trial {trial}: permuted[{pos}] = {} vs base[{src}] = {}",
                perm.p[pos],
                base.p[src]
            );
        }
    }
}

#[test]
fn channel_count_generalizes_from_one_to_sixteen() {
    let mut cfg = ModelConfig::default_for(FeatureKind::LogMel);
    cfg.input_shape = (41, 20);
    let net = PickNet::<f32>::new(cfg, 3).unwrap();
    let mut rng = common::rng(8);
    for m in 1..=16usize {
        let patches: Vec<FeaturePatch> =
            (0..m).map(|_| common::random_patch(41, 20, &mut rng)).collect();
        let (post, _) = net.forward(&patches, 0, Mode::Eval).unwrap();
        assert_eq!(post.p.len(), m);
        let sum: f64 = post.p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "M={m}: sum {sum}");
    }
}

#[test]
fn zero_xc_fraction_equals_baseline_bitwise() {
    let mk = |cross_channel: bool| {
        let mut cfg = ModelConfig::default_for(FeatureKind::LogMel);
        cfg.input_shape = (41, 16);
        for layer in &mut cfg.layers {
            if let LayerSpec::Conv3x3 {
                cross_channel: xc,
                xc_fraction,
                ..
            } = layer
            {
                *xc = cross_channel;
                *xc_fraction = 0.0;
            }
        }
        cfg
    };
    // Same seed gives identical parameters; xc with zero kernels must equal
    // the no-cross-channel baseline exactly.
    let picknet = PickNet::<f32>::new(mk(true), 55).unwrap();
    let baseline = PickNet::<f32>::new(mk(false), 55).unwrap();
    let mut rng = common::rng(2);
    let patches: Vec<FeaturePatch> =
        (0..3).map(|_| common::random_patch(41, 16, &mut rng)).collect();
    let (a, _) = picknet.forward(&patches, 0, Mode::Eval).unwrap();
    let (b, _) = baseline.forward(&patches, 0, Mode::Eval).unwrap();
    assert_eq!(a.p, b.p);
}

#[test]
fn gradient_symmetry_for_identical_channels() {
    // With identical input channels and shared parameters, it cannot matter
    // which channel the upstream gradient lands on.
    let mut cfg = ModelConfig::default_for(FeatureKind::LogMel);
    cfg.input_shape = (41, 12);
    let net = PickNet::<f64>::new(cfg, 5).unwrap();
    let mut rng = common::rng(31);
    let patch = common::random_patch(41, 12, &mut rng);
    let patches = vec![patch.clone(), patch.clone(), patch];
    let (_, cache) = net.forward(&patches, 0, Mode::Train).unwrap();
    let g_first = net.backward(&cache, &[1.0, 0.0, 0.0]).unwrap();
    let g_last = net.backward(&cache, &[0.0, 0.0, 1.0]).unwrap();
    for (a, b) in g_first.tensors.iter().zip(&g_last.tensors) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn pooling_after_batchnorm_is_a_selectable_variant() {
    // The orderings only differ on the shared maps; a shared map feeds every
    // channel's logit identically (softmax cancels common terms), so a
    // second convolution must follow to mix shared and local maps
    // nonlinearly per channel before the difference can reach the output.
    let mk = |after_bn: bool| ModelConfig {
        layers: vec![
            LayerSpec::Conv3x3 {
                out_channels: 4,
                cross_channel: true,
                xc_fraction: 0.25,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::Conv3x3 {
                out_channels: 4,
                cross_channel: false,
                xc_fraction: 0.0,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_units: 1 },
        ],
        input_shape: (8, 10),
        feature_kind: FeatureKind::LogMel,
        xc_pool_after_bn: after_bn,
    };
    let pre = PickNet::<f64>::new(mk(false), 21).unwrap();
    let post = PickNet::<f64>::new(mk(true), 21).unwrap();

    let mut rng = common::rng(77);
    let patches: Vec<FeaturePatch> =
        (0..3).map(|_| common::random_patch(8, 10, &mut rng)).collect();

    // Both orders stay permutation-equivariant...
    for net in [&pre, &post] {
        let (base, _) = net.forward(&patches, 0, Mode::Train).unwrap();
        let swapped = vec![patches[2].clone(), patches[1].clone(), patches[0].clone()];
        let (perm, _) = net.forward(&swapped, 0, Mode::Train).unwrap();
        assert!((base.p[0] - perm.p[2]).abs() < 1e-10);
        assert!((base.p[2] - perm.p[0]).abs() < 1e-10);
    }
    // ...but they are genuinely different orderings.
    let (a, _) = pre.forward(&patches, 0, Mode::Train).unwrap();
    let (b, _) = post.forward(&patches, 0, Mode::Train).unwrap();
    assert!(
        a.p.iter().zip(&b.p).any(|(x, y)| (x - y).abs() > 1e-9),
        "pool-before-BN and pool-after-BN should not coincide on random inputs"
    );

    // The config demands a batchnorm right after a deferred-pool conv.
    let mut bad = mk(true);
    bad.layers.remove(1);
    assert!(matches!(
        bad.validate(),
        Err(picknet_core::Error::InvalidConfig(_))
    ));
}

#[test]
fn batchnorm_handles_single_constant_input_via_epsilon() {
    // Train mode, batch of one, zero variance: epsilon keeps it finite.
    let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![3.0; 4]);
    let mut gamma = Tensor::<f64>::zeros(&[1]);
    gamma.fill(1.0);
    let beta = Tensor::<f64>::zeros(&[1]);
    let mut rm = Tensor::<f64>::zeros(&[1]);
    let mut rv = Tensor::<f64>::zeros(&[1]);
    let outs = batch_norm(
        std::slice::from_ref(&x),
        &gamma,
        &beta,
        &mut rm,
        &mut rv,
        Mode::Train,
    )
    .unwrap();
    assert!(outs[0].data.iter().all(|v| v.is_finite()));
    assert!(outs[0].data.iter().all(|v| v.abs() < 1e-9));
}
