//! Forward and backward passes of the channel-selection network.
//!
//! All parameters are shared across input channels. A cross-channel
//! convolution computes every feature map per channel, then replaces the
//! designated maps by their element-wise mean over all channels, so the
//! mapping commutes with any permutation of the channels and the per-frame
//! cost grows linearly in the channel count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};
use super::{Extent, LayerSpec, Mode, ModelCheckpoint, ModelConfig, ChannelPosteriors};
use crate::dsp::FeaturePatch;
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub(crate) enum LayerState<T> {
    Conv {
        kernels: Tensor<T>,
        bias: Tensor<T>,
        in_channels: usize,
        out_channels: usize,
        /// Cross-channel kernel count; the last `k_xc` maps are shared.
        k_xc: usize,
        /// Mean-pool directly on the convolution outputs.
        pool_here: bool,
    },
    BatchNorm {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
        /// When the preceding cross-channel convolution defers its pooling
        /// past this normalization, the number of maps to pool.
        pool_after: usize,
    },
    Relu,
    MaxPool,
    Flatten,
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
        in_units: usize,
        out_units: usize,
    },
}

/// The channel-selection network with loaded parameters.
#[derive(Debug, Clone)]
pub struct PickNet<T: Scalar> {
    config: ModelConfig,
    pub(crate) layers: Vec<LayerState<T>>,
    extents: Vec<Extent>,
}

/// Saved intermediates of one forward pass, consumed by [`PickNet::backward`].
#[derive(Debug)]
pub struct ForwardCache<T: Scalar> {
    mode: Mode,
    n_channels: usize,
    layer_caches: Vec<LayerCache<T>>,
    posteriors: Vec<T>,
    /// Multiply-accumulate count of this forward pass.
    pub macs: u64,
    /// Deferred running-statistic updates: (layer index, batch mean, batch var).
    bn_updates: Vec<(usize, Tensor<T>, Tensor<T>)>,
}

#[derive(Debug)]
enum LayerCache<T> {
    Conv { inputs: Vec<Tensor<T>> },
    BatchNorm { xhat: Vec<Tensor<T>>, inv_std: Vec<T> },
    Relu { outputs: Vec<Tensor<T>> },
    MaxPool { argmax: Vec<Vec<u32>>, in_shape: (usize, usize, usize) },
    Flatten,
    Dense { inputs: Vec<Tensor<T>> },
}

/// Batch-norm running-statistic updates detached from a forward cache, small
/// enough to collect across a parallel batch.
#[derive(Debug, Clone)]
pub struct BnStatsUpdate<T: Scalar>(Vec<(usize, Tensor<T>, Tensor<T>)>);

impl<T: Scalar> ForwardCache<T> {
    pub fn stats_update(&self) -> BnStatsUpdate<T> {
        BnStatsUpdate(self.bn_updates.clone())
    }
}

/// Parameter gradients, ordered like [`PickNet::trainable_params`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &PickNet<T>) -> Self {
        Self {
            tensors: net
                .trainable_params()
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for x in t.data.iter_mut() {
                *x *= s;
            }
        }
    }
}

impl<T: Scalar> PickNet<T> {
    /// Create a network with freshly initialized parameters (Kaiming-uniform
    /// kernels and dense weights, zero biases, identity batch norm).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let extents = config.shape_walk()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut prev = Extent::Maps {
            c: 1,
            h: config.input_shape.0,
            w: config.input_shape.1,
        };
        for (i, spec) in config.layers.iter().enumerate() {
            let state = match (spec, prev) {
                (
                    LayerSpec::Conv3x3 { out_channels, .. },
                    Extent::Maps { c: in_channels, .. },
                ) => {
                    let fan_in = in_channels * 9;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let kernels = Tensor::from_vec(
                        &[*out_channels, in_channels, 3, 3],
                        (0..out_channels * in_channels * 9)
                            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                            .collect(),
                    );
                    LayerState::Conv {
                        kernels,
                        bias: Tensor::zeros(&[*out_channels]),
                        in_channels,
                        out_channels: *out_channels,
                        k_xc: spec.xc_kernels(),
                        pool_here: spec.xc_kernels() > 0 && !config.xc_pool_after_bn,
                    }
                }
                (LayerSpec::BatchNorm, ext) => {
                    let n = match ext {
                        Extent::Maps { c, .. } => c,
                        Extent::Flat { n } => n,
                    };
                    let pool_after = if config.xc_pool_after_bn {
                        match config.layers.get(i.wrapping_sub(1)) {
                            Some(prev_spec) => prev_spec.xc_kernels(),
                            None => 0,
                        }
                    } else {
                        0
                    };
                    let mut gamma = Tensor::zeros(&[n]);
                    gamma.fill(T::one());
                    let mut running_var = Tensor::zeros(&[n]);
                    running_var.fill(T::one());
                    LayerState::BatchNorm {
                        gamma,
                        beta: Tensor::zeros(&[n]),
                        running_mean: Tensor::zeros(&[n]),
                        running_var,
                        pool_after,
                    }
                }
                (LayerSpec::Relu, _) => LayerState::Relu,
                (LayerSpec::MaxPool2x2, _) => LayerState::MaxPool,
                (LayerSpec::Flatten, _) => LayerState::Flatten,
                (LayerSpec::Dense { out_units }, ext) => {
                    let in_units = match ext {
                        Extent::Flat { n } => n,
                        Extent::Maps { .. } => unreachable!("validated by shape_walk"),
                    };
                    let bound = (6.0 / in_units as f64).sqrt();
                    let weight = Tensor::from_vec(
                        &[*out_units, in_units],
                        (0..out_units * in_units)
                            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                            .collect(),
                    );
                    LayerState::Dense {
                        weight,
                        bias: Tensor::zeros(&[*out_units]),
                        in_units,
                        out_units: *out_units,
                    }
                }
                _ => unreachable!("validated by shape_walk"),
            };
            layers.push(state);
            prev = extents[i];
        }
        Ok(Self {
            config,
            layers,
            extents,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Trainable parameter tensors in a fixed order (running statistics are
    /// not trainable).
    pub fn trainable_params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerState::Conv { kernels, bias, .. } => {
                    out.push(kernels);
                    out.push(bias);
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerState::Dense { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerState::Conv { kernels, bias, .. } => {
                    out.push(kernels);
                    out.push(bias);
                }
                LayerState::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerState::Dense { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    /// All named tensors (trainable parameters plus batch-norm statistics),
    /// as stored in checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerState::Conv { kernels, bias, .. } => {
                    out.push((format!("layers.{i}.kernels"), kernels));
                    out.push((format!("layers.{i}.bias"), bias));
                }
                LayerState::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => {
                    out.push((format!("layers.{i}.gamma"), gamma));
                    out.push((format!("layers.{i}.beta"), beta));
                    out.push((format!("layers.{i}.running_mean"), running_mean));
                    out.push((format!("layers.{i}.running_var"), running_var));
                }
                LayerState::Dense { weight, bias, .. } => {
                    out.push((format!("layers.{i}.weight"), weight));
                    out.push((format!("layers.{i}.bias"), bias));
                }
                _ => {}
            }
        }
        out
    }

    /// Snapshot the parameters into a portable checkpoint (f32 storage).
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format_version: super::CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self
                .named_tensors()
                .into_iter()
                .map(|(name, t)| (name, t.cast::<f32>()))
                .collect(),
        }
    }

    /// Rebuild a network from a checkpoint, widening f32 parameters to `T`.
    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.format_version != super::CHECKPOINT_VERSION {
            return Err(Error::CheckpointUnsupportedVersion(ck.format_version));
        }
        let mut net = Self::new(ck.config.clone(), 0)?;
        let expected: Vec<String> = net.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &ck.tensors {
            if !seen.insert(name.clone()) {
                return Err(Error::CheckpointShape(format!("duplicate tensor `{name}`")));
            }
        }
        for name in &expected {
            if !seen.contains(name) {
                return Err(Error::CheckpointShape(format!("missing tensor `{name}`")));
            }
        }
        if ck.tensors.len() != expected.len() {
            let extra: Vec<&String> = ck
                .tensors
                .iter()
                .map(|(n, _)| n)
                .filter(|n| !expected.contains(n))
                .collect();
            return Err(Error::CheckpointShape(format!(
                "unexpected tensors: {extra:?}"
            )));
        }
        for (name, src) in &ck.tensors {
            let dst = net.tensor_mut(name).ok_or_else(|| {
                Error::CheckpointShape(format!("tensor `{name}` has no slot"))
            })?;
            if dst.shape != src.shape {
                return Err(Error::CheckpointShape(format!(
                    "tensor `{name}`: shape {:?} != expected {:?}",
                    src.shape, dst.shape
                )));
            }
            *dst = src.cast::<T>();
        }
        Ok(net)
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let mut parts = name.splitn(3, '.');
        if parts.next() != Some("layers") {
            return None;
        }
        let idx: usize = parts.next()?.parse().ok()?;
        let field = parts.next()?;
        match (self.layers.get_mut(idx)?, field) {
            (LayerState::Conv { kernels, .. }, "kernels") => Some(kernels),
            (LayerState::Conv { bias, .. }, "bias") => Some(bias),
            (LayerState::BatchNorm { gamma, .. }, "gamma") => Some(gamma),
            (LayerState::BatchNorm { beta, .. }, "beta") => Some(beta),
            (LayerState::BatchNorm { running_mean, .. }, "running_mean") => Some(running_mean),
            (LayerState::BatchNorm { running_var, .. }, "running_var") => Some(running_var),
            (LayerState::Dense { weight, .. }, "weight") => Some(weight),
            (LayerState::Dense { bias, .. }, "bias") => Some(bias),
            _ => None,
        }
    }

    /// Run the layer stack over `patches` (one per channel, shared
    /// parameters) and convert the per-channel scalars into posteriors.
    pub fn forward(
        &self,
        patches: &[FeaturePatch],
        frame: usize,
        mode: Mode,
    ) -> Result<(ChannelPosteriors, ForwardCache<T>)> {
        if patches.is_empty() {
            return Err(Error::InvalidInput("no input channels".into()));
        }
        let (ph, pw) = self.config.input_shape;
        for p in patches {
            if p.dim != pw || p.values.len() != ph * pw {
                return Err(Error::InvalidConfig(format!(
                    "patch shape {}x{} does not match model input {ph}x{pw}",
                    p.values.len() / p.dim.max(1),
                    p.dim
                )));
            }
        }
        let m = patches.len();
        let mut acts: Vec<Tensor<T>> = patches
            .iter()
            .map(|p| {
                Tensor::from_vec(
                    &[1, ph, pw],
                    p.values.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                )
            })
            .collect();

        let mut macs: u64 = 0;
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut bn_updates = Vec::new();
        let mut ext = Extent::Maps { c: 1, h: ph, w: pw };

        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerState::Conv {
                    kernels,
                    bias,
                    in_channels,
                    out_channels,
                    k_xc,
                    pool_here,
                } => {
                    let (h, w) = match ext {
                        Extent::Maps { h, w, .. } => (h, w),
                        Extent::Flat { .. } => unreachable!(),
                    };
                    let mut outs: Vec<Tensor<T>> = Vec::with_capacity(m);
                    for x in &acts {
                        let mut out = Tensor::zeros(&[*out_channels, h, w]);
                        conv3x3_into(x, *in_channels, h, w, kernels, bias, *out_channels, &mut out);
                        outs.push(out);
                    }
                    macs += (m * out_channels * in_channels * 9 * h * w) as u64;
                    if *pool_here && *k_xc > 0 {
                        mean_pool_shared(&mut outs, *k_xc, *out_channels, h * w);
                        macs += (m * k_xc * h * w) as u64;
                    }
                    layer_caches.push(LayerCache::Conv {
                        inputs: std::mem::replace(&mut acts, outs),
                    });
                }
                LayerState::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    pool_after,
                } => {
                    let (n_feat, plane) = match ext {
                        Extent::Maps { c, h, w } => (c, h * w),
                        Extent::Flat { n } => (n, 1),
                    };
                    let (xhat, inv_std) = match mode {
                        Mode::Train => {
                            let (mean, var) = batch_stats(&acts, n_feat, plane);
                            let inv_std: Vec<T> = var
                                .iter()
                                .map(|&v| T::one() / (v + T::from_f64_lossy(BN_EPS)).sqrt())
                                .collect();
                            let xhat = normalize(&acts, &mean, &inv_std, n_feat, plane);
                            bn_updates.push((
                                i,
                                Tensor::from_vec(&[n_feat], mean),
                                Tensor::from_vec(&[n_feat], var),
                            ));
                            (xhat, inv_std)
                        }
                        Mode::Eval => {
                            let inv_std: Vec<T> = running_var
                                .data
                                .iter()
                                .map(|&v| T::one() / (v + T::from_f64_lossy(BN_EPS)).sqrt())
                                .collect();
                            let xhat =
                                normalize(&acts, &running_mean.data, &inv_std, n_feat, plane);
                            (xhat, inv_std)
                        }
                    };
                    let mut outs: Vec<Tensor<T>> = xhat
                        .iter()
                        .map(|x| {
                            let mut y = Tensor::zeros(&x.shape);
                            for f in 0..n_feat {
                                let (g, b) = (gamma.data[f], beta.data[f]);
                                for (yo, xi) in y.data[f * plane..(f + 1) * plane]
                                    .iter_mut()
                                    .zip(&x.data[f * plane..(f + 1) * plane])
                                {
                                    *yo = g * *xi + b;
                                }
                            }
                            y
                        })
                        .collect();
                    macs += (m * n_feat * plane * 2) as u64;
                    if *pool_after > 0 {
                        mean_pool_shared(&mut outs, *pool_after, n_feat, plane);
                        macs += (m * pool_after * plane) as u64;
                    }
                    acts = outs;
                    layer_caches.push(LayerCache::BatchNorm { xhat, inv_std });
                }
                LayerState::Relu => {
                    for x in &mut acts {
                        for v in x.data.iter_mut() {
                            if *v < T::zero() {
                                *v = T::zero();
                            }
                        }
                    }
                    layer_caches.push(LayerCache::Relu {
                        outputs: acts.clone(),
                    });
                }
                LayerState::MaxPool => {
                    let (c, h, w) = match ext {
                        Extent::Maps { c, h, w } => (c, h, w),
                        Extent::Flat { .. } => unreachable!(),
                    };
                    let mut argmax = Vec::with_capacity(m);
                    let mut outs = Vec::with_capacity(m);
                    for x in &acts {
                        let (o, a) = maxpool2x2(x, c, h, w);
                        outs.push(o);
                        argmax.push(a);
                    }
                    acts = outs;
                    layer_caches.push(LayerCache::MaxPool {
                        argmax,
                        in_shape: (c, h, w),
                    });
                }
                LayerState::Flatten => {
                    for x in &mut acts {
                        let n = x.len();
                        x.shape = vec![n];
                    }
                    layer_caches.push(LayerCache::Flatten);
                }
                LayerState::Dense {
                    weight,
                    bias,
                    in_units,
                    out_units,
                } => {
                    let outs: Vec<Tensor<T>> = acts
                        .iter()
                        .map(|x| {
                            let mut y = Tensor::zeros(&[*out_units]);
                            for o in 0..*out_units {
                                let row = &weight.data[o * in_units..(o + 1) * in_units];
                                y.data[o] = bias.data[o] + dot(row, &x.data);
                            }
                            y
                        })
                        .collect();
                    macs += (m * out_units * in_units) as u64;
                    layer_caches.push(LayerCache::Dense {
                        inputs: std::mem::replace(&mut acts, outs),
                    });
                }
            }
            ext = self.extents[i];
        }

        let logits: Vec<T> = acts.iter().map(|a| a.data[0]).collect();
        let posteriors = softmax(&logits);
        macs += 2 * m as u64;

        let p_f64: Vec<f64> = posteriors.iter().map(|v| v.to_f64_lossy()).collect();
        Ok((
            ChannelPosteriors { p: p_f64, frame },
            ForwardCache {
                mode,
                n_channels: m,
                layer_caches,
                posteriors,
                macs,
                bn_updates,
            },
        ))
    }

    /// Backpropagate `d_loss/d_posteriors` through the softmax and the layer
    /// stack, returning gradients for every trainable parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, dldp: &[f64]) -> Result<Gradients<T>> {
        if cache.mode != Mode::Train {
            return Err(Error::InvalidState(
                "backward requires a cache from a train-mode forward pass".into(),
            ));
        }
        let m = cache.n_channels;
        if dldp.len() != m || cache.layer_caches.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "cache does not match this model/input".into(),
            ));
        }

        // Softmax backward: dL/dz_i = p_i (g_i - sum_k g_k p_k).
        let g: Vec<T> = dldp.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let dot: T = g
            .iter()
            .zip(&cache.posteriors)
            .map(|(gi, pi)| *gi * *pi)
            .sum();
        let dlogits: Vec<T> = cache
            .posteriors
            .iter()
            .zip(&g)
            .map(|(pi, gi)| *pi * (*gi - dot))
            .collect();

        let mut grads = Gradients::zeros_like(self);
        let mut gidx = grads.tensors.len();
        let mut dacts: Vec<Tensor<T>> = dlogits
            .iter()
            .map(|&d| Tensor::from_vec(&[1], vec![d]))
            .collect();

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lcache = &cache.layer_caches[i];
            match (layer, lcache) {
                (
                    LayerState::Dense {
                        weight,
                        in_units,
                        out_units,
                        ..
                    },
                    LayerCache::Dense { inputs },
                ) => {
                    gidx -= 2;
                    let (dw, db_split) = {
                        let (a, b) = grads.tensors.split_at_mut(gidx + 1);
                        (&mut a[gidx], &mut b[0])
                    };
                    let mut dins = Vec::with_capacity(m);
                    for (x, dy) in inputs.iter().zip(&dacts) {
                        let mut dx = Tensor::zeros(&[*in_units]);
                        for o in 0..*out_units {
                            let go = dy.data[o];
                            db_split.data[o] += go;
                            let wrow = &weight.data[o * in_units..(o + 1) * in_units];
                            let dwrow = &mut dw.data[o * in_units..(o + 1) * in_units];
                            for (dwv, xv) in dwrow.iter_mut().zip(&x.data) {
                                *dwv += go * *xv;
                            }
                            for (dxv, wv) in dx.data.iter_mut().zip(wrow) {
                                *dxv += go * *wv;
                            }
                        }
                        dins.push(dx);
                    }
                    dacts = dins;
                }
                (LayerState::Flatten, LayerCache::Flatten) => {
                    // Gradient shape is restored by the consumer below.
                }
                (LayerState::MaxPool, LayerCache::MaxPool { argmax, in_shape }) => {
                    let (c, h, w) = *in_shape;
                    let mut dins = Vec::with_capacity(m);
                    for (dy, am) in dacts.iter().zip(argmax) {
                        let mut dx = Tensor::zeros(&[c, h, w]);
                        for (flat, &src) in am.iter().enumerate() {
                            dx.data[src as usize] += dy.data[flat];
                        }
                        dins.push(dx);
                    }
                    dacts = dins;
                }
                (LayerState::Relu, LayerCache::Relu { outputs }) => {
                    for (dy, y) in dacts.iter_mut().zip(outputs) {
                        for (d, o) in dy.data.iter_mut().zip(&y.data) {
                            if *o <= T::zero() {
                                *d = T::zero();
                            }
                        }
                    }
                }
                (
                    LayerState::BatchNorm {
                        gamma, pool_after, ..
                    },
                    LayerCache::BatchNorm { xhat, inv_std },
                ) => {
                    gidx -= 2;
                    let n_feat = gamma.len();
                    let plane = xhat[0].len() / n_feat;
                    if *pool_after > 0 {
                        mean_pool_backward(&mut dacts, *pool_after, n_feat, plane);
                    }
                    let (dgamma, dbeta) = {
                        let (a, b) = grads.tensors.split_at_mut(gidx + 1);
                        (&mut a[gidx], &mut b[0])
                    };
                    dacts = batchnorm_backward(
                        &dacts, xhat, inv_std, gamma, dgamma, dbeta, n_feat, plane,
                    );
                }
                (
                    LayerState::Conv {
                        kernels,
                        in_channels,
                        out_channels,
                        k_xc,
                        pool_here,
                        ..
                    },
                    LayerCache::Conv { inputs },
                ) => {
                    gidx -= 2;
                    let (h, w) = (inputs[0].shape[1], inputs[0].shape[2]);
                    debug_assert_eq!(inputs[0].len(), in_channels * h * w);
                    if *pool_here && *k_xc > 0 {
                        mean_pool_backward(&mut dacts, *k_xc, *out_channels, h * w);
                    }
                    let (dk, db) = {
                        let (a, b) = grads.tensors.split_at_mut(gidx + 1);
                        (&mut a[gidx], &mut b[0])
                    };
                    let mut dins = Vec::with_capacity(m);
                    for (x, dy) in inputs.iter().zip(&dacts) {
                        // Bias gradient: sum over each output map.
                        for co in 0..*out_channels {
                            db.data[co] += lane_sum(&dy.data[co * h * w..(co + 1) * h * w]);
                        }
                        conv3x3_kernel_grad(x, dy, *in_channels, *out_channels, h, w, dk);
                        let mut dx = Tensor::zeros(&[*in_channels, h, w]);
                        conv3x3_input_grad(dy, kernels, *in_channels, *out_channels, h, w, &mut dx);
                        dins.push(dx);
                    }
                    dacts = dins;
                }
                _ => {
                    return Err(Error::InvalidState(
                        "cache layer does not match model layer".into(),
                    ))
                }
            }
        }
        Ok(grads)
    }

    /// Fold the batch statistics recorded during a train-mode forward into
    /// the running statistics (momentum 0.9).
    pub fn apply_bn_updates(&mut self, cache: &ForwardCache<T>) {
        self.apply_stats_update(&BnStatsUpdate(cache.bn_updates.clone()));
    }

    /// As [`Self::apply_bn_updates`], for updates detached from their cache.
    pub fn apply_stats_update(&mut self, update: &BnStatsUpdate<T>) {
        let momentum = T::from_f64_lossy(BN_MOMENTUM);
        let one_minus = T::one() - momentum;
        for (idx, mean, var) in &update.0 {
            if let LayerState::BatchNorm {
                running_mean,
                running_var,
                ..
            } = &mut self.layers[*idx]
            {
                for (r, b) in running_mean.data.iter_mut().zip(&mean.data) {
                    *r = momentum * *r + one_minus * *b;
                }
                for (r, b) in running_var.data.iter_mut().zip(&var.data) {
                    *r = momentum * *r + one_minus * *b;
                }
            }
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

const LANES: usize = 8;

/// Dot product with eight independent accumulator lanes; a plain
/// `acc += a*b` loop is latency-bound and never vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            acc[i] = acc[i] + xa[i] * xb[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Lane-unrolled sum.
#[inline]
fn lane_sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    for xa in &mut ca {
        for i in 0..LANES {
            acc[i] = acc[i] + xa[i];
        }
    }
    let mut tail = T::zero();
    for x in ca.remainder() {
        tail += *x;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Lane-unrolled sum of squared deviations from `mu`.
#[inline]
fn lane_sum_sq_dev<T: Scalar>(a: &[T], mu: T) -> T {
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    for xa in &mut ca {
        for i in 0..LANES {
            let d = xa[i] - mu;
            acc[i] = acc[i] + d * d;
        }
    }
    let mut tail = T::zero();
    for x in ca.remainder() {
        let d = *x - mu;
        tail += d * d;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Lane-unrolled (sum a, sum a*b).
#[inline]
fn lane_sum_pair<T: Scalar>(a: &[T], b: &[T]) -> (T, T) {
    let mut s = [T::zero(); LANES];
    let mut sx = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            s[i] = s[i] + xa[i];
            sx[i] = sx[i] + xa[i] * xb[i];
        }
    }
    let mut ts = T::zero();
    let mut tsx = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        ts += *x;
        tsx += *x * *y;
    }
    (
        s.iter().fold(ts, |t, &v| t + v),
        sx.iter().fold(tsx, |t, &v| t + v),
    )
}

/// 3x3 "same" convolution of one multi-map input, accumulated into `out`
/// (which must be pre-filled with the bias).
fn conv3x3_into<T: Scalar>(
    input: &Tensor<T>,
    c_in: usize,
    h: usize,
    w: usize,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    c_out: usize,
    out: &mut Tensor<T>,
) {
    let hw = h * w;
    for co in 0..c_out {
        let out_plane = &mut out.data[co * hw..(co + 1) * hw];
        out_plane.fill(bias.data[co]);
        for ci in 0..c_in {
            let in_plane = &input.data[ci * hw..(ci + 1) * hw];
            let kbase = (co * c_in + ci) * 9;
            for dy in 0..3usize {
                let y0 = usize::from(dy == 0);
                let y1 = if dy == 2 { h - 1 } else { h };
                for dx in 0..3usize {
                    let k = kernels.data[kbase + dy * 3 + dx];
                    let x0 = usize::from(dx == 0);
                    let x1 = if dx == 2 { w - 1 } else { w };
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src = &in_plane[(y + dy - 1) * w + x0 + dx - 1..(y + dy - 1) * w + x1 + dx - 1];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += k * *s;
                        }
                    }
                }
            }
        }
    }
}

/// Kernel gradient of the 3x3 convolution.
fn conv3x3_kernel_grad<T: Scalar>(
    input: &Tensor<T>,
    dout: &Tensor<T>,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    dk: &mut Tensor<T>,
) {
    let hw = h * w;
    for co in 0..c_out {
        let g_plane = &dout.data[co * hw..(co + 1) * hw];
        for ci in 0..c_in {
            let in_plane = &input.data[ci * hw..(ci + 1) * hw];
            let kbase = (co * c_in + ci) * 9;
            for dy in 0..3usize {
                let y0 = usize::from(dy == 0);
                let y1 = if dy == 2 { h - 1 } else { h };
                for dx in 0..3usize {
                    let x0 = usize::from(dx == 0);
                    let x1 = if dx == 2 { w - 1 } else { w };
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let src = &in_plane[(y + dy - 1) * w + x0 + dx - 1..(y + dy - 1) * w + x1 + dx - 1];
                        let g = &g_plane[y * w + x0..y * w + x1];
                        acc += dot(g, src);
                    }
                    dk.data[kbase + dy * 3 + dx] += acc;
                }
            }
        }
    }
}

/// Input gradient of the 3x3 convolution (scatter of the upstream gradient
/// through each kernel tap).
fn conv3x3_input_grad<T: Scalar>(
    dout: &Tensor<T>,
    kernels: &Tensor<T>,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    din: &mut Tensor<T>,
) {
    let hw = h * w;
    for co in 0..c_out {
        let g_plane = &dout.data[co * hw..(co + 1) * hw];
        for ci in 0..c_in {
            let din_plane = &mut din.data[ci * hw..(ci + 1) * hw];
            let kbase = (co * c_in + ci) * 9;
            for dy in 0..3usize {
                let y0 = usize::from(dy == 0);
                let y1 = if dy == 2 { h - 1 } else { h };
                for dx in 0..3usize {
                    let k = kernels.data[kbase + dy * 3 + dx];
                    let x0 = usize::from(dx == 0);
                    let x1 = if dx == 2 { w - 1 } else { w };
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let dst = &mut din_plane
                            [(y + dy - 1) * w + x0 + dx - 1..(y + dy - 1) * w + x1 + dx - 1];
                        let g = &g_plane[y * w + x0..y * w + x1];
                        for (d, gv) in dst.iter_mut().zip(g) {
                            *d += k * *gv;
                        }
                    }
                }
            }
        }
    }
}

/// Replace the last `k` maps of every channel by their element-wise mean
/// over all channels.
fn mean_pool_shared<T: Scalar>(acts: &mut [Tensor<T>], k: usize, c: usize, plane: usize) {
    let m = acts.len();
    let inv_m = T::one() / T::from_f64_lossy(m as f64);
    let lo = (c - k) * plane;
    let hi = c * plane;
    let mut mean = vec![T::zero(); hi - lo];
    for a in acts.iter() {
        for (s, v) in mean.iter_mut().zip(&a.data[lo..hi]) {
            *s += *v;
        }
    }
    for s in mean.iter_mut() {
        *s *= inv_m;
    }
    for a in acts.iter_mut() {
        a.data[lo..hi].copy_from_slice(&mean);
    }
}

/// Gradient of [`mean_pool_shared`]: every channel's pre-pool map receives
/// 1/M of the summed upstream gradient on the shared map.
fn mean_pool_backward<T: Scalar>(grads: &mut [Tensor<T>], k: usize, c: usize, plane: usize) {
    let m = grads.len();
    let inv_m = T::one() / T::from_f64_lossy(m as f64);
    let lo = (c - k) * plane;
    let hi = c * plane;
    let mut sum = vec![T::zero(); hi - lo];
    for g in grads.iter() {
        for (s, v) in sum.iter_mut().zip(&g.data[lo..hi]) {
            *s += *v;
        }
    }
    for s in sum.iter_mut() {
        *s *= inv_m;
    }
    for g in grads.iter_mut() {
        g.data[lo..hi].copy_from_slice(&sum);
    }
}

/// Per-feature mean and (biased) variance over all channels and spatial
/// positions.
fn batch_stats<T: Scalar>(acts: &[Tensor<T>], n_feat: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let count = T::from_f64_lossy((acts.len() * plane) as f64);
    let mut mean = vec![T::zero(); n_feat];
    for a in acts {
        for f in 0..n_feat {
            mean[f] += lane_sum(&a.data[f * plane..(f + 1) * plane]);
        }
    }
    for v in mean.iter_mut() {
        *v = *v / count;
    }
    let mut var = vec![T::zero(); n_feat];
    for a in acts {
        for f in 0..n_feat {
            var[f] += lane_sum_sq_dev(&a.data[f * plane..(f + 1) * plane], mean[f]);
        }
    }
    for v in var.iter_mut() {
        *v = *v / count;
    }
    (mean, var)
}

fn normalize<T: Scalar>(
    acts: &[Tensor<T>],
    mean: &[T],
    inv_std: &[T],
    n_feat: usize,
    plane: usize,
) -> Vec<Tensor<T>> {
    acts.iter()
        .map(|a| {
            let mut out = Tensor::zeros(&a.shape);
            for f in 0..n_feat {
                let (mu, is) = (mean[f], inv_std[f]);
                for (o, x) in out.data[f * plane..(f + 1) * plane]
                    .iter_mut()
                    .zip(&a.data[f * plane..(f + 1) * plane])
                {
                    *o = (*x - mu) * is;
                }
            }
            out
        })
        .collect()
}

/// Batch-norm backward over channels+spatial statistics. Returns dL/dx and
/// accumulates dgamma/dbeta.
#[allow(clippy::too_many_arguments)]
fn batchnorm_backward<T: Scalar>(
    dout: &[Tensor<T>],
    xhat: &[Tensor<T>],
    inv_std: &[T],
    gamma: &Tensor<T>,
    dgamma: &mut Tensor<T>,
    dbeta: &mut Tensor<T>,
    n_feat: usize,
    plane: usize,
) -> Vec<Tensor<T>> {
    let m = dout.len();
    let count = T::from_f64_lossy((m * plane) as f64);

    let mut sum_dxhat = vec![T::zero(); n_feat];
    let mut sum_dxhat_xhat = vec![T::zero(); n_feat];
    for (dy, xh) in dout.iter().zip(xhat) {
        for f in 0..n_feat {
            let g = gamma.data[f];
            // (sum d, sum d*xhat) drive everything here: the gradients of
            // scale/shift and the normalization backward terms.
            let (sum_d, sum_dx) = lane_sum_pair(
                &dy.data[f * plane..(f + 1) * plane],
                &xh.data[f * plane..(f + 1) * plane],
            );
            dgamma.data[f] += sum_dx;
            dbeta.data[f] += sum_d;
            sum_dxhat[f] += g * sum_d;
            sum_dxhat_xhat[f] += g * sum_dx;
        }
    }

    dout.iter()
        .zip(xhat)
        .map(|(dy, xh)| {
            let mut dx = Tensor::zeros(&dy.shape);
            for f in 0..n_feat {
                let g = gamma.data[f];
                let is = inv_std[f];
                let s = sum_dxhat[f];
                let sx = sum_dxhat_xhat[f];
                for ((d, x), o) in dy.data[f * plane..(f + 1) * plane]
                    .iter()
                    .zip(&xh.data[f * plane..(f + 1) * plane])
                    .zip(dx.data[f * plane..(f + 1) * plane].iter_mut())
                {
                    let dxh = *d * g;
                    *o = is * (dxh - (s + *x * sx) / count);
                }
            }
            dx
        })
        .collect()
}

fn maxpool2x2<T: Scalar>(x: &Tensor<T>, c: usize, h: usize, w: usize) -> (Tensor<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, ho, wo]);
    let mut argmax = vec![0u32; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let base = ch * h * w + (2 * oy) * w + 2 * ox;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                let mut best_v = x.data[cand[0]];
                for &idx in &cand[1..] {
                    if x.data[idx] > best_v {
                        best_v = x.data[idx];
                        best = idx;
                    }
                }
                let flat = ch * ho * wo + oy * wo + ox;
                out.data[flat] = best_v;
                argmax[flat] = best as u32;
            }
        }
    }
    (out, argmax)
}

/// Standalone cross-channel layer: convolve every channel with shared
/// kernels, then replace the last `k_xc` maps by their element-wise mean
/// over all channels.
pub fn cross_channel_layer<T: Scalar>(
    inputs: &[Tensor<T>],
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    k_xc: usize,
) -> Result<Vec<Tensor<T>>> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no input channels".into()));
    }
    let shape = &inputs[0].shape;
    if shape.len() != 3 {
        return Err(Error::InvalidConfig("inputs must be C x H x W".into()));
    }
    if inputs.iter().any(|i| i.shape != *shape) {
        return Err(Error::InvalidConfig("all channels must share a shape".into()));
    }
    let (c_in, h, w) = (shape[0], shape[1], shape[2]);
    if kernels.shape.len() != 4 || kernels.shape[1] != c_in || kernels.shape[2] != 3 || kernels.shape[3] != 3 {
        return Err(Error::InvalidConfig(format!(
            "kernels must be C_out x {c_in} x 3 x 3, got {:?}",
            kernels.shape
        )));
    }
    let c_out = kernels.shape[0];
    if bias.len() != c_out || k_xc > c_out {
        return Err(Error::InvalidConfig("bias/k_xc inconsistent with kernels".into()));
    }
    let mut outs: Vec<Tensor<T>> = inputs
        .iter()
        .map(|x| {
            let mut out = Tensor::zeros(&[c_out, h, w]);
            conv3x3_into(x, c_in, h, w, kernels, bias, c_out, &mut out);
            out
        })
        .collect();
    if k_xc > 0 {
        mean_pool_shared(&mut outs, k_xc, c_out, h * w);
    }
    Ok(outs)
}

/// Plain 3x3 convolution of a single channel, exposed for tests and the
/// standalone layer: `input` is C_in x H x W, `kernels` C_out x C_in x 3 x 3.
pub fn conv3x3_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let outs = cross_channel_layer(std::slice::from_ref(input), kernels, bias, 0)?;
    Ok(outs.into_iter().next().unwrap())
}

/// Standalone batch normalization over a batch of same-shape tensors:
/// statistics per feature map (leading axis) across the batch and all
/// remaining axes. Train mode normalizes with batch statistics and folds
/// them into the running statistics with momentum 0.9; eval mode uses the
/// stored running statistics. Variance degenerate batches are handled by
/// the epsilon.
pub fn batch_norm<T: Scalar>(
    inputs: &[Tensor<T>],
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: Mode,
) -> Result<Vec<Tensor<T>>> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let shape = &inputs[0].shape;
    if inputs.iter().any(|x| &x.shape != shape) {
        return Err(Error::InvalidConfig("batch tensors must share a shape".into()));
    }
    let n_feat = gamma.len();
    if shape.first() != Some(&n_feat)
        || beta.len() != n_feat
        || running_mean.len() != n_feat
        || running_var.len() != n_feat
    {
        return Err(Error::InvalidConfig(
            "parameter lengths must match the leading axis".into(),
        ));
    }
    let plane = inputs[0].len() / n_feat;

    let xhat = match mode {
        Mode::Train => {
            let (mean, var) = batch_stats(inputs, n_feat, plane);
            let inv_std: Vec<T> = var
                .iter()
                .map(|&v| T::one() / (v + T::from_f64_lossy(BN_EPS)).sqrt())
                .collect();
            let xhat = normalize(inputs, &mean, &inv_std, n_feat, plane);
            let momentum = T::from_f64_lossy(BN_MOMENTUM);
            let one_minus = T::one() - momentum;
            for (r, b) in running_mean.data.iter_mut().zip(&mean) {
                *r = momentum * *r + one_minus * *b;
            }
            for (r, b) in running_var.data.iter_mut().zip(&var) {
                *r = momentum * *r + one_minus * *b;
            }
            xhat
        }
        Mode::Eval => {
            let inv_std: Vec<T> = running_var
                .data
                .iter()
                .map(|&v| T::one() / (v + T::from_f64_lossy(BN_EPS)).sqrt())
                .collect();
            normalize(inputs, &running_mean.data, &inv_std, n_feat, plane)
        }
    };
    Ok(xhat
        .into_iter()
        .map(|x| {
            let mut y = Tensor::zeros(&x.shape);
            for f in 0..n_feat {
                let (g, b) = (gamma.data[f], beta.data[f]);
                for (yo, xi) in y.data[f * plane..(f + 1) * plane]
                    .iter_mut()
                    .zip(&x.data[f * plane..(f + 1) * plane])
                {
                    *yo = g * *xi + b;
                }
            }
            y
        })
        .collect())
}
