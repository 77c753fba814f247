//! The channel-selection network: shared-parameter convolution stacks over
//! per-channel feature patches, with optional cross-channel layers that
//! mean-pool a designated subset of feature maps across all channels. One
//! scalar per channel feeds a softmax over channels, so the architecture
//! runs unchanged for any channel count and reordering the input channels
//! reorders the outputs identically.

mod checkpoint;
mod network;
mod tensor;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, ModelCheckpoint,
    CHECKPOINT_VERSION,
};
pub use network::{
    batch_norm, conv3x3_forward, cross_channel_layer, BnStatsUpdate, ForwardCache, Gradients,
    PickNet,
};
pub use tensor::{Scalar, Tensor};

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureKind;
use crate::error::{Error, Result};

/// Default fraction of convolution kernels used for cross-channel processing.
pub const DEFAULT_XC_FRACTION: f64 = 1.0 / 8.0;

fn default_xc_fraction() -> f64 {
    DEFAULT_XC_FRACTION
}

/// One layer of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    /// 3x3 convolution with zero "same" padding. When `cross_channel` is
    /// set, `xc_fraction * out_channels` of its feature maps are mean-pooled
    /// across all input channels and shared back to every channel.
    #[serde(rename = "conv3x3")]
    Conv3x3 {
        out_channels: usize,
        #[serde(default)]
        cross_channel: bool,
        #[serde(default = "default_xc_fraction")]
        xc_fraction: f64,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm,
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    #[serde(rename = "flatten")]
    Flatten,
    #[serde(rename = "dense")]
    Dense { out_units: usize },
}

impl LayerSpec {
    pub fn conv(out_channels: usize) -> Self {
        LayerSpec::Conv3x3 {
            out_channels,
            cross_channel: false,
            xc_fraction: DEFAULT_XC_FRACTION,
        }
    }

    pub fn conv_xc(out_channels: usize) -> Self {
        LayerSpec::Conv3x3 {
            out_channels,
            cross_channel: true,
            xc_fraction: DEFAULT_XC_FRACTION,
        }
    }

    /// Number of cross-channel kernels, or 0 for purely local layers.
    pub fn xc_kernels(&self) -> usize {
        match self {
            LayerSpec::Conv3x3 {
                out_channels,
                cross_channel: true,
                xc_fraction,
            } => (xc_fraction * *out_channels as f64).round() as usize,
            _ => 0,
        }
    }
}

/// Network architecture description. `input_shape` is (time frames, feature
/// dim) of one channel's patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
    pub input_shape: (usize, usize),
    pub feature_kind: FeatureKind,
    /// If set, the cross-channel mean pooling happens after the batch-norm
    /// layer that follows the convolution instead of directly on the
    /// convolution outputs.
    #[serde(default)]
    pub xc_pool_after_bn: bool,
}

/// Intermediate activation shape while walking the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Extent {
    Maps { c: usize, h: usize, w: usize },
    Flat { n: usize },
}

impl ModelConfig {
    /// The stock architecture used throughout: three convolution blocks (the
    /// last two cross-channel), then two dense layers down to one scalar.
    pub fn default_for(feature_kind: FeatureKind) -> Self {
        let d = match feature_kind {
            FeatureKind::Amplitude => 257,
            FeatureKind::LogMel => 80,
        };
        ModelConfig {
            layers: vec![
                LayerSpec::conv(16),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::conv_xc(32),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::conv_xc(32),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_units: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_units: 1 },
            ],
            input_shape: (crate::dsp::PATCH_FRAMES, d),
            feature_kind,
            xc_pool_after_bn: false,
        }
    }

    /// The same stack with every cross-channel flag cleared; each channel is
    /// then processed fully independently before the softmax.
    pub fn baseline_for(feature_kind: FeatureKind) -> Self {
        let mut cfg = Self::default_for(feature_kind);
        for layer in &mut cfg.layers {
            if let LayerSpec::Conv3x3 { cross_channel, .. } = layer {
                *cross_channel = false;
            }
        }
        cfg
    }

    /// Walk the layer stack, checking structural invariants and returning
    /// the activation shape after every layer.
    pub(crate) fn shape_walk(&self) -> Result<Vec<Extent>> {
        let (h0, w0) = self.input_shape;
        if h0 == 0 || w0 == 0 {
            return Err(Error::InvalidConfig("input_shape must be positive".into()));
        }
        let mut ext = Extent::Maps { c: 1, h: h0, w: w0 };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            ext = match (layer, ext) {
                (
                    LayerSpec::Conv3x3 {
                        out_channels,
                        cross_channel,
                        xc_fraction,
                    },
                    Extent::Maps { h, w, .. },
                ) => {
                    if *out_channels == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "layer {i}: out_channels must be >= 1"
                        )));
                    }
                    if *cross_channel {
                        if !(0.0..=1.0).contains(xc_fraction) {
                            return Err(Error::InvalidConfig(format!(
                                "layer {i}: xc_fraction must be in [0, 1]"
                            )));
                        }
                        let k = xc_fraction * *out_channels as f64;
                        if (k - k.round()).abs() > 1e-9 {
                            return Err(Error::InvalidConfig(format!(
                                "layer {i}: xc_fraction * out_channels must be an integer, got {k}"
                            )));
                        }
                        if self.xc_pool_after_bn
                            && layer.xc_kernels() > 0
                            && !matches!(self.layers.get(i + 1), Some(LayerSpec::BatchNorm))
                        {
                            return Err(Error::InvalidConfig(format!(
                                "layer {i}: xc_pool_after_bn requires a batchnorm layer \
                                 directly after each cross-channel convolution"
                            )));
                        }
                    }
                    Extent::Maps {
                        c: *out_channels,
                        h,
                        w,
                    }
                }
                (LayerSpec::Conv3x3 { .. }, Extent::Flat { .. }) => {
                    return Err(Error::InvalidConfig(format!(
                        "layer {i}: conv3x3 cannot follow flatten/dense"
                    )));
                }
                (LayerSpec::BatchNorm | LayerSpec::Relu, e) => e,
                (LayerSpec::MaxPool2x2, Extent::Maps { c, h, w }) => {
                    if h < 2 || w < 2 {
                        return Err(Error::InvalidConfig(format!(
                            "layer {i}: maxpool2x2 on {h}x{w} map is degenerate"
                        )));
                    }
                    Extent::Maps {
                        c,
                        h: h / 2,
                        w: w / 2,
                    }
                }
                (LayerSpec::MaxPool2x2, Extent::Flat { .. }) => {
                    return Err(Error::InvalidConfig(format!(
                        "layer {i}: maxpool2x2 cannot follow flatten/dense"
                    )));
                }
                (LayerSpec::Flatten, Extent::Maps { c, h, w }) => Extent::Flat { n: c * h * w },
                (LayerSpec::Flatten, Extent::Flat { n }) => Extent::Flat { n },
                (LayerSpec::Dense { out_units }, Extent::Flat { .. }) => {
                    if *out_units == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "layer {i}: out_units must be >= 1"
                        )));
                    }
                    Extent::Flat { n: *out_units }
                }
                (LayerSpec::Dense { .. }, Extent::Maps { .. }) => {
                    return Err(Error::InvalidConfig(format!(
                        "layer {i}: dense requires flatten first"
                    )));
                }
            };
            out.push(ext);
        }
        match out.last() {
            Some(Extent::Flat { n: 1 }) if matches!(self.layers.last(), Some(LayerSpec::Dense { .. })) => {
                Ok(out)
            }
            _ => Err(Error::InvalidConfig(
                "final layer must be dense with out_units = 1".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_walk().map(|_| ())
    }
}

/// Evaluation mode for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with per-call batch statistics and report running-stat
    /// updates in the cache.
    Train,
    /// Normalize with stored running statistics.
    Eval,
}

/// Probability of each device being the closest one at a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPosteriors {
    pub p: Vec<f64>,
    pub frame: usize,
}

impl ChannelPosteriors {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.p.iter().enumerate() {
            if *v > self.p[best] {
                best = i;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() {
            return Err(Error::InvalidInput("posterior vector is empty".into()));
        }
        let sum: f64 = self.p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput(format!(
                "posteriors must lie in [0,1] and sum to 1, got sum {sum}"
            )));
        }
        Ok(())
    }
}
