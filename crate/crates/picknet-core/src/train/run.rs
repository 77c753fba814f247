//! The training loop: shuffled frame batches, parallel forward/backward per
//! example, one optimizer update per batch.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::loss::frame_loss;
use super::optim::{Optimizer, OptimizerKind};
use crate::dsp::FeatureKind;
use crate::error::{Error, Result};
use crate::model::{Gradients, Mode, PickNet, Scalar};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_frames: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub feature_kind: FeatureKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_frames: 64,
            epochs: 1,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            feature_kind: FeatureKind::LogMel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_frames == 0 {
            return Err(Error::InvalidConfig("batch_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// One optimizer update over a batch of (sample, frame) indices. Examples
/// run forward/backward in parallel; gradients are reduced in index order so
/// the result is bitwise reproducible.
pub fn train_step<T: Scalar>(
    net: &mut PickNet<T>,
    optimizer: &mut Optimizer<T>,
    dataset: &Dataset,
    batch: &[(u32, u32)],
    step: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let results: Vec<(f64, Gradients<T>, crate::model::BnStatsUpdate<T>)> = batch
        .par_iter()
        .map(|&(s, t)| {
            let ex = dataset.example(s as usize, t as usize)?;
            let (post, cache) = net.forward(&ex.patches, t as usize, Mode::Train)?;
            let (loss, dldp) = frame_loss(&post.p, &ex.channel_amps, &ex.target_amp)?;
            let grads = net.backward(&cache, &dldp)?;
            Ok((loss, grads, cache.stats_update()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mean_loss = 0.0;
    let mut total: Option<Gradients<T>> = None;
    for (loss, grads, stats) in &results {
        mean_loss += loss;
        match &mut total {
            None => total = Some(grads.clone()),
            Some(acc) => acc.add_assign(grads),
        }
        net.apply_stats_update(stats);
    }
    mean_loss /= batch.len() as f64;
    let mut total = total.unwrap();
    total.scale(T::one() / T::from_f64_lossy(batch.len() as f64));

    if !mean_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            step,
            loss: mean_loss,
        });
    }
    optimizer.step(&mut net.trainable_params_mut(), &total.tensors);
    Ok(mean_loss)
}

/// Train for `config.epochs` passes over every frame of the dataset,
/// shuffled per epoch with the run seed. `on_step` receives one entry per
/// optimizer update.
pub fn train<T: Scalar>(
    net: &mut PickNet<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<()> {
    config.validate()?;
    if net.config().feature_kind != config.feature_kind {
        return Err(Error::InvalidConfig(format!(
            "model expects {} features but training is configured for {}",
            net.config().feature_kind.as_str(),
            config.feature_kind.as_str()
        )));
    }
    let mut optimizer = Optimizer::for_network(config.optimizer, config.learning_rate, net);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames = dataset.all_frames();
    if frames.is_empty() {
        return Err(Error::InvalidInput("dataset has no frames".into()));
    }

    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        frames.shuffle(&mut rng);
        for batch in frames.chunks(config.batch_frames) {
            let start = std::time::Instant::now();
            let mean_loss = train_step(net, &mut optimizer, dataset, batch, step)?;
            step += 1;
            on_step(&StepLog {
                step,
                mean_loss,
                lr: config.learning_rate,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerSpec, ModelConfig};
    use crate::sim::{builtin_transients, make_training_sample, synthetic_speech};

    pub(crate) fn tiny_model_config(kind: FeatureKind) -> ModelConfig {
        let d = match kind {
            FeatureKind::Amplitude => 257,
            FeatureKind::LogMel => 80,
        };
        ModelConfig {
            layers: vec![
                LayerSpec::Conv3x3 {
                    out_channels: 4,
                    cross_channel: false,
                    xc_fraction: 0.25,
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
                LayerSpec::MaxPool2x2,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_units: 16 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_units: 1 },
            ],
            input_shape: (crate::dsp::PATCH_FRAMES, d),
            feature_kind: kind,
            xc_pool_after_bn: false,
        }
    }

    fn tiny_dataset() -> Dataset {
        let bank = builtin_transients(16_000);
        let samples: Vec<_> = (0..2)
            .map(|i| {
                let clean = synthetic_speech(40 + i, 1.1, 16_000);
                make_training_sample(&clean, 90 + i, &bank).unwrap()
            })
            .collect();
        Dataset::from_samples(&samples, FeatureKind::LogMel).unwrap()
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 1,
            batch_frames: 16,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = PickNet::<f32>::new(tiny_model_config(FeatureKind::LogMel), 5).unwrap();
            let mut losses = Vec::new();
            train(&mut net, &ds, &cfg, |log| losses.push(log.mean_loss)).unwrap();
            (net.to_checkpoint(), losses)
        };
        let (ck_a, losses_a) = run();
        let (ck_b, losses_b) = run();
        assert_eq!(losses_a, losses_b);
        assert_eq!(ck_a, ck_b);
        assert!(!losses_a.is_empty());
        assert!(losses_a.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn feature_kind_mismatch_is_rejected() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            feature_kind: FeatureKind::Amplitude,
            ..TrainConfig::default()
        };
        let mut net = PickNet::<f32>::new(tiny_model_config(FeatureKind::LogMel), 5).unwrap();
        assert!(matches!(
            train(&mut net, &ds, &cfg, |_| {}),
            Err(Error::InvalidConfig(_))
        ));
    }
}
