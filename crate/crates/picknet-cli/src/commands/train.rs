use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use picknet_core::dsp::FeatureKind;
use picknet_core::model::{load_checkpoint, save_checkpoint, ModelConfig, PickNet};
use picknet_core::sim::read_manifest;
use picknet_core::train::{train, Dataset, OptimizerKind, TrainConfig};

use crate::config::TrainFileConfig;
use crate::logging::Logger;
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest (from `picknet simulate`). May also come from the
    /// config file's `data_manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config file (keys: learning_rate, batch_frames, epochs,
    /// optimizer, seed, feature_kind, data_manifest).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// key=value overrides applied over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Resume training from an existing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Train the variant without cross-channel layers.
    #[arg(long)]
    pub baseline: bool,

    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_frames: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// `adam` or `sgd`.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `amplitude` or `logmel`.
    #[arg(long)]
    pub feature_kind: Option<String>,
}

pub fn run(args: TrainArgs, logger: &mut Logger) -> CliResult<()> {
    // Layered config: defaults < file < --set < explicit flags.
    let mut cfg = TrainConfig::default();
    let mut file_cfg = match &args.config {
        Some(path) => TrainFileConfig::load(path)?,
        None => TrainFileConfig::default(),
    };
    for pair in &args.sets {
        file_cfg.set(pair)?;
    }
    file_cfg.apply(&mut cfg)?;
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_frames {
        cfg.batch_frames = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = &args.optimizer {
        cfg.optimizer = OptimizerKind::from_str(v).map_err(|e| CliError::usage(e.to_string()))?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.feature_kind {
        cfg.feature_kind = FeatureKind::from_str(v).map_err(|e| CliError::usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let manifest_path = args
        .manifest
        .clone()
        .or(file_cfg.data_manifest.clone())
        .ok_or_else(|| CliError::usage("no dataset: pass --manifest or set data_manifest"))?;
    if !manifest_path.is_file() {
        return Err(CliError::usage(format!(
            "manifest {} does not exist",
            manifest_path.display()
        )));
    }
    logger.event(
        "config",
        serde_json::json!({
            "command": "train",
            "manifest": manifest_path,
            "out": args.out,
            "resume": args.resume,
            "baseline": args.baseline,
            "effective": serde_json::to_value(&cfg).unwrap_or_default(),
        }),
    );
    println!(
        "training: lr={} batch={} epochs={} optimizer={:?} seed={} features={}",
        cfg.learning_rate,
        cfg.batch_frames,
        cfg.epochs,
        cfg.optimizer,
        cfg.seed,
        cfg.feature_kind.as_str()
    );

    let records = read_manifest(&manifest_path)?;
    let base = manifest_path
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let dataset = Dataset::from_records(&records, &base, cfg.feature_kind)?;

    let mut net: PickNet<f32> = match &args.resume {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!(
                    "resume checkpoint {} does not exist",
                    path.display()
                )));
            }
            let ck = load_checkpoint(path)?;
            if ck.config.feature_kind != cfg.feature_kind {
                return Err(CliError::usage(format!(
                    "resume checkpoint expects {} features, training is configured for {}",
                    ck.config.feature_kind.as_str(),
                    cfg.feature_kind.as_str()
                )));
            }
            PickNet::from_checkpoint(&ck)?
        }
        None => {
            let model_cfg = if args.baseline {
                ModelConfig::baseline_for(cfg.feature_kind)
            } else {
                ModelConfig::default_for(cfg.feature_kind)
            };
            PickNet::new(model_cfg, cfg.seed)?
        }
    };

    let mut steps = 0usize;
    let mut last_loss = f64::NAN;
    train(&mut net, &dataset, &cfg, |log| {
        steps = log.step;
        last_loss = log.mean_loss;
        logger.record(log);
    })
    .map_err(|e| CliError::runtime(e.to_string()))?;

    save_checkpoint(&net.to_checkpoint(), &args.out)?;
    println!(
        "trained {} steps over {} samples; final batch loss {last_loss:.6}; checkpoint -> {}",
        steps,
        dataset.n_samples(),
        args.out.display()
    );
    Ok(())
}
