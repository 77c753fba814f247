//! Python bindings: the main types and operations of the channel-selection
//! toolkit, close to the CLI's surface. Build with
//! `cargo build -p picknet-py --release` and import the produced cdylib as
//! `picknet` (see python/smoke_test.py).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use picknet_core::dsp::{wav, AudioClip, FeaturePatch};
use picknet_core::eval::{evaluate_manifest, EvalOptions};
use picknet_core::model::{
    load_checkpoint, save_checkpoint, Mode, ModelCheckpoint, ModelConfig, PickNet,
};
use picknet_core::sim::{read_manifest, simulate_dataset, synthetic_speech, SimulateOptions};
use picknet_core::stream::{diarize, format_rttm, process_stream, StreamConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Generate a deterministic speech-like test clip and write it as WAV.
#[pyfunction]
#[pyo3(signature = (path, seed, duration_s, sample_rate = 16_000))]
fn synth_speech(path: PathBuf, seed: u64, duration_s: f64, sample_rate: u32) -> PyResult<()> {
    let clip = synthetic_speech(seed, duration_s, sample_rate);
    wav::write(&path, &clip, wav::SampleFormat::Float32).map_err(err)
}

/// Read a mono WAV; returns (samples, sample_rate).
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let clip = wav::read(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok((clip.samples, clip.sample_rate))
}

/// Write a mono float32 WAV.
#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    let clip = AudioClip::new(samples, sample_rate).map_err(err)?;
    wav::write(&path, &clip, wav::SampleFormat::Float32).map_err(err)
}

/// Simulate a training dataset; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (clean_dir, out_dir, n_samples, seed = 0, noise_dir = None))]
fn simulate(
    clean_dir: PathBuf,
    out_dir: PathBuf,
    n_samples: usize,
    seed: u64,
    noise_dir: Option<PathBuf>,
) -> PyResult<String> {
    let opts = SimulateOptions {
        n_samples,
        seed,
        noise_dir,
    };
    let (manifest, _) = simulate_dataset(&clean_dir, &out_dir, &opts).map_err(err)?;
    Ok(manifest.to_string_lossy().into_owned())
}

/// A loaded channel-selection model.
#[pyclass]
struct Model {
    net: PickNet<f32>,
}

#[pymethods]
impl Model {
    /// Fresh default architecture ("logmel" or "amplitude" features).
    #[staticmethod]
    #[pyo3(signature = (feature_kind = "logmel", seed = 0))]
    fn init(feature_kind: &str, seed: u64) -> PyResult<Self> {
        let kind = feature_kind.parse().map_err(err)?;
        let net = PickNet::new(ModelConfig::default_for(kind), seed).map_err(err)?;
        Ok(Self { net })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = load_checkpoint(&path).map_err(err)?;
        Ok(Self {
            net: PickNet::from_checkpoint(&ck).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.net.to_checkpoint(), &path).map_err(err)
    }

    #[getter]
    fn feature_kind(&self) -> &'static str {
        self.net.config().feature_kind.as_str()
    }

    /// (patch_frames, feature_dim) expected per channel.
    #[getter]
    fn input_shape(&self) -> (usize, usize) {
        self.net.config().input_shape
    }

    /// Posterior probabilities for one frame: `patches` is a list of
    /// per-channel 2D lists, each patch_frames x feature_dim.
    fn forward(&self, patches: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        let (rows, dim) = self.net.config().input_shape;
        let patches: Vec<FeaturePatch> = patches
            .into_iter()
            .map(|rows_in| {
                if rows_in.len() != rows || rows_in.iter().any(|r| r.len() != dim) {
                    return Err(PyValueError::new_err(format!(
                        "each patch must be {rows} x {dim}"
                    )));
                }
                Ok(FeaturePatch {
                    values: rows_in.into_iter().flatten().collect(),
                    dim,
                    center_index: 0,
                })
            })
            .collect::<PyResult<_>>()?;
        let (post, _) = self.net.forward(&patches, 0, Mode::Eval).map_err(err)?;
        Ok(post.p)
    }

    fn __repr__(&self) -> String {
        let ModelCheckpoint { config, .. } = self.net.to_checkpoint();
        format!(
            "Model(features='{}', input={}x{}, layers={})",
            config.feature_kind.as_str(),
            config.input_shape.0,
            config.input_shape.1,
            config.layers.len()
        )
    }
}

/// Enhance one recording (one WAV per device). Returns a dict with frame
/// and evaluation counts. Optionally writes the posterior timeline (JSONL)
/// and an RTTM diarization.
#[pyfunction]
#[pyo3(signature = (inputs, checkpoint, out_wav, subsample_n = 3, timeline_path = None, rttm_path = None))]
fn enhance<'py>(
    py: Python<'py>,
    inputs: Vec<PathBuf>,
    checkpoint: PathBuf,
    out_wav: PathBuf,
    subsample_n: usize,
    timeline_path: Option<PathBuf>,
    rttm_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let ck = load_checkpoint(&checkpoint).map_err(err)?;
    let net: PickNet<f32> = PickNet::from_checkpoint(&ck).map_err(err)?;
    let clips = inputs
        .iter()
        .map(wav::read)
        .collect::<picknet_core::Result<Vec<_>>>()
        .map_err(err)?;
    let config = StreamConfig {
        subsample_n,
        feature_kind: ck.config.feature_kind,
        ..StreamConfig::default()
    };
    let out = process_stream(&clips, &net, &config).map_err(err)?;
    wav::write(&out_wav, &out.enhanced, wav::SampleFormat::Float32).map_err(err)?;
    if let Some(path) = timeline_path {
        std::fs::write(&path, out.timeline.to_jsonl().map_err(err)?)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
    }
    if let Some(path) = rttm_path {
        let segments = diarize(&out.timeline, 0.2);
        std::fs::write(&path, format_rttm(&segments, "session"))
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
    }
    let dict = PyDict::new(py);
    dict.set_item("n_frames", out.stats.n_frames)?;
    dict.set_item("n_evals", out.stats.n_evals)?;
    dict.set_item("macs", out.stats.macs)?;
    dict.set_item(
        "posteriors_sum_ok",
        out.timeline
            .entries
            .iter()
            .all(|e| (e.p.iter().sum::<f64>() - 1.0).abs() < 1e-6),
    )?;
    Ok(dict)
}

/// Closest-microphone accuracy of a checkpoint over a simulated manifest.
#[pyfunction]
#[pyo3(signature = (manifest, checkpoint, subsample_n = 1))]
fn evaluate<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    checkpoint: PathBuf,
    subsample_n: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ck = load_checkpoint(&checkpoint).map_err(err)?;
    let net: PickNet<f32> = PickNet::from_checkpoint(&ck).map_err(err)?;
    let records = read_manifest(&manifest).map_err(err)?;
    let base = manifest.parent().map(PathBuf::from).unwrap_or_default();
    let opts = EvalOptions {
        subsample_n,
        feature_kind: ck.config.feature_kind,
        ..EvalOptions::default()
    };
    let report = evaluate_manifest(&records, &base, &net, &opts).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("n_samples", report.n_samples)?;
    dict.set_item("gated_frames", report.gated_frames)?;
    dict.set_item("model_accuracy", report.model_accuracy)?;
    dict.set_item("baseline_accuracy", report.baseline_accuracy)?;
    dict.set_item("amp_snr_db", report.amp_snr_db)?;
    Ok(dict)
}

#[pymodule]
fn picknet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth_speech, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(enhance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
