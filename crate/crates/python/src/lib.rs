//! Python bindings: signals are plain lists of floats, labels lists of 0/1.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use silence_denoise::baselines::{gtsi_denoise_signal, spectral_gate as gate, SpectralGateConfig};
use silence_denoise::datagen::{self, toy, MixtureSample};
use silence_denoise::metrics;
use silence_denoise::models::{DenoiseOptions, ModelCheckpoint, ModelSpec, SilenceModel};
use silence_denoise::segments::segment_bounds;
use silence_denoise::spectro::StftEngine;
use silence_denoise::training::{self, Phase, RunOptions, TrainingConfig, TrainingSet};
use silence_denoise::{Error, SegmentLabels, StftConfig, Waveform};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Argument(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn wave(samples: Vec<f64>, sample_rate: u32) -> PyResult<Waveform> {
    Waveform::new(samples, sample_rate).map_err(py_err)
}

fn labels(v: Vec<u8>, sample_rate: u32) -> PyResult<SegmentLabels> {
    SegmentLabels::new(v, sample_rate).map_err(py_err)
}

/// Complex spectrogram with `n_frames` rows of `n_freq` bins.
#[pyclass(name = "Spectrogram", module = "silence_denoise", frozen)]
pub struct PySpectrogram {
    inner: silence_denoise::Spectrogram,
}

#[pymethods]
impl PySpectrogram {
    /// `(n_freq, n_frames)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n_freq(), self.inner.n_frames())
    }

    /// Real parts, one list per frame.
    fn real(&self) -> Vec<Vec<f64>> {
        let (t, f) = (self.inner.n_frames(), self.inner.n_freq());
        self.inner.planes()[..t * f].chunks(f).map(|c| c.to_vec()).collect()
    }

    fn imag(&self) -> Vec<Vec<f64>> {
        let (t, f) = (self.inner.n_frames(), self.inner.n_freq());
        self.inner.planes()[t * f..].chunks(f).map(|c| c.to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Spectrogram(n_freq={}, n_frames={})", self.inner.n_freq(), self.inner.n_frames())
    }
}

fn engine(sample_rate: u32) -> PyResult<StftEngine> {
    StftEngine::new(StftConfig { sample_rate, ..StftConfig::default() }).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16000))]
fn stft(samples: Vec<f64>, sample_rate: u32) -> PyResult<PySpectrogram> {
    Ok(PySpectrogram { inner: engine(sample_rate)?.forward(&samples).map_err(py_err)? })
}

#[pyfunction]
fn istft(spec: &PySpectrogram, length: usize) -> PyResult<Vec<f64>> {
    engine(spec.inner.config().sample_rate)?.inverse(&spec.inner, length).map_err(py_err)
}

/// Silent-segment labels of a clean recording (peak-normalized first).
#[pyfunction]
#[pyo3(signature = (clean, sample_rate = 16000))]
fn label_silence(clean: Vec<f64>, sample_rate: u32) -> PyResult<Vec<u8>> {
    let w = silence_denoise::audio::normalize_peak(&wave(clean, sample_rate)?);
    Ok(datagen::label_silence(&w).labels)
}

/// Returns `(mixture, scaled_noise)` at exactly `snr_db`.
#[pyfunction]
#[pyo3(signature = (clean, noise, snr_db, sample_rate = 16000))]
fn mix_at_snr(clean: Vec<f64>, noise: Vec<f64>, snr_db: f64, sample_rate: u32) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = datagen::mix_at_snr(&wave(clean, sample_rate)?, &wave(noise, sample_rate)?, snr_db).map_err(py_err)?;
    Ok((s.mixture.into_samples(), s.noise.into_samples()))
}

/// Labelled toy mixtures: dicts with `id`, `clean`, `noise`, `mixture`,
/// `snr_db` and `labels`.
#[pyfunction]
#[pyo3(signature = (n_clips, seconds = 2.0, seed = 0))]
fn toy_mixtures<'py>(py: Python<'py>, n_clips: usize, seconds: f64, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    if !(seconds > 0.0) {
        return Err(PyValueError::new_err("seconds must be positive"));
    }
    let len = (seconds * 16000.0).round() as usize;
    let items = toy::toy_mixtures(n_clips, len, seed).map_err(py_err)?;
    items
        .into_iter()
        .map(|(id, s, l)| {
            let d = PyDict::new(py);
            d.set_item("id", id)?;
            d.set_item("snr_db", s.snr_db)?;
            d.set_item("clean", s.clean.into_samples())?;
            d.set_item("noise", s.noise.into_samples())?;
            d.set_item("mixture", s.mixture.into_samples())?;
            d.set_item("labels", l.labels)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (reference, test, sample_rate = 16000))]
fn ssnr(reference: Vec<f64>, test: Vec<f64>, sample_rate: u32) -> PyResult<f64> {
    metrics::ssnr(&wave(reference, sample_rate)?, &wave(test, sample_rate)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (reference, test, sample_rate = 16000))]
fn stoi(reference: Vec<f64>, test: Vec<f64>, sample_rate: u32) -> PyResult<f64> {
    metrics::stoi(&wave(reference, sample_rate)?, &wave(test, sample_rate)?).map_err(py_err)
}

/// CSIG/CBAK/COVL from a PESQ score computed elsewhere.
#[pyfunction]
#[pyo3(signature = (reference, test, pesq, sample_rate = 16000))]
fn composite<'py>(
    py: Python<'py>,
    reference: Vec<f64>,
    test: Vec<f64>,
    pesq: f64,
    sample_rate: u32,
) -> PyResult<Bound<'py, PyDict>> {
    let c = metrics::composite(&wave(reference, sample_rate)?, &wave(test, sample_rate)?, Some(pesq))
        .map_err(py_err)?
        .ok_or_else(|| PyRuntimeError::new_err("composite scores unavailable"))?;
    let d = PyDict::new(py);
    d.set_item("csig", c.csig)?;
    d.set_item("cbak", c.cbak)?;
    d.set_item("covl", c.covl)?;
    Ok(d)
}

#[pyfunction]
fn sid_metrics<'py>(py: Python<'py>, pred: Vec<u8>, truth: Vec<u8>) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::sid_metrics(&labels(pred, 16000)?, &labels(truth, 16000)?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("tp", r.tp)?;
    d.set_item("tn", r.tn)?;
    d.set_item("fp", r.fp)?;
    d.set_item("fn", r.fn_)?;
    d.set_item("precision", r.precision)?;
    d.set_item("recall", r.recall)?;
    d.set_item("f1", r.f1)?;
    d.set_item("accuracy", r.accuracy)?;
    Ok(d)
}

/// Area under the ROC curve with `positive` as the positive class; `None`
/// when only one class is present.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<Option<f64>> {
    if scores.len() != positive.len() {
        return Err(PyValueError::new_err("scores and positive differ in length"));
    }
    Ok(metrics::roc_auc(&scores, &positive))
}

/// Spectral subtraction with the noise spectrum measured over the segments
/// labelled silent.
#[pyfunction]
#[pyo3(signature = (noisy, silent_labels, sample_rate = 16000))]
fn spectral_gate(noisy: Vec<f64>, silent_labels: Vec<u8>, sample_rate: u32) -> PyResult<Vec<f64>> {
    let x = wave(noisy, sample_rate)?;
    let l = labels(silent_labels, sample_rate)?;
    Ok(gate(&x, &l, &SpectralGateConfig::default()).map_err(py_err)?.into_samples())
}

/// Detector, noise estimator and noise remover with their weights.
#[pyclass(name = "Model", module = "silence_denoise")]
pub struct PyModel {
    inner: SilenceModel,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized model of the `desk` or `paper` size.
    #[new]
    #[pyo3(signature = (preset = "desk", seed = 0))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        let spec = ModelSpec::preset(preset).ok_or_else(|| PyValueError::new_err(format!("unknown preset {preset:?}")))?;
        Ok(Self { inner: SilenceModel::new(spec, seed) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: ModelCheckpoint::load(path).map_err(py_err)?.model })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        ModelCheckpoint::new(self.inner.clone(), "python").save(path).map_err(py_err)
    }

    /// Trainable and running-statistic values across all components.
    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params("")
    }

    /// Segment confidences that each 1/30 s segment is silent.
    fn detect(&self, samples: Vec<f64>) -> PyResult<Vec<f64>> {
        let s = self.engine()?.forward(&samples).map_err(py_err)?;
        self.inner.sid_forward(&s, samples.len()).map_err(py_err)
    }

    /// Denoise a 16 kHz signal. With `silent_labels` the given intervals are
    /// used and the detector is skipped. Returns a dict with `denoised`,
    /// per-segment `mask` and `confidences` (None with labels).
    #[pyo3(signature = (samples, threshold = 0.5, silent_labels = None))]
    fn denoise<'py>(
        &self,
        py: Python<'py>,
        samples: Vec<f64>,
        threshold: f64,
        silent_labels: Option<Vec<u8>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let rate = self.inner.spec.stft.sample_rate;
        let x = wave(samples, rate)?;
        let out = match silent_labels {
            Some(l) => gtsi_denoise_signal(&self.inner, &x, &labels(l, rate)?),
            None => self.inner.denoise(&x, &DenoiseOptions { threshold, ..DenoiseOptions::default() }),
        }
        .map_err(py_err)?;
        let mask: Vec<f64> = segment_bounds(x.len(), rate)
            .into_iter()
            .map(|r| {
                let n = r.len().max(1) as f64;
                out.mask.values()[r].iter().sum::<f64>() / n
            })
            .collect();
        let d = PyDict::new(py);
        d.set_item("denoised", out.denoised.into_samples())?;
        d.set_item("mask", mask)?;
        d.set_item("confidences", out.confidences)?;
        Ok(d)
    }

    /// Train one phase in place on `(clean, noise)` pairs (mixture = clean +
    /// noise, labels from the clean signal). Returns the mean loss per epoch.
    #[pyo3(signature = (phase, cleans, noises, epochs = None, lr = None, batch_size = None, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        phase: &str,
        cleans: Vec<Vec<f64>>,
        noises: Vec<Vec<f64>>,
        epochs: Option<usize>,
        lr: Option<f64>,
        batch_size: Option<usize>,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let phase = Phase::parse(phase).ok_or_else(|| PyValueError::new_err(format!("unknown phase {phase:?}")))?;
        if phase == Phase::Finetune {
            return Err(PyValueError::new_err("finetune combines two checkpoints; train sid and denoiser_gt instead"));
        }
        if cleans.len() != noises.len() {
            return Err(PyValueError::new_err("cleans and noises differ in length"));
        }
        let rate = self.inner.spec.stft.sample_rate;
        let mut items = Vec::with_capacity(cleans.len());
        for (i, (c, n)) in cleans.into_iter().zip(noises).enumerate() {
            let (clean, noise) = (wave(c, rate)?, wave(n, rate)?);
            if clean.len() != noise.len() {
                return Err(PyValueError::new_err(format!("pair {i}: clean and noise differ in length")));
            }
            let mixture = wave(clean.samples().iter().zip(noise.samples()).map(|(a, b)| a + b).collect(), rate)?;
            let l = datagen::label_silence(&silence_denoise::audio::normalize_peak(&clean));
            let snr_db = datagen::measured_snr_db(&clean, &noise);
            let id = format!("py{i:04}");
            let sample = MixtureSample { clean, noise, mixture, snr_db, clean_id: id.clone(), noise_id: id.clone() };
            items.push((id, sample, l));
        }
        let data = TrainingSet::from_samples(items, self.inner.spec.stft).map_err(py_err)?;
        let mut cfg = TrainingConfig::desk(phase);
        cfg.seed = seed;
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        cfg.lr = lr.unwrap_or(cfg.lr);
        cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
        let model = self.inner.clone();
        let out = py
            .detach(|| training::train(model, &data, &cfg, &RunOptions::default()))
            .map_err(py_err)?;
        self.inner = out.checkpoint.model;
        Ok(out.history.iter().map(|h| h.loss.total).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(n_params={})", self.inner.n_params(""))
    }
}

impl PyModel {
    fn engine(&self) -> PyResult<StftEngine> {
        StftEngine::new(self.inner.spec.stft).map_err(py_err)
    }
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectrogram>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(stft, m)?)?;
    m.add_function(wrap_pyfunction!(istft, m)?)?;
    m.add_function(wrap_pyfunction!(label_silence, m)?)?;
    m.add_function(wrap_pyfunction!(mix_at_snr, m)?)?;
    m.add_function(wrap_pyfunction!(toy_mixtures, m)?)?;
    m.add_function(wrap_pyfunction!(ssnr, m)?)?;
    m.add_function(wrap_pyfunction!(stoi, m)?)?;
    m.add_function(wrap_pyfunction!(composite, m)?)?;
    m.add_function(wrap_pyfunction!(sid_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_gate, m)?)?;
    m.add("SAMPLE_RATE", silence_denoise::audio::SAMPLE_RATE)?;
    m.add("SEGMENTS_PER_SECOND", silence_denoise::segments::SEGMENTS_PER_SECOND)?;
    Ok(())
}

#[pymodule]
#[pyo3(name = "silence_denoise")]
fn silence_denoise_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
