//! Mono waveforms, WAV I/O, resampling and clip preparation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::resample;

/// Canonical processing rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono PCM audio with float amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        ensure_arg!(sample_rate > 0, "sample rate must be positive");
        ensure_arg!(
            samples.iter().all(|v| v.is_finite()),
            "waveform contains non-finite samples"
        );
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|v| v.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }
}

/// Fixed-length clip geometry used to cut training material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            duration_s: 2.0,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl ClipSpec {
    pub fn n_samples(&self) -> Result<usize> {
        let n = self.duration_s * self.sample_rate as f64;
        ensure_arg!(
            n >= 1.0 && (n - n.round()).abs() < 1e-9,
            "clip of {} s at {} Hz is not a positive whole number of samples",
            self.duration_s,
            self.sample_rate
        );
        Ok(n.round() as usize)
    }
}

/// Decode a PCM (or float) WAV file, averaging channels down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            ensure_format(path, (1..=32).contains(&spec.bits_per_sample), "bit depth")?;
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
    };
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "non-finite sample values".into(),
        });
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Write 16-bit mono PCM; amplitudes outside [-1, 1] are clipped.
pub fn save_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &v in &w.samples {
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn ensure_format(path: &Path, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported {what}"),
        })
    }
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Band-limited rational resampling (see [`crate::resample`]).
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    ensure_arg!(target_rate > 0, "target rate must be positive");
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let out = resample::resample_rate(&w.samples, w.sample_rate, target_rate);
    Ok(Waveform::from_parts_unchecked(out, target_rate))
}

/// Scale so the largest absolute amplitude is exactly 1. All-zero input is
/// returned unchanged.
pub fn normalize_peak(w: &Waveform) -> Waveform {
    let peak = w.peak();
    if peak == 0.0 {
        return w.clone();
    }
    let samples = w
        .samples
        .iter()
        .map(|v| {
            let s = v / peak;
            // Division can land one ulp off +-1 for the peak sample itself.
            if s.abs() > 1.0 {
                s.signum()
            } else {
                s
            }
        })
        .collect();
    Waveform::from_parts_unchecked(samples, w.sample_rate)
}

/// Cut contiguous, non-overlapping clips; a trailing remainder shorter than a
/// clip is dropped.
pub fn split_clips(w: &Waveform, spec: &ClipSpec) -> Result<Vec<Waveform>> {
    ensure_arg!(
        w.sample_rate == spec.sample_rate,
        "sample rate {} does not match clip spec {}",
        w.sample_rate,
        spec.sample_rate
    );
    let n = spec.n_samples()?;
    Ok(w
        .samples
        .chunks_exact(n)
        .map(|c| Waveform::from_parts_unchecked(c.to_vec(), w.sample_rate))
        .collect())
}
