//! Non-learned reference methods and the external VAD adapter.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::audio::{normalize_peak, save_wav, Waveform};
use crate::datagen::{expand_labels_to_samples, label_silence, MixtureSample};
use crate::error::{ensure_arg, Error, Result};
use crate::models::{frame_groups, DenoiseOptions, DenoiseOutput, MaskSource, SilenceModel};
use crate::segments::{segment_bounds, SegmentLabels};
use crate::spectro::{Spectrogram, StftConfig, StftEngine};

/// Spectral floor used when subtraction replaces the removal network.
pub const SUBTRACTION_FLOOR: f64 = 0.05;

/// Energy-threshold detection on the noisy signal: the labeling rule for
/// clean speech applied to the peak-normalized input.
pub fn threshold_sid(noisy: &Waveform) -> SegmentLabels {
    label_silence(&normalize_peak(noisy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGateConfig {
    /// Multiplier on the noise magnitude before subtraction (>= 1).
    pub over_subtraction: f64,
    /// Minimum retained fraction of the noisy magnitude, in [0, 1].
    pub floor: f64,
    /// Width in frames of the moving average applied to the gains.
    pub smoothing_frames: usize,
}

impl Default for SpectralGateConfig {
    fn default() -> Self {
        Self { over_subtraction: 1.5, floor: 0.05, smoothing_frames: 3 }
    }
}

/// Frames assigned to silent segments (by window centre).
fn silent_frames(labels: &SegmentLabels, n_frames: usize, n_samples: usize, cfg: &StftConfig) -> Vec<usize> {
    let groups = frame_groups(n_frames, n_samples, cfg, labels.sample_rate);
    let mut frames: Vec<usize> = groups
        .iter()
        .zip(&labels.labels)
        .filter(|(_, &l)| l == 1)
        .flat_map(|(g, _)| g.iter().copied())
        .collect();
    frames.sort_unstable();
    frames.dedup();
    frames
}

/// Spectral subtraction driven by a mean noise magnitude spectrum measured
/// over the silent segments of `intervals`.
pub fn spectral_gate(noisy: &Waveform, intervals: &SegmentLabels, cfg: &SpectralGateConfig) -> Result<Waveform> {
    let engine = StftEngine::new(StftConfig::default())?;
    ensure_arg!(
        noisy.sample_rate() == engine.config().sample_rate,
        "spectral gating runs at {} Hz",
        engine.config().sample_rate
    );
    let n = noisy.len();
    ensure_arg!(
        intervals.len() == segment_bounds(n, noisy.sample_rate()).len(),
        "{} labels for a clip of {} segments",
        intervals.len(),
        segment_bounds(n, noisy.sample_rate()).len()
    );
    let spec = engine.forward(noisy.samples())?;
    let out = gate_spectrogram(&spec, intervals, n, cfg)?;
    Waveform::new(engine.inverse(&out, n)?, noisy.sample_rate())
}

/// Gated spectrogram of a clip of `n_samples`. Every bin is scaled by a gain
/// in `[floor, 1]`.
pub fn gate_spectrogram(spec: &Spectrogram, intervals: &SegmentLabels, n_samples: usize, cfg: &SpectralGateConfig) -> Result<Spectrogram> {
    ensure_arg!(cfg.over_subtraction >= 1.0, "over-subtraction factor must be >= 1");
    ensure_arg!((0.0..=1.0).contains(&cfg.floor), "spectral floor must lie in [0, 1]");
    let (frames, bins) = (spec.n_frames(), spec.n_freq());
    let silent = silent_frames(intervals, frames, n_samples, spec.config());
    if silent.is_empty() {
        return Err(Error::Baseline("no silent segment to estimate the noise spectrum from".into()));
    }
    let mut noise_mag = vec![0.0; bins];
    for &t in &silent {
        for (k, m) in noise_mag.iter_mut().enumerate() {
            *m += spec.magnitude(k, t);
        }
    }
    noise_mag.iter_mut().for_each(|m| *m /= silent.len() as f64);

    let mut gain = vec![0.0; frames * bins];
    for t in 0..frames {
        for k in 0..bins {
            let mag = spec.magnitude(k, t);
            let g = if mag > 0.0 {
                ((mag - cfg.over_subtraction * noise_mag[k]) / mag).max(cfg.floor)
            } else {
                cfg.floor
            };
            gain[t * bins + k] = g.min(1.0);
        }
    }
    let half = cfg.smoothing_frames / 2;
    let mut out = Spectrogram::zeros(frames, *spec.config());
    for t in 0..frames {
        let (lo, hi) = (t.saturating_sub(half), (t + half + 1).min(frames));
        for k in 0..bins {
            let g = (lo..hi).map(|u| gain[u * bins + k]).sum::<f64>() / (hi - lo) as f64;
            out.set(k, t, spec.get(k, t) * g);
        }
    }
    Ok(out)
}

/// Denoising with the ground-truth silent intervals; the detector never runs.
pub fn gtsi_denoise(model: &SilenceModel, sample: &MixtureSample, labels: &SegmentLabels) -> Result<Waveform> {
    Ok(gtsi_denoise_signal(model, &sample.mixture, labels)?.denoised)
}

/// [`gtsi_denoise`] for a bare noisy signal, keeping the mask and noise estimate.
pub fn gtsi_denoise_signal(model: &SilenceModel, noisy: &Waveform, labels: &SegmentLabels) -> Result<DenoiseOutput> {
    ensure_arg!(
        labels.len() == segment_bounds(noisy.len(), noisy.sample_rate()).len(),
        "{} labels for a clip of {} segments",
        labels.len(),
        segment_bounds(noisy.len(), noisy.sample_rate()).len()
    );
    let mask = expand_labels_to_samples(labels, noisy.len(), noisy.sample_rate())?;
    let opts = DenoiseOptions { mask_source: MaskSource::Provided(mask), ..DenoiseOptions::default() };
    model.denoise(noisy, &opts)
}

/// Per-bin `max(|x| - |n|, floor * |x|)` with the phase of `x`.
pub fn subtract_removal(s_x: &Spectrogram, s_n: &Spectrogram, floor: f64) -> Result<Spectrogram> {
    ensure_arg!(s_x.same_shape(s_n), "spectrogram shapes differ");
    ensure_arg!((0.0..=1.0).contains(&floor), "spectral floor must lie in [0, 1]");
    let mut out = s_x.clone();
    for t in 0..s_x.n_frames() {
        for k in 0..s_x.n_freq() {
            let x = s_x.get(k, t);
            let mag = x.norm();
            if mag == 0.0 {
                continue;
            }
            let target = (mag - s_n.magnitude(k, t)).max(floor * mag);
            out.set(k, t, x * (target / mag));
        }
    }
    Ok(out)
}

/// One frame reported by a voice activity detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadFrame {
    pub start_ms: f64,
    pub end_ms: f64,
    pub voiced: bool,
}

/// Parses `start_ms,end_ms,flag` lines; blank lines are skipped.
pub fn parse_vad_output(text: &str) -> Result<Vec<VadFrame>> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::External {
            message: format!("VAD output line {} is not `start_ms,end_ms,flag`: {line}", i + 1),
            stderr: String::new(),
        };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let start_ms: f64 = parts[0].parse().map_err(|_| bad())?;
        let end_ms: f64 = parts[1].parse().map_err(|_| bad())?;
        let voiced = match parts[2] {
            "1" | "true" | "voiced" => true,
            "0" | "false" | "unvoiced" => false,
            _ => return Err(bad()),
        };
        frames.push(VadFrame { start_ms, end_ms, voiced });
    }
    Ok(frames)
}

/// Maps VAD frames onto 1/30 s segments by duration-weighted majority:
/// a segment is silent when unvoiced time exceeds voiced time within it.
/// Segments no frame touches count as non-silent.
pub fn vad_frames_to_labels(frames: &[VadFrame], n_samples: usize, rate: u32) -> SegmentLabels {
    let labels = segment_bounds(n_samples, rate)
        .into_iter()
        .map(|r| {
            let (s0, s1) = (r.start as f64 * 1000.0 / rate as f64, r.end as f64 * 1000.0 / rate as f64);
            let (mut voiced, mut unvoiced) = (0.0, 0.0);
            for f in frames {
                let overlap = f.end_ms.min(s1) - f.start_ms.max(s0);
                if overlap > 0.0 {
                    if f.voiced {
                        voiced += overlap;
                    } else {
                        unvoiced += overlap;
                    }
                }
            }
            u8::from(unvoiced > voiced)
        })
        .collect();
    SegmentLabels { labels, sample_rate: rate }
}

/// Runs an external VAD executable on `noisy` (written to a temporary WAV
/// passed as the only argument) and converts its report to segment labels.
pub fn external_vad_adapter(noisy: &Waveform, executable: &Path, timeout: Duration) -> Result<SegmentLabels> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let wav = dir.path().join("input.wav");
    save_wav(&wav, noisy)?;
    let mut child = Command::new(executable)
        .arg(&wav)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::External {
            message: format!("cannot start VAD {}: {e}", executable.display()),
            stderr: String::new(),
        })?;
    let (stdout, stderr) = run_with_timeout(&mut child, timeout, "VAD")?;
    let frames = parse_vad_output(&stdout).map_err(|e| match e {
        Error::External { message, .. } => Error::External { message, stderr: stderr.clone() },
        other => other,
    })?;
    Ok(vad_frames_to_labels(&frames, noisy.len(), noisy.sample_rate()))
}

/// Waits for `child`, killing it after `timeout`. Returns stdout and stderr
/// on a zero exit status.
pub(crate) fn run_with_timeout(child: &mut std::process::Child, timeout: Duration, what: &str) -> Result<(String, String)> {
    // Drain pipes on threads so a chatty child cannot block on a full pipe.
    let mut out_pipe = child.stdout.take();
    let mut err_pipe = child.stderr.take();
    let out_h = std::thread::spawn(move || {
        let mut s = String::new();
        if let Some(p) = out_pipe.as_mut() {
            let _ = p.read_to_string(&mut s);
        }
        s
    });
    let err_h = std::thread::spawn(move || {
        let mut s = String::new();
        if let Some(p) = err_pipe.as_mut() {
            let _ = p.read_to_string(&mut s);
        }
        s
    });
    let status = child.wait_timeout(timeout).map_err(|e| Error::External {
        message: format!("waiting for {what} failed: {e}"),
        stderr: String::new(),
    })?;
    let status = match status {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            // Grandchildren may still hold the pipes open, so the reader
            // threads are left to finish on their own.
            drop((out_h, err_h));
            return Err(Error::External { message: format!("{what} timed out after {timeout:?}"), stderr: String::new() });
        }
    };
    let stdout = out_h.join().unwrap_or_default();
    let stderr = err_h.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::External { message: format!("{what} exited with {status}"), stderr });
    }
    Ok((stdout, stderr))
}
