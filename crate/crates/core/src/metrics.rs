//! Speech quality and intelligibility measures, detection scores, and the
//! noise reduction achieved inside silent intervals.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::baselines::run_with_timeout;
use crate::datagen::expand_labels_to_samples;
use crate::error::{ensure_arg, Error, Result};
use crate::resample::resample_rate;
use crate::segments::SegmentLabels;

pub const SSNR_MIN_DB: f64 = -10.0;
pub const SSNR_MAX_DB: f64 = 35.0;
/// Reference frames this far below the loudest frame are left out of SSNR.
pub const SSNR_SILENCE_RANGE_DB: f64 = 40.0;
/// Reported when the denoised output is exactly zero inside the silent intervals.
pub const MAX_SILENCE_REDUCTION_DB: f64 = 60.0;

fn check_pair(reference: &Waveform, test: &Waveform) -> Result<()> {
    ensure_arg!(
        reference.len() == test.len(),
        "reference has {} samples, test has {}",
        reference.len(),
        test.len()
    );
    ensure_arg!(
        reference.sample_rate() == test.sample_rate(),
        "sample rates differ: {} vs {}",
        reference.sample_rate(),
        test.sample_rate()
    );
    Ok(())
}

/// Segmental SNR over 32 ms frames with 16 ms hop, each frame clamped to
/// [-10, 35] dB. Frames whose reference energy is more than 40 dB below the
/// loudest reference frame are skipped.
pub fn ssnr(reference: &Waveform, test: &Waveform) -> Result<f64> {
    check_pair(reference, test)?;
    let rate = reference.sample_rate() as usize;
    let frame = (rate * 32 / 1000).max(1);
    let hop = frame / 2;
    let (r, t) = (reference.samples(), test.samples());
    let starts: Vec<usize> = if r.len() < frame {
        vec![0]
    } else {
        (0..=(r.len() - frame) / hop).map(|i| i * hop).collect()
    };
    let frames: Vec<(f64, f64)> = starts
        .iter()
        .map(|&s| {
            let e = (s + frame).min(r.len());
            let sig: f64 = r[s..e].iter().map(|v| v * v).sum();
            let err: f64 = r[s..e].iter().zip(&t[s..e]).map(|(a, b)| (a - b) * (a - b)).sum();
            (sig, err)
        })
        .collect();
    let loudest = frames.iter().map(|f| f.0).fold(0.0, f64::max);
    if loudest == 0.0 {
        return Err(Error::Metric("reference is silent".into()));
    }
    let floor = loudest * 10f64.powf(-SSNR_SILENCE_RANGE_DB / 10.0);
    let scores: Vec<f64> = frames
        .iter()
        .filter(|(sig, _)| *sig > floor)
        .map(|&(sig, err)| {
            let db = if err == 0.0 { SSNR_MAX_DB } else { 10.0 * (sig / err).log10() };
            db.clamp(SSNR_MIN_DB, SSNR_MAX_DB)
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

const STOI_RATE: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;

/// Hann window without its zero end points (MATLAB `hanning`).
fn hanning_open(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

/// Drops frames of both signals where the reference is more than `dyn_range`
/// dB below its loudest frame, then overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64], dyn_range: f64, frame: usize, hop: usize) -> (Vec<f64>, Vec<f64>) {
    let w = hanning_open(frame);
    let starts: Vec<usize> = frame_starts(x.len(), frame, hop).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let n = (0..frame).map(|k| (w[k] * x[s + k]).powi(2)).sum::<f64>().sqrt();
            20.0 * (n + f64::EPSILON).log10()
        })
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - dyn_range - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * hop + frame;
    let (mut xo, mut yo) = (vec![0.0; len], vec![0.0; len]);
    for (j, &s) in kept.iter().enumerate() {
        for k in 0..frame {
            xo[j * hop + k] += w[k] * x[s + k];
            yo[j * hop + k] += w[k] * y[s + k];
        }
    }
    (xo, yo)
}

/// Third-octave band energies, `[band][frame]`.
fn third_octave_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let w = hanning_open(STOI_FRAME);
    let fft = rustfft::FftPlanner::new().plan_fft_forward(STOI_NFFT);
    let mut out = vec![Vec::new(); bands.len()];
    let mut buf = vec![rustfft::num_complex::Complex64::new(0.0, 0.0); STOI_NFFT];
    for s in frame_starts(x.len(), STOI_FRAME, STOI_FRAME / 2) {
        buf.iter_mut().for_each(|c| *c = 0.0.into());
        for k in 0..STOI_FRAME {
            buf[k].re = w[k] * x[s + k];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            out[b].push(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}

/// Bin ranges of the third-octave bands, snapped to the nearest FFT bins.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let n_bins = STOI_NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * STOI_RATE as f64 / STOI_NFFT as f64).collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn centered_unit(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() + f64::EPSILON;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Short-time objective intelligibility: correlation of clipped,
/// energy-normalized third-octave envelopes over 384 ms windows at 10 kHz.
/// Result is clamped to [0, 1].
pub fn stoi(reference: &Waveform, test: &Waveform) -> Result<f64> {
    check_pair(reference, test)?;
    let x = resample_rate(reference.samples(), reference.sample_rate(), STOI_RATE);
    let y = resample_rate(test.samples(), test.sample_rate(), STOI_RATE);
    let (x, y) = remove_silent_frames(&x, &y, STOI_DYN_RANGE_DB, STOI_FRAME, STOI_FRAME / 2);
    let bands = third_octave_bands();
    let xt = third_octave_envelopes(&x, &bands);
    let yt = third_octave_envelopes(&y, &bands);
    let n_frames = xt[0].len();
    if n_frames < STOI_SEGMENT {
        return Err(Error::Metric(format!(
            "only {n_frames} analysis frames after dropping silence, need {STOI_SEGMENT}"
        )));
    }
    let clip = 1.0 + 10f64.powf(-STOI_BETA_DB / 20.0);
    let n_seg = n_frames - STOI_SEGMENT + 1;
    let mut total = 0.0;
    for m in 0..n_seg {
        for b in 0..STOI_BANDS {
            let xs = &xt[b][m..m + STOI_SEGMENT];
            let ys = &yt[b][m..m + STOI_SEGMENT];
            let xn = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = xn / (yn + f64::EPSILON);
            let mut yp: Vec<f64> = ys.iter().zip(xs).map(|(y, x)| (y * alpha).min(x * clip)).collect();
            let mut xc = xs.to_vec();
            centered_unit(&mut yp);
            centered_unit(&mut xc);
            total += yp.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok((total / (n_seg * STOI_BANDS) as f64).clamp(0.0, 1.0))
}

/// Analysis frames of the composite measures: 30 ms windows, quarter hop.
fn composite_frames(rate: u32, len: usize) -> (usize, usize, usize) {
    let win = (30.0 * rate as f64 / 1000.0).round() as usize;
    let hop = win / 4;
    let n = if len >= win { (len - win) / hop } else { 0 };
    (win, hop, n)
}

/// Autocorrelation and LPC polynomial `[1, -a1, ..., -ap]` via Levinson-Durbin.
/// `None` for frames with zero energy or an unstable recursion.
fn lpc(frame: &[f64], order: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let r: Vec<f64> = (0..=order)
        .map(|k| frame[..frame.len() - k].iter().zip(&frame[k..]).map(|(a, b)| a * b).sum())
        .collect();
    if r[0] <= 0.0 {
        return None;
    }
    let mut a = vec![0.0; order];
    let mut e = r[0];
    for i in 0..order {
        let past = a.clone();
        let sum: f64 = (0..i).map(|j| past[j] * r[i - j]).sum();
        let k = (r[i + 1] - sum) / e;
        a[i] = k;
        for j in 0..i {
            a[j] = past[j] - k * past[i - 1 - j];
        }
        e *= 1.0 - k * k;
        if e <= 0.0 {
            return None;
        }
    }
    let mut poly = vec![1.0];
    poly.extend(a.iter().map(|v| -v));
    Some((r, poly))
}

fn toeplitz_quad(poly: &[f64], r: &[f64]) -> f64 {
    let p = poly.len();
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..p {
            s += poly[i] * r[i.abs_diff(j)] * poly[j];
        }
    }
    s
}

/// Per-frame log-likelihood ratio between LPC models. Frames where either
/// signal has no energy are skipped.
pub fn llr_frames(reference: &Waveform, test: &Waveform) -> Result<Vec<f64>> {
    check_pair(reference, test)?;
    let rate = reference.sample_rate();
    let order = if rate < 10_000 { 10 } else { 16 };
    let (win, hop, n) = composite_frames(rate, reference.len());
    let w = hanning_open(win);
    let (r, t) = (reference.samples(), test.samples());
    let mut out = Vec::with_capacity(n);
    for f in 0..n {
        let s = f * hop;
        let rf: Vec<f64> = (0..win).map(|k| r[s + k] * w[k]).collect();
        let tf: Vec<f64> = (0..win).map(|k| t[s + k] * w[k]).collect();
        let (Some((rc, ac)), Some((_, ap))) = (lpc(&rf, order), lpc(&tf, order)) else {
            continue;
        };
        let num = toeplitz_quad(&ap, &rc);
        let den = toeplitz_quad(&ac, &rc);
        out.push((num / den).ln());
    }
    Ok(out)
}

const WSS_CENTERS: [f64; 25] = [
    50.0, 120.0, 190.0, 260.0, 330.0, 400.0, 470.0, 540.0, 617.372, 703.378, 798.717, 904.128, 1020.38, 1148.30,
    1288.72, 1442.54, 1610.70, 1794.16, 1993.93, 2211.08, 2446.71, 2701.97, 2978.04, 3276.17, 3597.63,
];
const WSS_BANDWIDTHS: [f64; 25] = [
    70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 77.3724, 86.0056, 95.3398, 105.411, 116.256, 127.914, 140.423, 153.823,
    168.154, 183.457, 199.776, 217.153, 235.631, 255.255, 276.072, 298.126, 321.465, 346.136,
];

fn wss_filters(rate: u32, half: usize) -> Vec<Vec<f64>> {
    let max_freq = rate as f64 / 2.0;
    let min_factor = (-30.0f64 / (2.0 * 2.303)).exp();
    WSS_CENTERS
        .iter()
        .zip(&WSS_BANDWIDTHS)
        .map(|(&cf, &bw_hz)| {
            let f0 = (cf / max_freq * half as f64).floor();
            let bw = bw_hz / max_freq * half as f64;
            let norm = WSS_BANDWIDTHS[0].ln() - bw_hz.ln();
            (0..half)
                .map(|j| {
                    let v = (-11.0 * ((j as f64 - f0) / bw).powi(2) + norm).exp();
                    if v > min_factor {
                        v
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn local_peaks(energy: &[f64], slope: &[f64]) -> Vec<f64> {
    let last = slope.len() - 1;
    (0..slope.len())
        .map(|i| {
            let mut n = i;
            if slope[i] > 0.0 {
                while slope[n] > 0.0 && n < last {
                    n += 1;
                }
            } else {
                while slope[n] <= 0.0 && n > 0 {
                    n -= 1;
                }
            }
            energy[n + 1]
        })
        .collect()
}

/// Per-frame weighted spectral slope distance over 25 critical bands.
pub fn wss_frames(reference: &Waveform, test: &Waveform) -> Result<Vec<f64>> {
    check_pair(reference, test)?;
    const K_MAX: f64 = 20.0;
    const K_LOC_MAX: f64 = 1.0;
    let rate = reference.sample_rate();
    let (win, hop, n) = composite_frames(rate, reference.len());
    let n_fft = (2 * win).next_power_of_two();
    let half = n_fft / 2;
    let filters = wss_filters(rate, half);
    let w = hanning_open(win);
    let fft = rustfft::FftPlanner::new().plan_fft_forward(n_fft);
    let band_db = |sig: &[f64], s: usize| -> Vec<f64> {
        let mut buf = vec![rustfft::num_complex::Complex64::new(0.0, 0.0); n_fft];
        for k in 0..win {
            buf[k].re = sig[s + k] * w[k];
        }
        fft.process(&mut buf);
        filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(&buf[..half]).map(|(g, c)| g * c.norm_sqr()).sum();
                10.0 * e.max(1e-10).log10()
            })
            .collect()
    };
    let mut out = Vec::with_capacity(n);
    for f in 0..n {
        let s = f * hop;
        let ce = band_db(reference.samples(), s);
        let pe = band_db(test.samples(), s);
        let cs: Vec<f64> = ce.windows(2).map(|p| p[1] - p[0]).collect();
        let ps: Vec<f64> = pe.windows(2).map(|p| p[1] - p[0]).collect();
        let cp = local_peaks(&ce, &cs);
        let pp = local_peaks(&pe, &ps);
        let cmax = ce.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pmax = pe.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..cs.len() {
            let wc = K_MAX / (K_MAX + cmax - ce[i]) * K_LOC_MAX / (K_LOC_MAX + cp[i] - ce[i]);
            let wp = K_MAX / (K_MAX + pmax - pe[i]) * K_LOC_MAX / (K_LOC_MAX + pp[i] - pe[i]);
            let wt = (wc + wp) / 2.0;
            num += wt * (cs[i] - ps[i]).powi(2);
            den += wt;
        }
        out.push(num / den);
    }
    Ok(out)
}

/// Per-frame segmental SNR as used inside the composite measures: 30 ms
/// windows, every frame kept, each clamped to [-10, 35] dB.
pub fn composite_segsnr(reference: &Waveform, test: &Waveform) -> Result<f64> {
    check_pair(reference, test)?;
    let (win, hop, n) = composite_frames(reference.sample_rate(), reference.len());
    if n == 0 {
        return Err(Error::Metric("clip shorter than one analysis frame".into()));
    }
    let w = hanning_open(win);
    let (r, t) = (reference.samples(), test.samples());
    let mut sum = 0.0;
    for f in 0..n {
        let s = f * hop;
        let (mut sig, mut err) = (0.0, 0.0);
        for k in 0..win {
            let (a, b) = (r[s + k] * w[k], t[s + k] * w[k]);
            sig += a * a;
            err += (a - b) * (a - b);
        }
        let db = 10.0 * (sig / (err + f64::EPSILON) + f64::EPSILON).log10();
        sum += db.clamp(SSNR_MIN_DB, SSNR_MAX_DB);
    }
    Ok(sum / n as f64)
}

/// Mean of the lowest 95% of frame scores.
fn trimmed_mean(mut v: Vec<f64>) -> Option<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    let keep = (v.len() as f64 * 0.95).round() as usize;
    (keep > 0).then(|| v[..keep].iter().sum::<f64>() / keep as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeScores {
    pub csig: f64,
    pub cbak: f64,
    pub covl: f64,
}

/// Intermediate measures feeding the composite regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeInputs {
    pub pesq: f64,
    pub llr: f64,
    pub wss: f64,
    pub segsnr: f64,
}

/// Linear regressions for signal distortion, background intrusiveness and
/// overall quality, each clamped to [1, 5].
pub fn composite_from_parts(p: &CompositeInputs) -> CompositeScores {
    let c = |v: f64| v.clamp(1.0, 5.0);
    CompositeScores {
        csig: c(3.093 - 1.029 * p.llr + 0.603 * p.pesq - 0.009 * p.wss),
        cbak: c(1.634 + 0.478 * p.pesq - 0.007 * p.wss + 0.063 * p.segsnr),
        covl: c(1.594 + 0.805 * p.pesq - 0.512 * p.llr - 0.007 * p.wss),
    }
}

pub fn composite_inputs(reference: &Waveform, test: &Waveform, pesq: f64) -> Result<CompositeInputs> {
    let llr = trimmed_mean(llr_frames(reference, test)?.into_iter().map(|v| v.clamp(0.0, 2.0)).collect())
        .ok_or_else(|| Error::Metric("no voiced frames for LLR".into()))?;
    let wss = trimmed_mean(wss_frames(reference, test)?)
        .ok_or_else(|| Error::Metric("clip shorter than one analysis frame".into()))?;
    let segsnr = composite_segsnr(reference, test)?;
    Ok(CompositeInputs { pesq, llr, wss, segsnr })
}

/// Composite scores; `None` when no PESQ score is available.
pub fn composite(reference: &Waveform, test: &Waveform, pesq: Option<f64>) -> Result<Option<CompositeScores>> {
    match pesq {
        Some(p) => Ok(Some(composite_from_parts(&composite_inputs(reference, test, p)?))),
        None => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PesqMode {
    Wideband,
    Narrowband,
}

impl PesqMode {
    fn flag(&self) -> &'static str {
        match self {
            PesqMode::Wideband => "wb",
            PesqMode::Narrowband => "nb",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PesqOutcome {
    Score(f64),
    Unavailable(String),
}

impl PesqOutcome {
    pub fn score(&self) -> Option<f64> {
        match self {
            PesqOutcome::Score(s) => Some(*s),
            PesqOutcome::Unavailable(_) => None,
        }
    }
}

/// Reads two little-endian f64 files and a rate, prints the PESQ score.
const PESQ_SCRIPT: &str = r#"
import sys
import numpy as np
from pesq import pesq
ref = np.fromfile(sys.argv[1], dtype="<f8")
deg = np.fromfile(sys.argv[2], dtype="<f8")
print(pesq(int(sys.argv[3]), ref, deg, sys.argv[4]))
"#;

/// PESQ through an external Python process running the `pesq` package.
/// Scores are memoized by content hash.
#[derive(Debug)]
pub struct PesqBackend {
    pub python: PathBuf,
    pub mode: PesqMode,
    pub timeout: Duration,
    cache: Mutex<HashMap<[u8; 32], PesqOutcome>>,
    calls: Mutex<usize>,
}

impl PesqBackend {
    pub fn new(python: impl Into<PathBuf>, mode: PesqMode, timeout: Duration) -> Self {
        Self { python: python.into(), mode, timeout, cache: Mutex::new(HashMap::new()), calls: Mutex::new(0) }
    }

    /// Backend on `python3` if it can import the `pesq` package.
    pub fn detect(mode: PesqMode) -> Option<Self> {
        let ok = Command::new("python3")
            .args(["-c", "import pesq, numpy"])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        ok.then(|| Self::new("python3", mode, Duration::from_secs(60)))
    }

    /// Number of subprocess invocations so far (cache misses).
    pub fn invocations(&self) -> usize {
        *self.calls.lock().unwrap()
    }

    fn key(&self, reference: &Waveform, test: &Waveform) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.mode.flag().as_bytes());
        h.update(reference.sample_rate().to_le_bytes());
        for v in reference.samples().iter().chain(test.samples()) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn score(&self, reference: &Waveform, test: &Waveform) -> PesqOutcome {
        if let Err(e) = check_pair(reference, test) {
            return PesqOutcome::Unavailable(e.to_string());
        }
        let key = self.key(reference, test);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return hit.clone();
        }
        *self.calls.lock().unwrap() += 1;
        let outcome = match self.invoke(reference, test) {
            Ok(s) => PesqOutcome::Score(s),
            Err(e) => PesqOutcome::Unavailable(e.to_string()),
        };
        self.cache.lock().unwrap().insert(key, outcome.clone());
        outcome
    }

    fn invoke(&self, reference: &Waveform, test: &Waveform) -> Result<f64> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let write = |name: &str, w: &Waveform| -> Result<PathBuf> {
            let p = dir.path().join(name);
            let mut f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            let bytes: Vec<u8> = w.samples().iter().flat_map(|v| v.to_le_bytes()).collect();
            f.write_all(&bytes).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        };
        let (rp, tp) = (write("ref.f64", reference)?, write("deg.f64", test)?);
        let mut child = Command::new(&self.python)
            .arg("-c")
            .arg(PESQ_SCRIPT)
            .arg(&rp)
            .arg(&tp)
            .arg(reference.sample_rate().to_string())
            .arg(self.mode.flag())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External { message: format!("cannot start {}: {e}", self.python.display()), stderr: String::new() })?;
        let (stdout, _) = run_with_timeout(&mut child, self.timeout, "PESQ backend")?;
        stdout
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::External { message: format!("unparsable PESQ output {:?}", stdout.trim()), stderr: String::new() })
    }
}

/// Detection scores with silent segments as the positive class. Ratios with
/// a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
}

pub fn sid_metrics(pred: &SegmentLabels, truth: &SegmentLabels) -> Result<SidReport> {
    ensure_arg!(pred.len() == truth.len(), "{} predicted segments, {} true", pred.len(), truth.len());
    ensure_arg!(!pred.is_empty(), "no segments to score");
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let accuracy = (tp + tn) as f64 / pred.len() as f64;
    Ok(SidReport { tp, tn, fp, fn_, precision, recall, f1, accuracy })
}

/// Area under the ROC curve for `scores` separating positives (`true`) from
/// negatives, counting ties as half. `None` if either class is empty.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len().min(positive.len())).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = idx.iter().filter(|&&i| positive[i]).count();
    let n_neg = idx.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Mann-Whitney U from mid-ranks of tied groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Energy ratio in dB between noisy and denoised audio inside the silent
/// intervals, capped at [`MAX_SILENCE_REDUCTION_DB`].
pub fn silence_noise_reduction(noisy: &Waveform, denoised: &Waveform, intervals: &SegmentLabels) -> Result<f64> {
    check_pair(noisy, denoised)?;
    ensure_arg!(intervals.silent_count() > 0, "no silent segments");
    let mask = expand_labels_to_samples(intervals, noisy.len(), noisy.sample_rate())?;
    let (mut en, mut ed) = (0.0, 0.0);
    for ((m, a), b) in mask.values().iter().zip(noisy.samples()).zip(denoised.samples()) {
        if *m > 0.5 {
            en += a * a;
            ed += b * b;
        }
    }
    if en == 0.0 {
        return Err(Error::Metric("noisy input is silent inside the silent intervals".into()));
    }
    if ed == 0.0 {
        return Ok(MAX_SILENCE_REDUCTION_DB);
    }
    Ok((10.0 * (en / ed).log10()).min(MAX_SILENCE_REDUCTION_DB))
}

/// Scores of one processed clip against its clean reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub id: String,
    pub snr_db: f64,
    pub pesq: Option<f64>,
    pub ssnr: f64,
    pub stoi: f64,
    pub csig: Option<f64>,
    pub cbak: Option<f64>,
    pub covl: Option<f64>,
}

pub fn evaluate_clip(
    id: &str,
    snr_db: f64,
    reference: &Waveform,
    test: &Waveform,
    pesq: Option<&PesqBackend>,
) -> Result<ClipMetrics> {
    let p = pesq.and_then(|b| b.score(reference, test).score());
    let comp = composite(reference, test, p)?;
    Ok(ClipMetrics {
        id: id.to_string(),
        snr_db,
        pesq: p,
        ssnr: ssnr(reference, test)?,
        stoi: stoi(reference, test)?,
        csig: comp.map(|c| c.csig),
        cbak: comp.map(|c| c.cbak),
        covl: comp.map(|c| c.covl),
    })
}

/// Means of every metric over a group of clips; optional metrics average
/// only the clips that have them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub clips: usize,
    pub pesq: Option<f64>,
    pub ssnr: f64,
    pub stoi: f64,
    pub csig: Option<f64>,
    pub cbak: Option<f64>,
    pub covl: Option<f64>,
}

impl MetricMeans {
    pub fn of(clips: &[&ClipMetrics]) -> Self {
        let n = clips.len().max(1) as f64;
        let opt = |f: fn(&ClipMetrics) -> Option<f64>| {
            let v: Vec<f64> = clips.iter().filter_map(|c| f(c)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            clips: clips.len(),
            pesq: opt(|c| c.pesq),
            ssnr: clips.iter().map(|c| c.ssnr).sum::<f64>() / n,
            stoi: clips.iter().map(|c| c.stoi).sum::<f64>() / n,
            csig: opt(|c| c.csig),
            cbak: opt(|c| c.cbak),
            covl: opt(|c| c.covl),
        }
    }

    /// `(name, value)` pairs in reporting order.
    pub fn named(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("pesq", self.pesq),
            ("ssnr", Some(self.ssnr)),
            ("stoi", Some(self.stoi)),
            ("csig", self.csig),
            ("cbak", self.cbak),
            ("covl", self.covl),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrBucket {
    pub snr_db: f64,
    pub means: MetricMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub clips: Vec<ClipMetrics>,
    pub overall: MetricMeans,
    pub per_snr: Vec<SnrBucket>,
}

impl MetricsReport {
    pub fn new(clips: Vec<ClipMetrics>) -> Self {
        let all: Vec<&ClipMetrics> = clips.iter().collect();
        let overall = MetricMeans::of(&all);
        let mut levels: Vec<f64> = clips.iter().map(|c| c.snr_db).collect();
        levels.sort_by(|a, b| a.total_cmp(b));
        levels.dedup();
        let per_snr = levels
            .into_iter()
            .map(|snr_db| {
                let group: Vec<&ClipMetrics> = clips.iter().filter(|c| c.snr_db == snr_db).collect();
                SnrBucket { snr_db, means: MetricMeans::of(&group) }
            })
            .collect();
        Self { clips, overall, per_snr }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    fn speechlike(seed: u64, n: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::datagen::toy::tone_burst_clip(n, &mut rng)
    }

    fn noise(seed: u64, n: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        wave((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect())
    }

    #[test]
    fn ssnr_identity_hits_upper_clamp() {
        let x = speechlike(1, 32000);
        assert_eq!(ssnr(&x, &x).unwrap(), SSNR_MAX_DB);
    }

    #[test]
    fn ssnr_floor_reachable_under_strong_noise() {
        let x = speechlike(2, 32000);
        let n = noise(3, 32000);
        let y = wave(x.samples().iter().zip(n.samples()).map(|(a, b)| a + 100.0 * b).collect());
        assert_eq!(ssnr(&x, &y).unwrap(), SSNR_MIN_DB);
    }

    #[test]
    fn ssnr_rejects_length_mismatch() {
        assert!(matches!(ssnr(&wave(vec![1.0; 10]), &wave(vec![1.0; 11])), Err(Error::Argument(_))));
    }

    #[test]
    fn stoi_identity_is_one() {
        let x = speechlike(4, 48000);
        assert!((stoi(&x, &x).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn stoi_of_independent_noise_is_low() {
        let x = speechlike(5, 48000);
        let n = noise(6, 48000);
        assert!(stoi(&x, &n).unwrap() < 0.5);
    }

    #[test]
    fn stoi_too_short_is_metric_error() {
        let x = speechlike(7, 4000);
        assert!(matches!(stoi(&x, &x), Err(Error::Metric(_))));
    }

    #[test]
    fn third_octave_bands_match_reference_table() {
        // Bin edges of the reference implementation at 10 kHz, 512-point FFT.
        let expected = [
            (7, 9), (9, 11), (11, 14), (14, 17), (17, 22), (22, 27), (27, 34), (34, 43), (43, 55), (55, 69),
            (69, 87), (87, 109), (109, 138), (138, 174), (174, 219),
        ];
        assert_eq!(third_octave_bands(), expected);
    }

    #[test]
    fn identical_signals_have_zero_llr_and_wss() {
        let x = speechlike(8, 16000);
        assert!(llr_frames(&x, &x).unwrap().iter().all(|v| v.abs() < 1e-9));
        assert!(wss_frames(&x, &x).unwrap().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn composite_maxima_at_ideal_inputs() {
        let c = composite_from_parts(&CompositeInputs { pesq: 4.5, llr: 0.0, wss: 0.0, segsnr: 35.0 });
        assert!((c.csig - 5.0).abs() < 1e-12);
        assert!((c.cbak - 5.0).abs() < 1e-12);
        assert!((c.covl - 5.0).abs() < 1e-12);
        let c = composite_from_parts(&CompositeInputs { pesq: 2.0, llr: 1.0, wss: 50.0, segsnr: 5.0 });
        assert!((c.csig - (3.093 - 1.029 + 1.206 - 0.45)).abs() < 1e-12);
        assert!((c.cbak - (1.634 + 0.956 - 0.35 + 0.315)).abs() < 1e-12);
        assert!((c.covl - (1.594 + 1.61 - 0.512 - 0.35)).abs() < 1e-12);
    }

    #[test]
    fn composites_absent_without_pesq() {
        let x = speechlike(9, 16000);
        assert_eq!(composite(&x, &x, None).unwrap(), None);
    }

    #[test]
    fn sid_metrics_half_silent_fixture() {
        let truth = SegmentLabels::new((0..60).map(|i| (i % 2) as u8).collect(), 16_000).unwrap();
        let pred = SegmentLabels::new(vec![1; 60], 16_000).unwrap();
        let r = sid_metrics(&pred, &truth).unwrap();
        assert_eq!(r.precision, Some(0.5));
        assert_eq!(r.recall, Some(1.0));
        assert!((r.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn sid_metrics_undefined_ratios_are_absent() {
        let zeros = SegmentLabels::new(vec![0; 10], 16_000).unwrap();
        let r = sid_metrics(&zeros, &zeros).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (None, None, None));
        assert_eq!(r.accuracy, 1.0);
        let empty = SegmentLabels::new(vec![], 16_000).unwrap();
        assert!(sid_metrics(&empty, &empty).is_err());
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..60);
            let s: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..8) as f64) / 8.0).collect();
            let p: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if p[i] && !p[j] {
                        pairs += 1.0;
                        wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            let want = (pairs > 0.0).then(|| wins / pairs);
            match (roc_auc(&s, &p), want) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn silence_reduction_analytic_cases() {
        let n = noise(10, 32000);
        let labels = SegmentLabels::new((0..60).map(|i| (i < 20) as u8).collect(), 16_000).unwrap();
        assert_eq!(silence_noise_reduction(&n, &n, &labels).unwrap(), 0.0);
        let quiet = wave(n.samples().iter().map(|v| v / 10.0).collect());
        assert!((silence_noise_reduction(&n, &quiet, &labels).unwrap() - 20.0).abs() < 1e-9);
        let zero = wave(vec![0.0; 32000]);
        assert_eq!(silence_noise_reduction(&n, &zero, &labels).unwrap(), MAX_SILENCE_REDUCTION_DB);
    }

    #[test]
    fn report_groups_by_snr() {
        let mk = |snr: f64, s: f64| ClipMetrics {
            id: String::new(),
            snr_db: snr,
            pesq: None,
            ssnr: s,
            stoi: 0.5,
            csig: None,
            cbak: None,
            covl: None,
        };
        let r = MetricsReport::new(vec![mk(0.0, 1.0), mk(0.0, 3.0), mk(-10.0, 5.0)]);
        assert_eq!(r.per_snr.len(), 2);
        assert_eq!(r.per_snr[0].snr_db, -10.0);
        assert_eq!(r.per_snr[1].means.ssnr, 2.0);
        assert_eq!(r.overall.ssnr, 3.0);
        assert_eq!(r.overall.pesq, None);
    }
}
