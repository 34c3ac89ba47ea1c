//! STFT / inverse STFT between waveforms and two-channel complex spectrograms.
//!
//! Frames are taken without centering: frame `t` covers samples
//! `[t * hop, t * hop + n_fft)`, and the 448-sample Hann window sits in the
//! middle of that span (31 zero taps on each side). A 2-second clip at 16 kHz
//! therefore has [`FRAMES_PER_2S`] frames.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{ensure_arg, Result};

/// Frame count of a 2 s, 16 kHz clip under [`StftConfig::default`].
pub const FRAMES_PER_2S: usize = 179;

/// Number of frequency bins, `n_fft / 2 + 1`.
pub const N_FREQ: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    /// Hann window length in samples (28 ms at 16 kHz).
    pub win_length: usize,
    /// Hop in samples (11 ms at 16 kHz).
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 510,
            win_length: 448,
            hop: 176,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn n_freq(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.n_fft >= 2, "n_fft must be at least 2");
        ensure_arg!(
            self.win_length >= 1 && self.win_length <= self.n_fft,
            "window length must be in 1..=n_fft"
        );
        ensure_arg!(
            self.hop >= 1 && self.hop <= self.win_length,
            "hop must be in 1..=window length"
        );
        ensure_arg!(self.sample_rate > 0, "sample rate must be positive");
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples (0 if shorter
    /// than one FFT frame).
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }

    /// Periodic Hann window of `win_length`, zero-padded to `n_fft`.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let offset = (self.n_fft - self.win_length) / 2;
        for i in 0..self.win_length {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / self.win_length as f64;
            w[offset + i] = 0.5 * (1.0 - phase.cos());
        }
        w
    }

    /// Sample range between the centers of the first and last windows; every
    /// sample in it is covered by at least one full-weight window region.
    pub fn valid_range(&self, len: usize) -> std::ops::Range<usize> {
        let frames = self.n_frames(len);
        if frames == 0 {
            return 0..0;
        }
        let center = self.n_fft / 2;
        center..(frames - 1) * self.hop + center + 1
    }
}

/// Complex spectrogram stored as two real planes, `[channel][frame][bin]`,
/// where channel 0 is the real part and channel 1 the imaginary part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    data: Vec<f64>,
    n_frames: usize,
    n_freq: usize,
    config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(n_frames: usize, config: StftConfig) -> Self {
        let n_freq = config.n_freq();
        Self {
            data: vec![0.0; 2 * n_frames * n_freq],
            n_frames,
            n_freq,
            config,
        }
    }

    /// Build from `[2][frame][bin]` planar data.
    pub fn from_planes(data: Vec<f64>, n_frames: usize, config: StftConfig) -> Result<Self> {
        let n_freq = config.n_freq();
        ensure_arg!(
            data.len() == 2 * n_frames * n_freq,
            "planar data of length {} does not match 2x{}x{}",
            data.len(),
            n_frames,
            n_freq
        );
        ensure_arg!(
            data.iter().all(|v| v.is_finite()),
            "spectrogram contains non-finite values"
        );
        Ok(Self {
            data,
            n_frames,
            n_freq,
            config,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Shape as `(bins, frames)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.n_freq, self.n_frames)
    }

    pub fn planes(&self) -> &[f64] {
        &self.data
    }

    pub fn planes_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_planes(self) -> Vec<f64> {
        self.data
    }

    fn idx(&self, ch: usize, bin: usize, frame: usize) -> usize {
        (ch * self.n_frames + frame) * self.n_freq + bin
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        Complex64::new(
            self.data[self.idx(0, bin, frame)],
            self.data[self.idx(1, bin, frame)],
        )
    }

    pub fn set(&mut self, bin: usize, frame: usize, v: Complex64) {
        let (r, i) = (self.idx(0, bin, frame), self.idx(1, bin, frame));
        self.data[r] = v.re;
        self.data[i] = v.im;
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.n_frames == other.n_frames && self.n_freq == other.n_freq
    }

    /// Sum of squared magnitudes over all bins and frames.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn magnitude(&self, bin: usize, frame: usize) -> f64 {
        self.get(bin, frame).norm()
    }
}

/// Reusable FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct StftEngine {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine").field("config", &self.config).finish()
    }
}

impl StftEngine {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window(),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn forward(&self, samples: &[f64]) -> Result<Spectrogram> {
        let cfg = &self.config;
        let frames = cfg.n_frames(samples.len());
        ensure_arg!(
            frames > 0,
            "signal of {} samples is shorter than one {}-sample frame",
            samples.len(),
            cfg.n_fft
        );
        let n_freq = cfg.n_freq();
        let mut spec = Spectrogram::zeros(frames, *cfg);
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let plane = frames * n_freq;
        for t in 0..frames {
            let start = t * cfg.hop;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(samples[start + n] * self.window[n], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            let row = t * n_freq;
            for k in 0..n_freq {
                spec.data[row + k] = buf[k].re;
                spec.data[plane + row + k] = buf[k].im;
            }
        }
        Ok(spec)
    }

    /// Weighted overlap-add inverse. Samples not reached by any window are 0.
    pub fn inverse(&self, spec: &Spectrogram, length: usize) -> Result<Vec<f64>> {
        let cfg = &self.config;
        ensure_arg!(
            spec.n_freq == cfg.n_freq() && spec.config == *cfg,
            "spectrogram does not match STFT configuration"
        );
        ensure_arg!(
            spec.n_frames == cfg.n_frames(length),
            "{} frames cannot come from a {}-sample signal",
            spec.n_frames,
            length
        );
        let n = cfg.n_fft;
        let n_freq = cfg.n_freq();
        let mut out = vec![0.0; length];
        let mut norm = vec![0.0; length];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for t in 0..spec.n_frames {
            for k in 0..n_freq {
                buf[k] = spec.get(k, t);
            }
            // Hermitian completion so the inverse is real.
            for k in n_freq..n {
                buf[k] = buf[n - k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * cfg.hop;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += buf[i].re / n as f64 * w;
                norm[start + i] += w * w;
            }
        }
        let max_norm = norm.iter().cloned().fold(0.0, f64::max);
        let floor = max_norm * 1e-3;
        for (o, &d) in out.iter_mut().zip(&norm) {
            if d > 0.0 {
                *o /= d.max(floor);
            }
        }
        Ok(out)
    }

    /// Adjoint of [`StftEngine::forward`] as a linear map from samples to the
    /// planar spectrogram: returns `J^T g` for a planar gradient `g`.
    pub fn adjoint(&self, grad: &[f64], n_frames: usize, length: usize) -> Vec<f64> {
        let cfg = &self.config;
        let n = cfg.n_fft;
        let n_freq = cfg.n_freq();
        let plane = n_frames * n_freq;
        debug_assert_eq!(grad.len(), 2 * plane);
        let mut out = vec![0.0; length];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for t in 0..n_frames {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            let row = t * n_freq;
            for k in 0..n_freq {
                // d/dy[n] of (Re X_k, Im X_k) is (cos, -sin)(2 pi k n / N).
                buf[k] = Complex64::new(grad[row + k], grad[plane + row + k]);
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * cfg.hop;
            for i in 0..n {
                out[start + i] += buf[i].re * self.window[i];
            }
        }
        out
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    ensure_arg!(
        w.sample_rate() == cfg.sample_rate,
        "waveform rate {} does not match STFT rate {}",
        w.sample_rate(),
        cfg.sample_rate
    );
    ensure_arg!(!w.is_empty(), "cannot transform an empty waveform");
    StftEngine::new(*cfg)?.forward(w.samples())
}

pub fn istft(s: &Spectrogram, cfg: &StftConfig, length: usize) -> Result<Waveform> {
    let samples = StftEngine::new(*cfg)?.inverse(s, length)?;
    Waveform::new(samples, cfg.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn two_second_clip_shape() {
        let cfg = StftConfig::default();
        let s = stft(&Waveform::zeros(32000, 16000), &cfg).unwrap();
        assert_eq!(s.shape(), (N_FREQ, FRAMES_PER_2S));
        assert!(s.planes().iter().all(|&v| v == 0.0));
        assert_eq!(cfg.n_frames(32000), FRAMES_PER_2S);
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..32000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        // Oracle: bin spacing is 16000/510 Hz.
        let expected = (1000.0f64 * 510.0 / 16000.0).round() as usize;
        assert_eq!(expected, 32);
        let s = stft(&Waveform::new(x, 16000).unwrap(), &cfg).unwrap();
        for t in 0..s.n_frames() {
            let best = (0..s.n_freq())
                .max_by(|&a, &b| s.magnitude(a, t).total_cmp(&s.magnitude(b, t)))
                .unwrap();
            assert_eq!(best, expected, "frame {t}");
        }
    }

    #[test]
    fn round_trip_white_noise() {
        let cfg = StftConfig::default();
        let x = noise(32000, 7);
        let s = stft(&Waveform::new(x.clone(), 16000).unwrap(), &cfg).unwrap();
        let y = istft(&s, &cfg, 32000).unwrap();
        let r = cfg.valid_range(32000);
        let num: f64 = r.clone().map(|i| (x[i] - y.samples()[i]).powi(2)).sum();
        let den: f64 = r.map(|i| x[i] * x[i]).sum();
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn linear_and_deterministic() {
        let cfg = StftConfig::default();
        let a = noise(4000, 1);
        let b = noise(4000, 2);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let e = StftEngine::new(cfg).unwrap();
        let (sa, sb, ss) = (e.forward(&a).unwrap(), e.forward(&b).unwrap(), e.forward(&sum).unwrap());
        for i in 0..ss.planes().len() {
            assert!((ss.planes()[i] - sa.planes()[i] - sb.planes()[i]).abs() < 1e-9);
        }
        assert_eq!(e.forward(&a).unwrap(), sa);
    }

    #[test]
    fn weighted_parseval_holds_per_frame() {
        let cfg = StftConfig::default();
        let e = StftEngine::new(cfg).unwrap();
        let x = noise(5000, 3);
        let s = e.forward(&x).unwrap();
        let w = cfg.window();
        for t in 0..s.n_frames() {
            let mut spec_energy = 0.0;
            for k in 0..s.n_freq() {
                let m = s.get(k, t).norm_sqr();
                // Bins strictly between DC and Nyquist appear twice in the full spectrum.
                let mult = if k == 0 || 2 * k == cfg.n_fft { 1.0 } else { 2.0 };
                spec_energy += mult * m;
            }
            let time_energy: f64 = (0..cfg.n_fft).map(|n| (x[t * cfg.hop + n] * w[n]).powi(2)).sum();
            let rel = (spec_energy - cfg.n_fft as f64 * time_energy).abs() / spec_energy;
            assert!(rel < 1e-9, "frame {t}: {rel}");
        }
    }

    #[test]
    fn energy_scales_quadratically() {
        let cfg = StftConfig::default();
        let e = StftEngine::new(cfg).unwrap();
        let x = noise(32000, 9);
        let x3: Vec<f64> = x.iter().map(|v| v * 3.0).collect();
        let ratio = e.forward(&x3).unwrap().energy() / e.forward(&x).unwrap().energy();
        assert!((ratio - 9.0).abs() / 9.0 < 1e-6);
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let cfg = StftConfig::default();
        let e = StftEngine::new(cfg).unwrap();
        let x = noise(1500, 4);
        let s = e.forward(&x).unwrap();
        let g = noise(s.planes().len(), 5);
        let lhs: f64 = s.planes().iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = e.adjoint(&g, s.n_frames(), x.len());
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn errors() {
        let cfg = StftConfig::default();
        assert!(stft(&Waveform::zeros(0, 16000), &cfg).is_err());
        assert!(stft(&Waveform::zeros(100, 16000), &cfg).is_err());
        assert!(stft(&Waveform::zeros(1000, 8000), &cfg).is_err());
        let s = stft(&Waveform::zeros(1000, 16000), &cfg).unwrap();
        assert!(istft(&s, &cfg, 5000).is_err());
        let z = istft(&Spectrogram::zeros(3, cfg), &cfg, 510 + 2 * 176).unwrap();
        assert!(z.samples().iter().all(|&v| v == 0.0));
    }
}
