use serde::{Deserialize, Serialize};

use super::SilenceModel;
use crate::audio::Waveform;
use crate::error::{ensure_arg, Error, Result};
use crate::nn::{Graph, Tensor};
use crate::segments::{expand_segments, SampleMask};
use crate::spectro::{Spectrogram, StftEngine};

/// How a removal mask multiplies the noisy spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// `(a + bi)(p + qi)` per bin.
    #[default]
    Complex,
    /// Real and imaginary channels scaled independently: `(ap, bq)`.
    PerChannel,
}

/// Two-channel mask over `T x F`, stored planar like [`Spectrogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexRatioMask {
    data: Vec<f64>,
    n_frames: usize,
    n_freq: usize,
}

impl ComplexRatioMask {
    pub fn new(data: Vec<f64>, n_frames: usize, n_freq: usize) -> Result<Self> {
        ensure_arg!(data.len() == 2 * n_frames * n_freq, "mask data does not match {n_frames}x{n_freq}");
        ensure_arg!(data.iter().all(|v| (0.0..=1.0).contains(v)), "mask entries must lie in [0, 1]");
        Ok(Self { data, n_frames, n_freq })
    }

    /// A constant mask `(re, im)` for every bin.
    pub fn constant(re: f64, im: f64, n_frames: usize, n_freq: usize) -> Result<Self> {
        let plane = n_frames * n_freq;
        let mut data = vec![re; 2 * plane];
        data[plane..].iter_mut().for_each(|v| *v = im);
        Self::new(data, n_frames, n_freq)
    }

    pub fn planes(&self) -> &[f64] {
        &self.data
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }
}

/// `s_x ⊙ c` under the given multiplication mode.
pub fn apply_mask(s: &Spectrogram, c: &ComplexRatioMask, mode: MaskMode) -> Result<Spectrogram> {
    ensure_arg!(
        s.n_frames() == c.n_frames && s.n_freq() == c.n_freq,
        "mask shape {}x{} does not match spectrogram {}x{}",
        c.n_frames,
        c.n_freq,
        s.n_frames(),
        s.n_freq()
    );
    let plane = s.n_frames() * s.n_freq();
    let (x, m) = (s.planes(), &c.data);
    let mut out = vec![0.0; 2 * plane];
    for i in 0..plane {
        let (a, b, p, q) = (x[i], x[plane + i], m[i], m[plane + i]);
        let (re, im) = match mode {
            MaskMode::Complex => (a * p - b * q, a * q + b * p),
            MaskMode::PerChannel => (a * p, b * q),
        };
        out[i] = re;
        out[plane + i] = im;
    }
    Spectrogram::from_planes(out, s.n_frames(), *s.config())
}

/// Expands segment confidences to samples, binarized at `threshold` when
/// given (confidence `>= threshold` marks silence) and kept continuous
/// otherwise.
pub fn confidences_to_mask(conf: &[f64], threshold: Option<f64>, n_samples: usize, rate: u32) -> Result<SampleMask> {
    if let Some(t) = threshold {
        ensure_arg!((0.0..=1.0).contains(&t), "threshold {t} outside [0, 1]");
    }
    let values: Vec<f64> = match threshold {
        Some(t) => conf.iter().map(|&c| if c >= t { 1.0 } else { 0.0 }).collect(),
        None => conf.to_vec(),
    };
    Ok(SampleMask(expand_segments(&values, n_samples, rate)?))
}

/// `x ⊙ m`: the signal left audible in the (detected) silent intervals.
pub fn noise_profile(x: &Waveform, m: &SampleMask) -> Result<Waveform> {
    ensure_arg!(x.len() == m.len(), "mask of {} samples for a {}-sample signal", m.len(), x.len());
    let s = x.samples().iter().zip(m.values()).map(|(a, b)| a * b).collect();
    Waveform::new(s, x.sample_rate())
}

/// Where the silent-interval mask comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Threshold the detector's confidences.
    Detector,
    /// Use the detector's confidences directly as a soft mask, as during
    /// end-to-end training.
    DetectorSoft,
    /// A given mask (ground-truth or perturbed intervals); the detector is not run.
    Provided(SampleMask),
    /// Every sample counts as silent, so the profile is the noisy input.
    AllOnes,
}

/// How the noise estimate is removed from the noisy spectrogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Removal {
    Network,
    /// Magnitude spectral subtraction with a spectral floor.
    Subtraction { floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOptions {
    pub threshold: f64,
    pub mask_source: MaskSource,
    pub removal: Removal,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        Self { threshold: 0.5, mask_source: MaskSource::Detector, removal: Removal::Network }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub denoised: Waveform,
    pub mask: SampleMask,
    pub noise_est: Spectrogram,
    /// Detector confidences, when the detector ran.
    pub confidences: Option<Vec<f64>>,
}

fn spec_tensor(s: &Spectrogram) -> Tensor {
    Tensor::new(vec![1, 2, s.n_frames(), s.n_freq()], s.planes().to_vec())
}

impl SilenceModel {
    fn engine(&self) -> Result<StftEngine> {
        StftEngine::new(self.spec.stft)
    }

    fn check_spec(&self, s: &Spectrogram) -> Result<()> {
        ensure_arg!(
            *s.config() == self.spec.stft,
            "spectrogram was computed with a different STFT configuration"
        );
        Ok(())
    }

    /// Segment confidences in `(0, 1)` for a clip of `n_samples` samples.
    pub fn sid_forward(&self, s_x: &Spectrogram, n_samples: usize) -> Result<Vec<f64>> {
        self.check_spec(s_x)?;
        ensure_arg!(
            self.spec.stft.n_frames(n_samples) == s_x.n_frames(),
            "{} frames do not come from {n_samples} samples",
            s_x.n_frames()
        );
        let mut g = Graph::new(&self.store, false);
        let x = g.input(spec_tensor(s_x));
        let c = self.sid.forward(&mut g, x, n_samples, &self.spec.stft, self.spec.stft.sample_rate);
        Ok(g.value(c).data().to_vec())
    }

    pub fn estimate_noise(&self, s_x: &Spectrogram, s_profile: &Spectrogram) -> Result<Spectrogram> {
        self.check_spec(s_x)?;
        ensure_arg!(s_x.same_shape(s_profile), "noisy and profile spectrograms differ in shape");
        let mut g = Graph::new(&self.store, false);
        let x = g.input(spec_tensor(s_x));
        let p = g.input(spec_tensor(s_profile));
        let y = self.ne.forward(&mut g, x, p);
        Spectrogram::from_planes(g.value(y).data().to_vec(), s_x.n_frames(), self.spec.stft)
    }

    pub fn removal_mask(&self, s_x: &Spectrogram, s_noise: &Spectrogram) -> Result<ComplexRatioMask> {
        self.check_spec(s_x)?;
        ensure_arg!(s_x.same_shape(s_noise), "noisy and noise spectrograms differ in shape");
        let mut g = Graph::new(&self.store, false);
        let x = g.input(spec_tensor(s_x));
        let n = g.input(spec_tensor(s_noise));
        let y = self.nr.forward(&mut g, x, n);
        ComplexRatioMask::new(g.value(y).data().to_vec(), s_x.n_frames(), s_x.n_freq())
    }

    /// Full chain: STFT, detection, noise profile, noise estimate, removal
    /// mask, inverse STFT. Output length equals input length.
    pub fn denoise(&self, x: &Waveform, opts: &DenoiseOptions) -> Result<DenoiseOutput> {
        let cfg = self.spec.stft;
        if x.sample_rate() != cfg.sample_rate {
            return Err(Error::Checkpoint(format!(
                "model expects {} Hz input, got {} Hz",
                cfg.sample_rate,
                x.sample_rate()
            )));
        }
        let engine = self.engine()?;
        let s_x = engine.forward(x.samples())?;
        let (mask, confidences) = match &opts.mask_source {
            MaskSource::Detector => {
                let conf = self.sid_forward(&s_x, x.len())?;
                (confidences_to_mask(&conf, Some(opts.threshold), x.len(), cfg.sample_rate)?, Some(conf))
            }
            MaskSource::DetectorSoft => {
                let conf = self.sid_forward(&s_x, x.len())?;
                (confidences_to_mask(&conf, None, x.len(), cfg.sample_rate)?, Some(conf))
            }
            MaskSource::Provided(m) => {
                ensure_arg!(m.len() == x.len(), "provided mask has {} samples, signal {}", m.len(), x.len());
                (m.clone(), None)
            }
            MaskSource::AllOnes => (SampleMask(vec![1.0; x.len()]), None),
        };
        let profile = noise_profile(x, &mask)?;
        let s_profile = engine.forward(profile.samples())?;
        let noise_est = self.estimate_noise(&s_x, &s_profile)?;
        let cleaned = match opts.removal {
            Removal::Network => {
                let c = self.removal_mask(&s_x, &noise_est)?;
                apply_mask(&s_x, &c, self.spec.mask_mode)?
            }
            Removal::Subtraction { floor } => crate::baselines::subtract_removal(&s_x, &noise_est, floor)?,
        };
        let samples = engine.inverse(&cleaned, x.len())?;
        Ok(DenoiseOutput {
            denoised: Waveform::new(samples, cfg.sample_rate)?,
            mask,
            noise_est,
            confidences,
        })
    }
}
