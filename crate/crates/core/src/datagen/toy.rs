//! Synthetic desk-scale corpus: tone-burst "speech" with exact-zero pauses and
//! four noise types. Everything is generated from a seed, so the corpus needs
//! no downloads.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{normalize_peak, save_wav, Waveform, SAMPLE_RATE};
use crate::datagen::{label_silence, mix_at_snr, MixtureSample, SNR_LEVELS_DB};
use crate::error::{Error, Result};
use crate::segments::{segment_boundary, segment_count, SegmentLabels};

pub const NOISE_KINDS: [&str; 4] = ["white", "chirp", "am_tone", "cafe"];

/// Length of generated noise sources in seconds.
pub const NOISE_SECONDS: f64 = 6.0;

/// Independent sources written per noise kind, so a source-level split can
/// still place every kind in both splits.
pub const SOURCES_PER_KIND: usize = 3;

fn hann_ramp(i: usize, ramp: usize) -> f64 {
    0.5 * (1.0 - (PI * i as f64 / ramp as f64).cos())
}

/// Segment count drawn log-uniformly from `[lo, hi)`, giving the long-tailed
/// syllable and pause durations of speech rather than a regular rhythm.
fn log_uniform_segments(rng: &mut impl Rng, lo: f64, hi: f64) -> usize {
    rng.gen_range(lo.ln()..hi.ln()).exp().round() as usize
}

/// One peak-normalized clip of harmonic bursts separated by exact silence.
pub fn tone_burst_clip(len: usize, rng: &mut impl Rng) -> Waveform {
    tone_burst_clip_with_pauses(len, rng).0
}

/// Like [`tone_burst_clip`], also returning the pause pattern per 1/30 s
/// segment (1 = pause). Bursts start and end on segment boundaries.
pub fn tone_burst_clip_with_pauses(len: usize, rng: &mut impl Rng) -> (Waveform, Vec<u8>) {
    let rate = SAMPLE_RATE;
    let n_seg = segment_count(len, rate);
    let mut pauses = vec![1u8; n_seg];
    let mut x = vec![0.0; len];
    let ramp = (0.01 * rate as f64) as usize;
    let mut seg = rng.gen_range(2..9);
    while seg < n_seg {
        let burst = log_uniform_segments(rng, 4.0, 30.0);
        let end_seg = (seg + burst).min(n_seg);
        let (pos, end) = (segment_boundary(seg, rate), segment_boundary(end_seg, rate).min(len));
        let f0: f64 = rng.gen_range(110.0..260.0);
        let n_harm = rng.gen_range(2..5);
        let amps: Vec<f64> = (0..n_harm).map(|h| rng.gen_range(0.6..1.0) / (h as f64 + 1.0)).collect();
        let gain: f64 = rng.gen_range(0.8..1.0);
        let vibrato: f64 = rng.gen_range(0.0..0.02);
        let n = end - pos;
        let mut phase = 0.0f64;
        for i in 0..n {
            let t = i as f64 / rate as f64;
            let f = f0 * (1.0 + vibrato * (2.0 * PI * 5.0 * t).sin());
            phase += 2.0 * PI * f / rate as f64;
            let env = if i < ramp {
                hann_ramp(i, ramp)
            } else if n - i <= ramp {
                hann_ramp(n - i, ramp)
            } else {
                1.0
            };
            let v: f64 = amps
                .iter()
                .enumerate()
                .map(|(h, a)| a * ((h as f64 + 1.0) * phase).sin())
                .sum();
            x[pos + i] = gain * env * v;
        }
        pauses[seg..end_seg].iter_mut().for_each(|p| *p = 0);
        seg = end_seg + log_uniform_segments(rng, 3.0, 24.0);
    }
    let w = normalize_peak(&Waveform::new(x, rate).expect("finite"));
    (w, pauses)
}

/// Two-pole resonator at `freq` Hz with bandwidth `bw` Hz.
fn resonate(x: &[f64], freq: f64, bw: f64, rate: f64) -> Vec<f64> {
    let r = (-PI * bw / rate).exp();
    let (a1, a2) = (2.0 * r * (2.0 * PI * freq / rate).cos(), -r * r);
    let g = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = g * v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Broadband speech-like clip: glottal pulses shaped by three formants,
/// syllable envelopes, fricative noise bursts and low-level gaps. Denser in
/// frequency than [`tone_burst_clip`], for metric fixtures.
pub fn voiced_speech_clip(len: usize, rng: &mut impl Rng) -> Waveform {
    let rate = SAMPLE_RATE as f64;
    let gauss = Normal::new(0.0, 1.0).expect("valid normal");
    let mut x = vec![0.0; len];
    let mut pos = (rng.gen_range(0.05..0.2) * rate) as usize;
    while pos < len {
        let dur = ((rng.gen_range(0.12..0.3) * rate) as usize).min(len - pos);
        let f0: f64 = rng.gen_range(100.0..220.0);
        let glide: f64 = rng.gen_range(-0.2..0.2);
        let mut pulses = vec![0.0; dur];
        let mut phase = 0.0f64;
        for (i, p) in pulses.iter_mut().enumerate() {
            phase += f0 * (1.0 + glide * i as f64 / dur as f64) / rate;
            if phase >= 1.0 {
                phase -= 1.0;
                *p = 1.0;
            }
        }
        let formants = [(rng.gen_range(300.0..800.0), 80.0), (rng.gen_range(900.0..2200.0), 120.0), (rng.gen_range(2300.0..3200.0), 200.0)];
        let mut voiced = vec![0.0; dur];
        for (k, (f, bw)) in formants.iter().enumerate() {
            let y = resonate(&pulses, *f, *bw, rate);
            voiced.iter_mut().zip(y).for_each(|(v, y)| *v += y / (k as f64 + 1.0));
        }
        let fricative = rng.gen_bool(0.4);
        let mut prev = 0.0;
        for i in 0..dur {
            let env = (PI * i as f64 / dur as f64).sin();
            let mut v = voiced[i];
            if fricative && i < dur / 3 {
                let n = gauss.sample(rng);
                v += 0.05 * (n - prev);
                prev = n;
            }
            x[pos + i] += env * v;
        }
        pos += dur + (rng.gen_range(0.03..0.15) * rate) as usize;
    }
    for v in x.iter_mut() {
        *v += 1e-4 * gauss.sample(rng);
    }
    normalize_peak(&Waveform::new(x, SAMPLE_RATE).expect("finite"))
}

/// Noise source of the given kind.
pub fn noise_source(kind: &str, len: usize, rng: &mut impl Rng) -> Result<Waveform> {
    let rate = SAMPLE_RATE as f64;
    let gauss = Normal::new(0.0, 1.0).expect("valid normal");
    let x: Vec<f64> = match kind {
        "white" => (0..len).map(|_| 0.3 * gauss.sample(rng)).collect(),
        "chirp" => {
            let period: f64 = rng.gen_range(1.0..2.0);
            let (f_lo, f_hi): (f64, f64) = (rng.gen_range(150.0..400.0), rng.gen_range(3000.0..5000.0));
            let mut phase = 0.0f64;
            (0..len)
                .map(|i| {
                    let t = (i as f64 / rate) % period;
                    let f = f_lo + (f_hi - f_lo) * t / period;
                    phase += 2.0 * PI * f / rate;
                    0.5 * phase.sin()
                })
                .collect()
        }
        "am_tone" => {
            let carrier: f64 = rng.gen_range(400.0..1200.0);
            let modulation: f64 = rng.gen_range(2.0..5.0);
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    0.5 * (1.0 + 0.8 * (2.0 * PI * modulation * t).sin()) * (2.0 * PI * carrier * t).sin()
                })
                .collect()
        }
        "cafe" => {
            // Murmur of overlapping voices, a low rumble, and dish clinks.
            let mut x = vec![0.0; len];
            for _ in 0..6 {
                let f0: f64 = rng.gen_range(90.0..240.0);
                let rate_hz: f64 = rng.gen_range(2.0..5.0);
                let offset: f64 = rng.gen_range(0.0..2.0 * PI);
                for (i, v) in x.iter_mut().enumerate() {
                    let t = i as f64 / rate;
                    let env = (0.5 + 0.5 * (2.0 * PI * rate_hz * t + offset).sin()).powi(2);
                    *v += 0.08 * env * ((2.0 * PI * f0 * t).sin() + 0.5 * (4.0 * PI * f0 * t).sin());
                }
            }
            let mut lp = 0.0;
            for v in x.iter_mut() {
                lp = 0.97 * lp + 0.03 * gauss.sample(rng);
                *v += 0.6 * lp;
            }
            let clinks = (len as f64 / rate * 1.5) as usize;
            for _ in 0..clinks {
                let start = rng.gen_range(0..len);
                let f: f64 = rng.gen_range(2500.0..4500.0);
                for i in 0..((0.08 * rate) as usize).min(len - start) {
                    let t = i as f64 / rate;
                    x[start + i] += 0.3 * (-t * 60.0).exp() * (2.0 * PI * f * t).sin();
                }
            }
            x
        }
        other => return Err(Error::Argument(format!("unknown noise kind {other}"))),
    };
    Ok(normalize_peak(&Waveform::new(x, SAMPLE_RATE)?))
}

/// Write `n_clean` 2 s clean clips to `dir/clean` and
/// [`SOURCES_PER_KIND`] sources per noise kind to `dir/noise`.
pub fn write_corpus(dir: &Path, n_clean: usize, seed: u64) -> Result<()> {
    let clean_dir = dir.join("clean");
    let noise_dir = dir.join("noise");
    for d in [&clean_dir, &noise_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_clean {
        let clip = tone_burst_clip(2 * SAMPLE_RATE as usize, &mut rng);
        save_wav(clean_dir.join(format!("speaker{i:03}.wav")), &clip)?;
    }
    let noise_len = (NOISE_SECONDS * SAMPLE_RATE as f64) as usize;
    for kind in NOISE_KINDS {
        for j in 0..SOURCES_PER_KIND {
            let w = noise_source(kind, noise_len, &mut rng)?;
            save_wav(noise_dir.join(format!("{kind}{j}.wav")), &w)?;
        }
    }
    Ok(())
}

/// In-memory labelled mixtures cycling through the noise kinds and SNR
/// levels, for tests and quick experiments that skip the corpus on disk.
pub fn toy_mixtures(n_clips: usize, len: usize, seed: u64) -> Result<Vec<(String, MixtureSample, SegmentLabels)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_clips)
        .map(|i| {
            let clean = tone_burst_clip(len, &mut rng);
            let noise = noise_source(NOISE_KINDS[i % NOISE_KINDS.len()], len, &mut rng)?;
            let sample = mix_at_snr(&clean, &noise, SNR_LEVELS_DB[i % SNR_LEVELS_DB.len()])?;
            let labels = label_silence(&sample.clean);
            Ok((format!("toy{i:03}"), sample, labels))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_have_pauses_and_bursts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let c = tone_burst_clip(32000, &mut rng);
            assert_eq!(c.len(), 32000);
            assert!((c.peak() - 1.0).abs() < 1e-12);
            let l = label_silence(&c);
            let silent = l.silent_count();
            assert!(silent > 5 && silent < 55, "{silent}");
            assert!(c.samples().iter().filter(|&&v| v == 0.0).count() > 1000);
        }
    }

    #[test]
    fn labels_recover_burst_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (c, pauses) = tone_burst_clip_with_pauses(32000, &mut rng);
            assert_eq!(label_silence(&c).labels, pauses);
        }
    }

    #[test]
    fn noises_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in NOISE_KINDS {
            let n = noise_source(k, 16000, &mut rng).unwrap();
            assert!((n.peak() - 1.0).abs() < 1e-12);
            assert!(n.power() > 1e-3, "{k}");
        }
        assert!(noise_source("traffic", 10, &mut rng).is_err());
    }
}
