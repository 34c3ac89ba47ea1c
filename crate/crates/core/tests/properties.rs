use proptest::collection::vec;
use proptest::prelude::*;

use silence_denoise::audio::{load_wav, normalize_peak, save_wav, split_clips};
use silence_denoise::baselines::{gate_spectrogram, threshold_sid, SpectralGateConfig};
use silence_denoise::datagen::{expand_labels_to_samples, label_silence, mix_at_snr, SNR_LEVELS_DB};
use silence_denoise::metrics::{sid_metrics, ssnr, stoi};
use silence_denoise::models::{apply_mask, ComplexRatioMask, MaskMode, ModelCheckpoint, ModelSpec, SilenceModel};
use silence_denoise::segments::{segment_boundary, segment_bounds, segment_count};
use silence_denoise::spectro::StftEngine;
use silence_denoise::training::l0_from_outputs;
use silence_denoise::{ClipSpec, SegmentLabels, Spectrogram, StftConfig, Waveform};

const RATE: u32 = 16_000;

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, RATE).unwrap()
}

/// Samples in [-1, 1] with a mix of loud stretches and exact zeros.
fn signal(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    vec(prop_oneof![3 => -1.0f64..1.0, 1 => Just(0.0)], len)
}

fn nonzero_signal(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    signal(len).prop_filter("needs energy", |s| s.iter().any(|&v| v.abs() > 1e-3))
}

/// Clip built from whole segments, each either zero or a loud or quiet tone.
fn segmented_clip() -> impl Strategy<Value = Vec<f64>> {
    (1usize..90).prop_flat_map(|n_seg| vec((0u8..3, 0.0f64..1.0), n_seg)).prop_map(|segs| {
        let n = segment_boundary(segs.len(), RATE);
        let mut x = vec![0.0; n];
        for (i, &(kind, phase)) in segs.iter().enumerate() {
            let amp = [0.0, 0.05, 0.9][kind as usize];
            for (j, v) in x[segment_boundary(i, RATE)..segment_boundary(i + 1, RATE)].iter_mut().enumerate() {
                *v = amp * (0.3 * j as f64 + 6.0 * phase).sin();
            }
        }
        x
    })
}

fn labels(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<u8>> {
    vec(0u8..2, len)
}

fn spectrogram(frames: usize, seed: Vec<f64>) -> Spectrogram {
    let cfg = StftConfig::default();
    let plane = frames * cfg.n_freq();
    let data = (0..2 * plane).map(|i| seed[i % seed.len()] * (1.0 + (i % 7) as f64)).collect();
    Spectrogram::from_planes(data, frames, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wav_round_trip_within_one_lsb(x in signal(1..4000)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        save_wav(&path, &wave(x.clone())).unwrap();
        let y = load_wav(&path).unwrap();
        prop_assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(y.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0, "{} vs {}", a, b);
        }
    }

    #[test]
    fn normalize_peak_is_idempotent(x in signal(1..2000), scale in 1e-3f64..10.0) {
        let w = wave(x.iter().map(|v| v * scale).collect());
        let once = normalize_peak(&w);
        prop_assert_eq!(normalize_peak(&once), once);
    }

    #[test]
    fn split_clips_tile_the_input(x in signal(0..9000)) {
        let spec = ClipSpec { duration_s: 0.125, sample_rate: RATE };
        let clip = spec.n_samples().unwrap();
        let clips = split_clips(&wave(x.clone()), &spec).unwrap();
        prop_assert_eq!(clips.len(), x.len() / clip);
        let joined: Vec<f64> = clips.iter().flat_map(|c| c.samples().to_vec()).collect();
        prop_assert_eq!(&joined[..], &x[..clips.len() * clip]);
    }

    #[test]
    fn stft_energy_tracks_waveform_energy(x in nonzero_signal(2000..6000), gain in 0.01f64..20.0) {
        let e = StftEngine::new(StftConfig::default()).unwrap();
        let base = e.forward(&x).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * gain).collect();
        let ratio = e.forward(&scaled).unwrap().energy() / base.energy();
        prop_assert!((ratio / (gain * gain) - 1.0).abs() < 1e-6);
        prop_assert_eq!(e.forward(&x).unwrap(), base);
    }

    #[test]
    fn stft_has_fixed_bin_count_and_finite_entries(x in signal(510..5000)) {
        let s = StftEngine::new(StftConfig::default()).unwrap().forward(&x).unwrap();
        prop_assert_eq!(s.n_freq(), 256);
        prop_assert!(s.planes().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mixtures_are_exact(c in nonzero_signal(200..3000), seed in vec(-1.0f64..1.0, 7), snr in 0usize..7) {
        let noise: Vec<f64> = (0..c.len()).map(|i| seed[i % 7] + 0.1 * (i as f64).sin()).collect();
        let m = mix_at_snr(&wave(c), &wave(noise), SNR_LEVELS_DB[snr]).unwrap();
        prop_assert_eq!(m.mixture.len(), m.clean.len());
        prop_assert_eq!(m.noise.len(), m.clean.len());
        for i in 0..m.mixture.len() {
            prop_assert_eq!(m.mixture.samples()[i], m.clean.samples()[i] + m.noise.samples()[i]);
            prop_assert_eq!(m.mixture.samples()[i] - m.noise.samples()[i], m.clean.samples()[i]);
        }
    }

    #[test]
    fn labels_cover_every_segment(x in signal(1..6000)) {
        let l = label_silence(&wave(x.clone()));
        prop_assert_eq!(l.len(), segment_count(x.len(), RATE));
        let bounds = segment_bounds(x.len(), RATE);
        prop_assert_eq!(bounds.first().map(|r| r.start), Some(0));
        prop_assert_eq!(bounds.last().map(|r| r.end), Some(x.len()));
    }

    #[test]
    fn labeling_commutes_with_time_reversal(x in segmented_clip()) {
        let forward = label_silence(&wave(x.clone()));
        let mut rev = x;
        rev.reverse();
        let mut backward = label_silence(&wave(rev)).labels;
        backward.reverse();
        prop_assert_eq!(forward.labels, backward);
    }

    #[test]
    fn expanded_labels_survive_majority_vote(l in labels(1..120), extra in 0usize..500) {
        let n = (segment_boundary(l.len() - 1, RATE) + 1 + extra).min(segment_boundary(l.len(), RATE));
        let labels = SegmentLabels::new(l.clone(), RATE).unwrap();
        let mask = expand_labels_to_samples(&labels, n, RATE).unwrap();
        let voted: Vec<u8> = segment_bounds(n, RATE)
            .into_iter()
            .map(|r| {
                let ones = mask.values()[r.clone()].iter().filter(|&&v| v == 1.0).count();
                u8::from(2 * ones > r.len())
            })
            .collect();
        prop_assert_eq!(voted, l);
    }

    #[test]
    fn threshold_baseline_matches_labeling_on_clean_input(x in segmented_clip()) {
        let w = normalize_peak(&wave(x));
        prop_assert_eq!(threshold_sid(&w), label_silence(&w));
    }

    #[test]
    fn spectral_gate_never_amplifies(
        x in nonzero_signal(3000..6000),
        l in labels(12..13),
        factor in 1.0f64..4.0,
        floor in 0.0f64..=1.0,
        smoothing in 1usize..6,
    ) {
        let n = x.len();
        let mut lab = vec![0u8; segment_count(n, RATE)];
        for (i, v) in lab.iter_mut().enumerate() {
            *v = l[i % l.len()];
        }
        lab[0] = 1;
        let labels = SegmentLabels::new(lab, RATE).unwrap();
        let engine = StftEngine::new(StftConfig::default()).unwrap();
        let spec = engine.forward(&x).unwrap();
        let cfg = SpectralGateConfig { over_subtraction: factor, floor, smoothing_frames: smoothing };
        let out = gate_spectrogram(&spec, &labels, n, &cfg).unwrap();
        for t in 0..spec.n_frames() {
            for k in 0..spec.n_freq() {
                prop_assert!(out.magnitude(k, t) <= spec.magnitude(k, t) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn masks_in_unit_box_bound_magnitude(seed in vec(-3.0f64..3.0, 1..40), m in vec(0.0f64..=1.0, 1..40), frames in 1usize..6) {
        let s = spectrogram(frames, seed);
        let plane = frames * s.n_freq();
        let data = (0..2 * plane).map(|i| m[i % m.len()]).collect();
        let c = ComplexRatioMask::new(data, frames, s.n_freq()).unwrap();
        for mode in [MaskMode::Complex, MaskMode::PerChannel] {
            let out = apply_mask(&s, &c, mode).unwrap();
            for t in 0..frames {
                for k in 0..s.n_freq() {
                    let bound = std::f64::consts::SQRT_2 * s.magnitude(k, t);
                    prop_assert!(out.magnitude(k, t) <= bound * (1.0 + 1e-12) + 1e-300);
                }
            }
        }
    }

    #[test]
    fn sid_metric_identities(pairs in vec((0u8..2, 0u8..2), 1..200)) {
        let pred = SegmentLabels::new(pairs.iter().map(|p| p.0).collect(), RATE).unwrap();
        let truth = SegmentLabels::new(pairs.iter().map(|p| p.1).collect(), RATE).unwrap();
        let r = sid_metrics(&pred, &truth).unwrap();
        let total = pairs.len();
        prop_assert_eq!(r.tp + r.tn + r.fp + r.fn_, total);
        prop_assert!((r.accuracy * total as f64 - (r.tp + r.tn) as f64).abs() < 1e-9);
        if let (Some(p), Some(rc), Some(f1)) = (r.precision, r.recall, r.f1) {
            if p + rc > 0.0 {
                prop_assert_eq!(f1, 2.0 * p * rc / (p + rc));
            }
        }
    }

    #[test]
    fn loss_terms_are_nonnegative_and_sum(a in vec(-2.0f64..2.0, 1..20), b in vec(-2.0f64..2.0, 1..20), beta in 0.01f64..10.0) {
        let (ne, nt) = (spectrogram(3, a.clone()), spectrogram(3, b.clone()));
        let (ms, ct) = (spectrogram(3, b), spectrogram(3, a));
        let l = l0_from_outputs(&ne, &ms, &nt, &ct, beta).unwrap();
        prop_assert!(l.noise_term >= 0.0 && l.signal_term >= 0.0 && l.bce_term >= 0.0);
        prop_assert_eq!(l.total, l.noise_term + beta * l.signal_term);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metrics_accept_swapped_inputs(a in nonzero_signal(8000..9000), b in nonzero_signal(8000..9000)) {
        let n = a.len().min(b.len());
        let (x, y) = (wave(a[..n].to_vec()), wave(b[..n].to_vec()));
        for (r, t) in [(&x, &y), (&y, &x)] {
            let s = ssnr(r, t).unwrap();
            prop_assert!((-10.0..=35.0).contains(&s));
            let _ = stoi(r, t);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn networks_accept_any_length_and_stay_in_range(len in 600usize..9000, seed in 0u64..1000, x in vec(-1.0f64..1.0, 64)) {
        let model = SilenceModel::new(ModelSpec::desk(), seed);
        let samples: Vec<f64> = (0..len).map(|i| x[i % 64] * (1.0 + (i / 64 % 5) as f64) / 5.0).collect();
        let engine = StftEngine::new(StftConfig::default()).unwrap();
        let s = engine.forward(&samples).unwrap();
        let conf = model.sid_forward(&s, len).unwrap();
        prop_assert_eq!(conf.len(), segment_count(len, RATE));
        prop_assert!(conf.iter().all(|c| (0.0..=1.0).contains(c)));
        let noise = model.estimate_noise(&s, &s).unwrap();
        prop_assert!(noise.same_shape(&s));
        prop_assert!(noise.planes().iter().all(|v| v.is_finite()));
        let mask = model.removal_mask(&s, &noise).unwrap();
        prop_assert_eq!((mask.n_frames(), mask.n_freq()), (s.n_frames(), s.n_freq()));
        prop_assert!(mask.planes().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..1000) {
        let ckpt = ModelCheckpoint::new(SilenceModel::new(ModelSpec::desk(), seed), "sid");
        let bytes = ckpt.to_bytes().unwrap();
        let again = ModelCheckpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap();
        prop_assert_eq!(bytes, again);
    }
}
