//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use silence_denoise::datagen::{self, toy, DatasetManifest, Split, SNR_LEVELS_DB};
use silence_denoise::experiment::{
    default_workers, evaluate_system, load_clips, perturbation_study, synth_dataset, training_set, LabeledClip,
    PerturbMode, Schedules, System,
};
use silence_denoise::metrics::{self, PesqBackend, PesqMode};
use silence_denoise::models::{ModelSpec, SilenceModel, NE_PREFIX, NR_PREFIX, SID_PREFIX};
use silence_denoise::nn::ParamId;
use silence_denoise::spectro::StftEngine;
use silence_denoise::training::{self, batch_gradients, Example, Phase, RunOptions, TrainingConfig, TrainingSet};
use silence_denoise::{SegmentLabels, StftConfig, Waveform};

const RATE: u32 = 16_000;
const TWO_S: usize = 32_000;

/// Tolerances and budgets.
const ROUND_TRIP_TOL: f64 = 1e-4;
const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(10);
const SNR_TOL_DB: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-3;
const GRAD_WEIGHTS: usize = 12;
const STOI_TOL: f64 = 1e-3;
const SID_ACCURACY: f64 = 0.95;
const L0_REDUCTION: f64 = 0.5;
const EMERGENT_AUC: f64 = 0.6;
const TRAINING_BUDGET: Duration = Duration::from_secs(30 * 60);
const GATE_GAIN_DB: f64 = 5.0;
const DETERMINISM_TOL: f64 = 1e-6;

/// Toy-scale corpus and subset sizes.
const CORPUS_SEED: u64 = 2020;
const CLEAN_CLIPS: usize = 100;
const SID_TRAIN_CLIPS: usize = 24;
const DENOISER_TRAIN_CLIPS: usize = 16;
const TEST_CLIPS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den).sqrt()
}

fn stft_round_trip() -> Outcome {
    let cfg = StftConfig::default();
    let engine = StftEngine::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let x: Vec<f64> = if i % 2 == 0 {
            (0..TWO_S).map(|_| rng.gen_range(-1.0..1.0)).collect()
        } else {
            toy::tone_burst_clip(TWO_S, &mut rng).into_samples()
        };
        let y = engine.inverse(&engine.forward(&x).unwrap(), TWO_S).unwrap();
        let r = cfg.valid_range(TWO_S);
        worst = worst.max(rel_l2(&x[r.clone()], &y[r]));
    }
    let took = start.elapsed();
    outcome(
        worst <= ROUND_TRIP_TOL && took < ROUND_TRIP_BUDGET,
        format!("worst relative error {worst:.2e} (tol {ROUND_TRIP_TOL:.0e}), {:.2} s", took.as_secs_f64()),
    )
}

fn mixing_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for kind in toy::NOISE_KINDS {
        let clean = toy::tone_burst_clip(TWO_S, &mut rng);
        let noise = toy::noise_source(kind, TWO_S, &mut rng).unwrap();
        for snr in SNR_LEVELS_DB {
            let s = datagen::mix_at_snr(&clean, &noise, snr).unwrap();
            let sum: Vec<f64> = s.clean.samples().iter().zip(s.noise.samples()).map(|(a, b)| a + b).collect();
            assert_eq!(sum, s.mixture.samples(), "mixture is not clean + scaled noise");
            worst = worst.max((datagen::measured_snr_db(&s.clean, &s.noise) - snr).abs());
        }
    }
    outcome(worst <= SNR_TOL_DB, format!("worst SNR deviation {worst:.2e} dB over 4 kinds x 7 targets"))
}

fn labeling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = 0;
    for _ in 0..20 {
        let (w, truth) = toy::tone_burst_clip_with_pauses(TWO_S, &mut rng);
        exact += (datagen::label_silence(&w).labels == truth) as usize;
    }
    // One full-scale segment fixes the peak; the probe segment's mean square
    // sits just either side of the threshold.
    let bounds = silence_denoise::segments::segment_bounds(TWO_S, RATE);
    let probe = |ms: f64| {
        let mut s = vec![0.0; TWO_S];
        s[bounds[0].clone()].iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 1.0 } else { -1.0 });
        let a = ms.sqrt();
        s[bounds[5].clone()].iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { a } else { -a });
        datagen::label_silence(&Waveform::new(s, RATE).unwrap()).labels[5]
    };
    let t = datagen::SILENCE_THRESHOLD;
    let below = probe(t * (1.0 - 1e-9));
    let above = probe(t * (1.0 + 1e-9));
    let pass = exact == 20 && below == 1 && above == 0;
    outcome(pass, format!("{exact}/20 pause patterns exact; boundary labels below={below} above={above}"))
}

fn shape_contracts() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clip = toy::tone_burst_clip(TWO_S, &mut rng);
    for (name, spec) in [("paper", ModelSpec::paper()), ("desk", ModelSpec::desk())] {
        let model = SilenceModel::new(spec.clone(), 1);
        let engine = StftEngine::new(spec.stft).unwrap();
        let s = engine.forward(clip.samples()).unwrap();
        let conf = model.sid_forward(&s, TWO_S).unwrap();
        let mask = model.removal_mask(&s, &s).unwrap();
        let conf_ok = conf.len() == 60 && conf.iter().all(|&c| c > 0.0 && c < 1.0);
        let mask_ok = mask.planes().iter().all(|v| (0.0..=1.0).contains(v));
        ok &= s.n_freq() == 256 && s.n_frames() == 179 && conf_ok && mask_ok;
        notes.push(format!("{name}: {}x{}, {} confidences, mask ok={mask_ok}", s.n_freq(), s.n_frames(), conf.len()));
    }
    let model = SilenceModel::new(ModelSpec::desk(), 1);
    for secs in [1.0, 2.0, 3.7] {
        let n = (secs * RATE as f64).round() as usize;
        let x = toy::tone_burst_clip(n, &mut rng);
        let y = model.denoise(&x, &Default::default()).unwrap().denoised;
        ok &= y.len() == n;
    }
    notes.push("denoise keeps 1.0/2.0/3.7 s lengths".into());
    outcome(ok, notes.join("; "))
}

/// Worst relative error between backprop and central differences over
/// sampled weights; weights whose stencil straddles a ReLU kink (finite
/// differences at h and h/2 disagree) are resampled.
fn gradient_error(phase: Phase, prefixes: &[&str]) -> f64 {
    let items = toy::toy_mixtures(2, 16_000, 11).unwrap();
    let d = TrainingSet::from_samples(items, ModelSpec::desk().stft).unwrap();
    let mut model = SilenceModel::new(ModelSpec::desk(), 4);
    let mut cfg = TrainingConfig::paper(phase);
    cfg.batch_size = 2;
    let batch: Vec<&Example> = d.examples.iter().collect();
    let (grads, _) = batch_gradients(&model, &cfg, &batch, None).unwrap();
    let ids: Vec<ParamId> = prefixes
        .iter()
        .flat_map(|p| model.store.ids_with_prefix(p))
        .filter(|&id| model.store.is_trainable(id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let (mut checked, mut kinks, mut worst) = (0, 0, 0.0f64);
    while checked < GRAD_WEIGHTS {
        let id = ids[rng.gen_range(0..ids.len())];
        let k = rng.gen_range(0..model.store.get(id).len());
        let ana = grads.get(id).unwrap().data()[k];
        let orig = model.store.get(id).data()[k];
        let mut at = |v: f64| {
            model.store.get_mut(id).data_mut()[k] = v;
            batch_gradients(&model, &cfg, &batch, None).unwrap().1.total
        };
        let coarse = (at(orig + h) - at(orig - h)) / (2.0 * h);
        let fine = (at(orig + h / 2.0) - at(orig - h / 2.0)) / h;
        at(orig);
        let scale = fine.abs().max(ana.abs());
        if scale < 1e-6 {
            continue;
        }
        if (coarse - fine).abs() / scale > 1e-4 {
            kinks += 1;
            assert!(kinks <= GRAD_WEIGHTS, "finite differences unstable at most sampled weights");
            continue;
        }
        worst = worst.max((fine - ana).abs() / scale);
        checked += 1;
    }
    worst
}

fn gradient_check() -> Outcome {
    let l0 = gradient_error(Phase::DenoiserGt, &[NE_PREFIX, NR_PREFIX]);
    let l1 = gradient_error(Phase::Sid, &[SID_PREFIX]);
    outcome(
        l0 <= GRAD_TOL && l1 <= GRAD_TOL,
        format!("{GRAD_WEIGHTS} weights each; worst relative error L0 {l0:.2e}, L1 {l1:.2e}"),
    )
}

fn sid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut agree = 0;
    for _ in 0..100 {
        let p_silent = rng.gen_range(0.0..1.0);
        let draw = |rng: &mut ChaCha8Rng| (0..10_000).map(|_| rng.gen_bool(p_silent) as u8).collect::<Vec<u8>>();
        let (pred, truth) = (draw(&mut rng), draw(&mut rng));
        let mut counts = [[0usize; 2]; 2];
        for i in 0..pred.len() {
            counts[pred[i] as usize][truth[i] as usize] += 1;
        }
        let (tp, tn, fp, fn_) = (counts[1][1], counts[0][0], counts[1][0], counts[0][1]);
        let r = metrics::sid_metrics(&SegmentLabels::new(pred, RATE).unwrap(), &SegmentLabels::new(truth, RATE).unwrap())
            .unwrap();
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let accuracy = (tp + tn) as f64 / 10_000.0;
        agree += ((r.tp, r.tn, r.fp, r.fn_) == (tp, tn, fp, fn_)
            && r.precision == precision
            && r.recall == recall
            && r.accuracy == accuracy) as usize;
    }
    outcome(agree == 100, format!("{agree}/100 fixtures match brute-force counts exactly"))
}

fn metric_sanity(pesq: Option<&PesqBackend>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut self_ok = true;
    let mut monotone = true;
    let mut notes = Vec::new();
    for i in 0..5 {
        let clean = toy::voiced_speech_clip(TWO_S * 3 / 2, &mut rng);
        let noise = toy::noise_source("white", clean.len(), &mut rng).unwrap();
        let g = (clean.power() / noise.power()).sqrt();
        let stoi = metrics::stoi(&clean, &clean).unwrap();
        let ssnr = metrics::ssnr(&clean, &clean).unwrap();
        self_ok &= (stoi - 1.0).abs() <= STOI_TOL && ssnr == metrics::SSNR_MAX_DB;
        let mut prev: Option<metrics::ClipMetrics> = None;
        for alpha in [0.0, 0.1, 0.3, 1.0] {
            let s: Vec<f64> = clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + alpha * g * n).collect();
            let m = metrics::evaluate_clip("f", 0.0, &clean, &Waveform::new(s, RATE).unwrap(), pesq).unwrap();
            if let Some(p) = &prev {
                let pairs = [
                    (Some(p.ssnr), Some(m.ssnr)),
                    (Some(p.stoi), Some(m.stoi)),
                    (p.pesq, m.pesq),
                    (p.csig, m.csig),
                    (p.cbak, m.cbak),
                    (p.covl, m.covl),
                ];
                for (a, b) in pairs {
                    if let (Some(a), Some(b)) = (a, b) {
                        monotone &= b <= a + 1e-12;
                    }
                }
            }
            if i == 0 {
                notes.push(format!(
                    "a={alpha}: ssnr {:.2} stoi {:.3} pesq {}",
                    m.ssnr,
                    m.stoi,
                    m.pesq.map_or("n/a".into(), |v| format!("{v:.2}"))
                ));
            }
            prev = Some(m);
        }
    }
    let backend = if pesq.is_some() { "with PESQ and composites" } else { "PESQ backend absent" };
    outcome(self_ok && monotone, format!("identity ok={self_ok}, monotone={monotone} ({backend}); fixture 0: {}", notes.join(", ")))
}

/// Trained models and data shared by the toy-scale criteria.
struct Trained {
    train_sid: Vec<LabeledClip>,
    test: Vec<LabeledClip>,
    sid_acc: f64,
    l0_first: f64,
    l0_last: f64,
    two_step: SilenceModel,
    e2e_auc: Option<f64>,
    took: Duration,
}

fn toy_corpus(dir: &Path, seed: u64) -> DatasetManifest {
    toy::write_corpus(&dir.join("src"), CLEAN_CLIPS, seed).unwrap();
    synth_dataset(&dir.join("src/clean"), &dir.join("src/noise"), &dir.join("data"), 0.8, seed).unwrap()
}

fn segment_accuracy(model: &SilenceModel, clips: &[LabeledClip], threshold: f64) -> f64 {
    let rows = silence_denoise::experiment::sid_evaluation(Some(model), clips, threshold, None).unwrap();
    rows.iter().find(|r| r.method == "ours").unwrap().report.accuracy
}

fn train_toy(dir: &Path) -> Trained {
    let manifest = toy_corpus(dir, CORPUS_SEED);
    let root = dir.join("data");
    let train_sid = load_clips(&root, &manifest, Split::Train, Some(SID_TRAIN_CLIPS)).unwrap();
    let test = load_clips(&root, &manifest, Split::Test, Some(TEST_CLIPS)).unwrap();
    let spec = ModelSpec::desk();
    let schedules = Schedules::preset("desk", CORPUS_SEED).unwrap();
    let init = SilenceModel::new(spec.clone(), CORPUS_SEED);
    let quiet = RunOptions::default();
    let start = Instant::now();

    let sid_data = training_set(&train_sid, &spec).unwrap();
    let sid = training::train_sid(init.clone(), &sid_data, &schedules.sid, &quiet).unwrap();
    let sid_acc = segment_accuracy(&sid.checkpoint.model, &test, schedules.sid.threshold);

    let den_data = training_set(&train_sid[..DENOISER_TRAIN_CLIPS], &spec).unwrap();
    let den = training::train_denoiser_gt(init.clone(), &den_data, &schedules.denoiser_gt, &quiet).unwrap();
    let l0 = |e: &training::EpochStats| e.loss.total;
    let (l0_first, l0_last) = (l0(&den.history[0]), l0(den.history.last().unwrap()));
    let tuned = training::finetune(&sid.checkpoint, &den.checkpoint, &den_data, &schedules.finetune, &quiet).unwrap();

    let e2e = training::train_end_to_end(init, &den_data, &schedules.end_to_end, &quiet).unwrap();
    let e2e_auc = silence_denoise::experiment::detector_auc(&e2e.checkpoint.model, &test).unwrap();
    Trained {
        train_sid,
        test,
        sid_acc,
        l0_first,
        l0_last,
        two_step: tuned.checkpoint.model,
        e2e_auc,
        took: start.elapsed(),
    }
}

fn toy_training(t: &Trained) -> Outcome {
    let reduction = 1.0 - t.l0_last / t.l0_first;
    let auc = t.e2e_auc.unwrap_or(f64::NAN);
    let pass = t.sid_acc > SID_ACCURACY && reduction >= L0_REDUCTION && auc > EMERGENT_AUC && t.took < TRAINING_BUDGET;
    outcome(
        pass,
        format!(
            "(a) test segment accuracy {:.3} on {} train clips; (b) L0 {:.1} -> {:.1} ({:.0}% reduction); (c) e2e AUC {auc:.3}; {:.0} s",
            t.sid_acc,
            t.train_sid.len(),
            t.l0_first,
            t.l0_last,
            100.0 * reduction,
            t.took.as_secs_f64()
        ),
    )
}

fn ordering(t: &Trained) -> Outcome {
    let w = default_workers();
    let mean = |s: System| evaluate_system(s, Some(&t.two_step), &t.test, 0.5, None, w).unwrap().overall.ssnr;
    let (gtsi, ours, noisy) = (mean(System::OursGtsi), mean(System::Ours), mean(System::Noisy));
    outcome(
        gtsi >= ours && ours >= noisy,
        format!("mean SSNR gtsi {gtsi:.2} dB, ours {ours:.2} dB, noisy {noisy:.2} dB"),
    )
}

fn perturbation(t: &Trained) -> Outcome {
    let w = default_workers();
    let ssnr_of = |mode: PerturbMode| -> Vec<f64> {
        perturbation_study(&t.two_step, &t.test, mode, &mode.default_amounts(), None, w)
            .unwrap()
            .iter()
            .map(|r| r.means.as_ref().map_or(f64::NAN, |m| m.ssnr))
            .collect()
    };
    let shift = ssnr_of(PerturbMode::Shift);
    let shrink = ssnr_of(PerturbMode::Shrink);
    let strictly = shift.windows(2).all(|p| p[1] < p[0]);
    let drop_shift = shift[0] - shift[shift.len() - 1];
    let drop_shrink = shrink[0] - shrink[shrink.len() - 1];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    outcome(
        strictly && drop_shift > drop_shrink,
        format!("SSNR shift [{}] (drop {drop_shift:.2}); shrink [{}] (drop {drop_shrink:.2})", fmt(&shift), fmt(&shrink)),
    )
}

fn spectral_gate_gain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut before, mut after) = (0.0, 0.0);
    let n = 10;
    for _ in 0..n {
        let clean = toy::tone_burst_clip(TWO_S, &mut rng);
        let noise = toy::noise_source("white", TWO_S, &mut rng).unwrap();
        let s = datagen::mix_at_snr(&clean, &noise, 0.0).unwrap();
        let labels = datagen::label_silence(&s.clean);
        let y = silence_denoise::baselines::spectral_gate(&s.mixture, &labels, &Default::default()).unwrap();
        before += metrics::ssnr(&s.clean, &s.mixture).unwrap() / n as f64;
        after += metrics::ssnr(&s.clean, &y).unwrap() / n as f64;
    }
    let gain = after - before;
    outcome(gain >= GATE_GAIN_DB, format!("mean SSNR {before:.2} -> {after:.2} dB (gain {gain:.2} dB, need {GATE_GAIN_DB})"))
}

/// Synthesis, a short two-phase training run and an evaluation, end to end.
fn pipeline_once(dir: &Path) -> (String, Vec<f64>, Vec<(f64, f64)>) {
    let manifest = toy_corpus(dir, 77);
    let root = dir.join("data");
    let train = load_clips(&root, &manifest, Split::Train, Some(4)).unwrap();
    let test = load_clips(&root, &manifest, Split::Test, Some(3)).unwrap();
    let spec = ModelSpec::desk();
    let data = training_set(&train, &spec).unwrap();
    let mut schedules = Schedules::preset("desk", 77).unwrap();
    schedules.sid.epochs = 2;
    schedules.denoiser_gt.epochs = 2;
    let (ckpt, history) = silence_denoise::experiment::train_phases(
        SilenceModel::new(spec, 77),
        &data,
        &[Phase::Sid, Phase::DenoiserGt],
        &schedules,
        |_| RunOptions::default(),
    )
    .unwrap();
    let report = evaluate_system(System::Ours, Some(&ckpt.model), &test, 0.5, None, default_workers()).unwrap();
    let losses = history.iter().map(|h| h.loss.total).collect();
    let scores = report.clips.iter().map(|c| (c.ssnr, c.stoi)).collect();
    (manifest.to_jsonl().unwrap(), losses, scores)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (m1, l1, s1) = pipeline_once(a.path());
    let (m2, l2, s2) = pipeline_once(b.path());
    let same_manifest = m1 == m2;
    let same_mixtures = {
        let list = |d: &Path| {
            let mut files: Vec<_> =
                std::fs::read_dir(d.join("data/mixture")).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            files.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
        };
        let first = list(a.path());
        !first.is_empty() && first == list(b.path())
    };
    let loss_gap = l1.iter().zip(&l2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let pass = same_manifest && same_mixtures && l1.len() == l2.len() && loss_gap <= DETERMINISM_TOL && s1 == s2;
    outcome(
        pass,
        format!(
            "manifests identical={same_manifest}, mixture files identical={same_mixtures}, max loss gap {loss_gap:.1e}, scores identical={}",
            s1 == s2
        ),
    )
}

fn main() {
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |i: u32| only.as_ref().is_none_or(|o| o.contains(&i));
    let pesq = PesqBackend::detect(PesqMode::Wideband);
    let toy_dir = tempfile::tempdir().unwrap();
    let mut trained: Option<Trained> = None;
    let mut failures = 0;

    let names = [
        "stft round trip",
        "mixing accuracy",
        "labeling correctness",
        "shape and range contracts",
        "gradient check",
        "detection metrics oracle",
        "metric sanity",
        "toy training smoke",
        "ordering at toy scale",
        "perturbation study",
        "spectral gating baseline",
        "determinism",
    ];
    for (i, name) in (1u32..).zip(names) {
        if !wanted(i) {
            continue;
        }
        if (8..=10).contains(&i) && trained.is_none() {
            trained = catch_unwind(AssertUnwindSafe(|| train_toy(toy_dir.path()))).ok();
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match i {
            1 => stft_round_trip(),
            2 => mixing_accuracy(),
            3 => labeling(),
            4 => shape_contracts(),
            5 => gradient_check(),
            6 => sid_oracle(),
            7 => metric_sanity(pesq.as_ref()),
            8 => toy_training(trained.as_ref().expect("toy training failed")),
            9 => ordering(trained.as_ref().expect("toy training failed")),
            10 => perturbation(trained.as_ref().expect("toy training failed")),
            11 => spectral_gate_gain(),
            _ => determinism(),
        }));
        let o = result.unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failures += !o.pass as usize;
        println!(
            "criterion {i:>2} {}: {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures == 0 {
        println!("all criteria passed");
    } else {
        println!("{failures} criteria failed");
        // Failures are reported, not fatal, unless ACCEPTANCE_STRICT is set.
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
