//! Experiment orchestration shared by the command-line tool and the tests:
//! dataset synthesis, denoising systems, evaluation, interval perturbation,
//! ablation variants and detection scoring.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::baselines::{external_vad_adapter, spectral_gate, threshold_sid, SpectralGateConfig, SUBTRACTION_FLOOR};
use crate::datagen::{build_manifest, expand_labels_to_samples, load_record, materialize, DatasetManifest, MixtureSample, Split};
use crate::error::{ensure_arg, Error, Result};
use crate::metrics::{evaluate_clip, roc_auc, sid_metrics, MetricMeans, MetricsReport, PesqBackend, SidReport};
use crate::models::{DenoiseOptions, MaskSource, ModelCheckpoint, ModelSpec, Removal, SilenceModel};
use crate::segments::{segment_bounds, SampleMask, SegmentLabels};
use crate::training::{finetune, train, EpochStats, Phase, RunOptions, TrainingConfig, TrainingSet};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Builds a manifest from the two source folders and writes every mixture,
/// its components and labels under `out_dir`, plus `manifest.jsonl`.
pub fn synth_dataset(clean_dir: &Path, noise_dir: &Path, out_dir: &Path, split_ratio: f64, seed: u64) -> Result<DatasetManifest> {
    for (what, dir) in [("clean", clean_dir), ("noise", noise_dir)] {
        if !dir.is_dir() {
            return Err(Error::Config(format!("{what} directory {} does not exist", dir.display())));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = build_manifest(out_dir, clean_dir, noise_dir, split_ratio, seed)?;
    let manifest = materialize(out_dir, out_dir, &manifest)?;
    manifest.write_jsonl(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A mixture with its ground-truth silent intervals.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub id: String,
    pub sample: MixtureSample,
    pub labels: SegmentLabels,
}

/// Loads the clips of one split, in manifest order, up to `limit`.
pub fn load_clips(root: &Path, manifest: &DatasetManifest, split: Split, limit: Option<usize>) -> Result<Vec<LabeledClip>> {
    manifest
        .split(split)
        .take(limit.unwrap_or(usize::MAX))
        .map(|r| load_record(root, r).map(|(sample, labels)| LabeledClip { id: r.id.clone(), sample, labels }))
        .collect()
}

pub fn training_set(clips: &[LabeledClip], spec: &ModelSpec) -> Result<TrainingSet> {
    let items = clips.iter().map(|c| (c.id.clone(), c.sample.clone(), c.labels.clone())).collect();
    TrainingSet::from_samples(items, spec.stft)
}

/// Runs `f` over `items` on at most `workers` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// A way of producing a denoised clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// The unprocessed mixture.
    Noisy,
    /// Full pipeline with thresholded detections.
    Ours,
    /// Full pipeline with soft detections (end-to-end trained models).
    OursSoft,
    /// Estimator and remover fed the ground-truth intervals.
    OursGtsi,
    /// Trained estimator, spectral subtraction in place of the remover.
    OursNoNr,
    /// Estimator fed the whole noisy input as its profile.
    OursNoSid,
    /// Spectral gating with ground-truth intervals.
    GateGt,
    /// Spectral gating with energy-threshold intervals.
    GateThres,
}

impl System {
    pub const ALL: [System; 8] = [
        System::Noisy,
        System::Ours,
        System::OursSoft,
        System::OursGtsi,
        System::OursNoNr,
        System::OursNoSid,
        System::GateGt,
        System::GateThres,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            System::Noisy => "noisy",
            System::Ours => "ours",
            System::OursSoft => "ours_soft",
            System::OursGtsi => "ours_gtsi",
            System::OursNoNr => "ours_no_nr",
            System::OursNoSid => "ours_no_sid",
            System::GateGt => "gate_gt",
            System::GateThres => "gate_thres",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn needs_model(&self) -> bool {
        !matches!(self, System::Noisy | System::GateGt | System::GateThres)
    }

    fn denoise_options(&self, threshold: f64, clip: &LabeledClip) -> Result<DenoiseOptions> {
        let x = &clip.sample.mixture;
        let mask_source = match self {
            System::Ours | System::OursNoNr => MaskSource::Detector,
            System::OursSoft => MaskSource::DetectorSoft,
            System::OursGtsi => MaskSource::Provided(expand_labels_to_samples(&clip.labels, x.len(), x.sample_rate())?),
            System::OursNoSid => MaskSource::AllOnes,
            _ => unreachable!("not a model system"),
        };
        let removal = match self {
            System::OursNoNr => Removal::Subtraction { floor: SUBTRACTION_FLOOR },
            _ => Removal::Network,
        };
        Ok(DenoiseOptions { threshold, mask_source, removal })
    }
}

pub fn run_system(system: System, model: Option<&SilenceModel>, clip: &LabeledClip, threshold: f64) -> Result<Waveform> {
    let x = &clip.sample.mixture;
    match system {
        System::Noisy => Ok(x.clone()),
        System::GateGt => spectral_gate(x, &clip.labels, &SpectralGateConfig::default()),
        System::GateThres => spectral_gate(x, &threshold_sid(x), &SpectralGateConfig::default()),
        _ => {
            let model = model.ok_or_else(|| Error::Config(format!("system {} needs a checkpoint", system.name())))?;
            Ok(model.denoise(x, &system.denoise_options(threshold, clip)?)?.denoised)
        }
    }
}

/// Scores `outputs[i]` against the clean signal of `clips[i]`.
pub fn evaluate_outputs(
    clips: &[LabeledClip],
    outputs: &[Waveform],
    pesq: Option<&PesqBackend>,
    workers: usize,
) -> Result<MetricsReport> {
    ensure_arg!(clips.len() == outputs.len(), "{} clips but {} outputs", clips.len(), outputs.len());
    let pairs: Vec<(&LabeledClip, &Waveform)> = clips.iter().zip(outputs).collect();
    let rows = parallel_map(&pairs, workers, |(c, y)| evaluate_clip(&c.id, c.sample.snr_db, &c.sample.clean, y, pesq))?;
    Ok(MetricsReport::new(rows))
}

/// Denoises every clip with `system` and scores the results.
pub fn evaluate_system(
    system: System,
    model: Option<&SilenceModel>,
    clips: &[LabeledClip],
    threshold: f64,
    pesq: Option<&PesqBackend>,
    workers: usize,
) -> Result<MetricsReport> {
    let outputs = parallel_map(clips, workers, |c| run_system(system, model, c, threshold))?;
    evaluate_outputs(clips, &outputs, pesq, workers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Displace every interval later in time by an amount in seconds,
    /// wrapping around the clip end so interval lengths are kept.
    Shift,
    /// Contract every interval toward its centre by a fraction of its length.
    Shrink,
}

impl PerturbMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shift" => Some(Self::Shift),
            "shrink" => Some(Self::Shrink),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Shift => "shift",
            Self::Shrink => "shrink",
        }
    }

    /// Amounts of the standard study: seconds for shift, fractions for shrink.
    pub fn default_amounts(&self) -> Vec<f64> {
        match self {
            Self::Shift => vec![0.0, 1.0 / 30.0, 0.1, 0.2, 0.5],
            Self::Shrink => vec![0.0, 0.2, 0.4, 0.6, 0.8],
        }
    }
}

/// Contiguous silent runs as sample ranges.
fn silent_runs(labels: &SegmentLabels, n: usize) -> Vec<(usize, usize)> {
    let bounds = segment_bounds(n, labels.sample_rate);
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (b, &l) in bounds.iter().zip(&labels.labels) {
        if l == 1 {
            match runs.last_mut() {
                Some(last) if last.1 == b.start => last.1 = b.end,
                _ => runs.push((b.start, b.end)),
            }
        }
    }
    runs
}

/// Sample mask of the perturbed silent intervals.
pub fn perturb_mask(labels: &SegmentLabels, n: usize, mode: PerturbMode, amount: f64) -> Result<SampleMask> {
    ensure_arg!(amount >= 0.0 && amount.is_finite(), "perturbation amount must be non-negative");
    let mut mask = vec![0.0; n];
    for (a, b) in silent_runs(labels, n) {
        let (lo, hi) = match mode {
            PerturbMode::Shift => {
                let d = (amount * labels.sample_rate as f64).round() as usize % n.max(1);
                for i in a..b {
                    mask[(i + d) % n] = 1.0;
                }
                continue;
            }
            PerturbMode::Shrink => {
                ensure_arg!(amount <= 1.0, "shrink fraction must be at most 1");
                let len = b - a;
                let keep = ((len as f64) * (1.0 - amount)).round() as usize;
                let lo = a + (len - keep) / 2;
                (lo, lo + keep)
            }
        };
        mask[lo..hi].iter_mut().for_each(|v| *v = 1.0);
    }
    Ok(SampleMask(mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbRow {
    pub mode: PerturbMode,
    pub amount: f64,
    pub means: Option<MetricMeans>,
    /// Why the row has no scores (e.g. no silent samples left).
    pub error: Option<String>,
}

/// Denoises with ground-truth intervals perturbed by each amount and scores
/// the results.
pub fn perturbation_study(
    model: &SilenceModel,
    clips: &[LabeledClip],
    mode: PerturbMode,
    amounts: &[f64],
    pesq: Option<&PesqBackend>,
    workers: usize,
) -> Result<Vec<PerturbRow>> {
    let mut rows = Vec::new();
    for &amount in amounts {
        let masks = clips
            .iter()
            .map(|c| perturb_mask(&c.labels, c.sample.mixture.len(), mode, amount))
            .collect::<Result<Vec<_>>>()?;
        if let Some(i) = masks.iter().position(|m| m.values().iter().all(|&v| v == 0.0)) {
            rows.push(PerturbRow {
                mode,
                amount,
                means: None,
                error: Some(format!("clip {} has no silent samples left", clips[i].id)),
            });
            continue;
        }
        let jobs: Vec<(&LabeledClip, SampleMask)> = clips.iter().zip(masks).collect();
        let outputs = parallel_map(&jobs, workers, |(c, m)| {
            let opts = DenoiseOptions { mask_source: MaskSource::Provided(m.clone()), ..DenoiseOptions::default() };
            Ok(model.denoise(&c.sample.mixture, &opts)?.denoised)
        })?;
        let report = evaluate_outputs(clips, &outputs, pesq, workers)?;
        rows.push(PerturbRow { mode, amount, means: Some(report.overall), error: None });
    }
    Ok(rows)
}

/// Training schedules for every phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub sid: TrainingConfig,
    pub denoiser_gt: TrainingConfig,
    pub finetune: TrainingConfig,
    pub end_to_end: TrainingConfig,
    pub joint: TrainingConfig,
}

impl Schedules {
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let mk = |p| TrainingConfig::preset(name, p).map(|c| TrainingConfig { seed, ..c });
        Ok(Self {
            sid: mk(Phase::Sid)?,
            denoiser_gt: mk(Phase::DenoiserGt)?,
            finetune: mk(Phase::Finetune)?,
            end_to_end: mk(Phase::EndToEnd)?,
            joint: mk(Phase::Joint)?,
        })
    }

    pub fn get(&self, phase: Phase) -> &TrainingConfig {
        match phase {
            Phase::Sid => &self.sid,
            Phase::DenoiserGt => &self.denoiser_gt,
            Phase::Finetune => &self.finetune,
            Phase::EndToEnd => &self.end_to_end,
            Phase::Joint => &self.joint,
        }
    }
}

/// Checks that a list of phases forms one of the supported schedules.
pub fn validate_phases(phases: &[Phase]) -> Result<()> {
    use Phase::*;
    let ok = matches!(
        phases,
        [Sid] | [DenoiserGt] | [Sid, DenoiserGt] | [Sid, DenoiserGt, Finetune] | [EndToEnd] | [Joint]
    );
    if ok {
        Ok(())
    } else {
        let names: Vec<&str> = phases.iter().map(|p| p.name()).collect();
        Err(Error::Config(format!(
            "unsupported phase sequence [{}]; use sid, denoiser_gt, finetune in that order, or end_to_end, or joint",
            names.join(", ")
        )))
    }
}

/// Runs `phases` in order starting from `model`. The detector and denoiser
/// phases start from the same initial weights; fine-tuning combines them.
/// `run_for` gives per-phase logging/checkpoint options.
pub fn train_phases(
    model: SilenceModel,
    data: &TrainingSet,
    phases: &[Phase],
    schedules: &Schedules,
    run_for: impl Fn(Phase) -> RunOptions,
) -> Result<(ModelCheckpoint, Vec<EpochStats>)> {
    validate_phases(phases)?;
    let mut history = Vec::new();
    let mut sid: Option<ModelCheckpoint> = None;
    let mut denoiser: Option<ModelCheckpoint> = None;
    let mut last: Option<ModelCheckpoint> = None;
    for &phase in phases {
        let cfg = schedules.get(phase);
        let out = match phase {
            Phase::Finetune => {
                let (s, d) = (sid.as_ref().expect("validated"), denoiser.as_ref().expect("validated"));
                finetune(s, d, data, cfg, &run_for(phase))?
            }
            _ => train(model.clone(), data, cfg, &run_for(phase))?,
        };
        history.extend(out.history.iter().cloned());
        match phase {
            Phase::Sid => sid = Some(out.checkpoint.clone()),
            Phase::DenoiserGt => denoiser = Some(out.checkpoint.clone()),
            _ => {}
        }
        last = Some(out.checkpoint);
    }
    let mut ckpt = last.expect("at least one phase");
    if let (Some(s), Some(d), Some(&Phase::DenoiserGt)) = (&sid, &denoiser, phases.last()) {
        ckpt = ModelCheckpoint { model: crate::training::combine(s, d)?, ..ckpt };
    }
    Ok((ckpt, history))
}

/// Rows of the component/loss ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoSidComp,
    NoNrComp,
    NoSidLoss,
    NoNeLoss,
    JointLoss,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::NoSidComp, Variant::NoNrComp, Variant::NoSidLoss, Variant::NoNeLoss, Variant::JointLoss, Variant::Full];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::NoSidComp => "no_sid_comp",
            Variant::NoNrComp => "no_nr_comp",
            Variant::NoSidLoss => "no_sid_loss",
            Variant::NoNeLoss => "no_ne_loss",
            Variant::JointLoss => "joint_loss",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Variant::NoSidComp => "Ours w/o SID comp",
            Variant::NoNrComp => "Ours w/o NR comp",
            Variant::NoSidLoss => "Ours w/o SID loss",
            Variant::NoNeLoss => "Ours w/o NE loss",
            Variant::JointLoss => "Ours Joint loss",
            Variant::Full => "Ours",
        }
    }

    /// System used to denoise the test clips with this variant's model.
    pub fn system(&self) -> System {
        match self {
            Variant::NoSidComp => System::OursNoSid,
            Variant::NoNrComp => System::OursNoNr,
            Variant::NoSidLoss | Variant::JointLoss => System::OursSoft,
            Variant::NoNeLoss | Variant::Full => System::Ours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub means: MetricMeans,
}

/// Trains whatever the requested variants need (sharing models where they
/// coincide) and evaluates each on `test`.
pub fn run_ablation(
    spec: &ModelSpec,
    seed: u64,
    train_data: &TrainingSet,
    test: &[LabeledClip],
    schedules: &Schedules,
    variants: &[Variant],
    pesq: Option<&PesqBackend>,
    workers: usize,
) -> Result<Vec<AblationRow>> {
    let init = SilenceModel::new(spec.clone(), seed);
    let quiet = |_| RunOptions::default();
    let two_step = |s: &Schedules| train_phases(init.clone(), train_data, &[Phase::Sid, Phase::DenoiserGt, Phase::Finetune], s, quiet);
    let mut full: Option<SilenceModel> = None;
    let mut rows = Vec::new();
    for &v in variants {
        let model = match v {
            Variant::Full | Variant::NoNrComp => {
                if full.is_none() {
                    full = Some(two_step(schedules)?.0.model);
                }
                full.clone().unwrap()
            }
            Variant::NoNeLoss => {
                let mut s = schedules.clone();
                s.denoiser_gt.noise_weight = 0.0;
                s.finetune.noise_weight = 0.0;
                two_step(&s)?.0.model
            }
            Variant::NoSidComp => {
                let mut cfg = schedules.denoiser_gt.clone();
                cfg.no_silence_mask = true;
                train(init.clone(), train_data, &cfg, &RunOptions::default())?.checkpoint.model
            }
            Variant::NoSidLoss => train_phases(init.clone(), train_data, &[Phase::EndToEnd], schedules, quiet)?.0.model,
            Variant::JointLoss => train_phases(init.clone(), train_data, &[Phase::Joint], schedules, quiet)?.0.model,
        };
        let report = evaluate_system(v.system(), Some(&model), test, schedules.finetune.threshold, pesq, workers)?;
        rows.push(AblationRow { variant: v, label: v.label().to_string(), means: report.overall });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidRow {
    pub method: String,
    pub report: SidReport,
}

fn pooled(name: &str, pred: Vec<u8>, truth: Vec<u8>, rate: u32) -> Result<SidRow> {
    let report = sid_metrics(&SegmentLabels::new(pred, rate)?, &SegmentLabels::new(truth, rate)?)?;
    Ok(SidRow { method: name.to_string(), report })
}

/// Segment-level detection scores pooled over all clips, for the trained
/// detector (when given), the energy threshold baseline, and an external VAD
/// executable (when given).
pub fn sid_evaluation(
    model: Option<&SilenceModel>,
    clips: &[LabeledClip],
    threshold: f64,
    vad: Option<(&Path, Duration)>,
) -> Result<Vec<SidRow>> {
    ensure_arg!(!clips.is_empty(), "no clips to score");
    let rate = clips[0].labels.sample_rate;
    let truth: Vec<u8> = clips.iter().flat_map(|c| c.labels.labels.iter().copied()).collect();
    let mut rows = Vec::new();
    if let Some(m) = model {
        let mut pred = Vec::with_capacity(truth.len());
        for c in clips {
            let x = &c.sample.mixture;
            let s_x = crate::spectro::StftEngine::new(m.spec.stft)?.forward(x.samples())?;
            pred.extend(m.sid_forward(&s_x, x.len())?.iter().map(|&p| (p >= threshold) as u8));
        }
        rows.push(pooled("ours", pred, truth.clone(), rate)?);
    }
    let pred: Vec<u8> = clips.iter().flat_map(|c| threshold_sid(&c.sample.mixture).labels).collect();
    rows.push(pooled("baseline_thres", pred, truth.clone(), rate)?);
    if let Some((exe, timeout)) = vad {
        let mut pred = Vec::new();
        for c in clips {
            pred.extend(external_vad_adapter(&c.sample.mixture, exe, timeout)?.labels);
        }
        rows.push(pooled("external_vad", pred, truth, rate)?);
    }
    Ok(rows)
}

/// How well raw detector confidences separate silent from speech segments
/// (silent = positive class).
pub fn detector_auc(model: &SilenceModel, clips: &[LabeledClip]) -> Result<Option<f64>> {
    let engine = crate::spectro::StftEngine::new(model.spec.stft)?;
    let (mut scores, mut positive) = (Vec::new(), Vec::new());
    for c in clips {
        let x = &c.sample.mixture;
        scores.extend(model.sid_forward(&engine.forward(x.samples())?, x.len())?);
        positive.extend(c.labels.labels.iter().map(|&l| l == 1));
    }
    Ok(roc_auc(&scores, &positive))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u8]) -> SegmentLabels {
        SegmentLabels::new(v.to_vec(), 16_000).unwrap()
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let l = labels(&[0, 1, 1, 0, 0, 1, 1, 1, 0, 0]);
        let n = crate::segments::segment_boundary(10, 16_000);
        let base = expand_labels_to_samples(&l, n, 16_000).unwrap();
        for mode in [PerturbMode::Shift, PerturbMode::Shrink] {
            assert_eq!(perturb_mask(&l, n, mode, 0.0).unwrap(), base);
        }
    }

    #[test]
    fn shift_moves_runs_later() {
        let l = labels(&[1, 1, 0, 0, 0, 0]);
        let n = 3200;
        let m = perturb_mask(&l, n, PerturbMode::Shift, 1.0 / 30.0).unwrap();
        let on: Vec<usize> = (0..n).filter(|&i| m.values()[i] == 1.0).collect();
        assert_eq!((on[0], *on.last().unwrap() + 1), (533, 533 + 1067));
    }

    #[test]
    fn shift_wraps_past_the_end() {
        let l = labels(&[0, 0, 0, 0, 1, 1]);
        let n = 3200;
        let b = segment_bounds(n, 16_000);
        let len = n - b[4].start;
        let m = perturb_mask(&l, n, PerturbMode::Shift, 0.1).unwrap();
        assert_eq!(m.values().iter().filter(|&&v| v == 1.0).count(), len);
        let start = (b[4].start + 1600) % n;
        assert!(m.values()[start] == 1.0 && m.values()[start - 1] == 0.0);
        assert!(m.values()[n - 1] == 0.0);
    }

    #[test]
    fn shrink_contracts_toward_centre() {
        let l = labels(&[0, 1, 1, 1, 0, 0]);
        let n = 3200;
        let b = segment_bounds(n, 16_000);
        let (a, e) = (b[1].start, b[3].end);
        let m = perturb_mask(&l, n, PerturbMode::Shrink, 0.5).unwrap();
        let count = m.values().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(count, ((e - a) as f64 * 0.5).round() as usize);
        let first = m.values().iter().position(|&v| v == 1.0).unwrap();
        assert!(first > a && first < (a + e) / 2);
        let full = perturb_mask(&l, n, PerturbMode::Shrink, 1.0).unwrap();
        assert!(full.values().iter().all(|&v| v == 0.0));
        assert!(perturb_mask(&l, n, PerturbMode::Shrink, 1.5).is_err());
    }

    #[test]
    fn phase_sequences() {
        use Phase::*;
        for ok in [&[Sid][..], &[Sid, DenoiserGt, Finetune], &[EndToEnd], &[Joint], &[DenoiserGt]] {
            assert!(validate_phases(ok).is_ok(), "{ok:?}");
        }
        for bad in [&[Finetune][..], &[Finetune, Sid], &[EndToEnd, Joint], &[], &[DenoiserGt, Sid]] {
            assert!(validate_phases(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn parallel_map_keeps_order_and_propagates_errors() {
        let v: Vec<usize> = (0..37).collect();
        assert_eq!(parallel_map(&v, 4, |x| Ok(x * 2)).unwrap(), (0..37).map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&v, 3, |&x| if x == 20 { Err(Error::Metric("x".into())) } else { Ok(x) }).is_err());
    }

    #[test]
    fn system_names_round_trip() {
        for s in System::ALL {
            assert_eq!(System::parse(s.name()), Some(s));
        }
        assert_eq!(Variant::ALL.len(), 6);
    }
}
