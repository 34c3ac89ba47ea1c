//! Losses, the two-step supervised schedule (detector, then denoiser with
//! ground-truth intervals, then fine-tuning), end-to-end and joint training.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{expand_labels_to_samples, load_record, DatasetManifest, MixtureSample, Split};
use crate::error::{ensure_arg, Error, Result};
use crate::models::{
    confidences_to_mask, noise_profile, MaskMode, ModelCheckpoint, SilenceModel, NE_PREFIX, NR_PREFIX, SID_PREFIX,
};
use crate::nn::{Adam, AdamConfig, Gradients, Graph, ParamId, Tensor, Var, BCE_EPS};
use crate::segments::SegmentLabels;
use crate::spectro::{Spectrogram, StftConfig, StftEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Detector alone under binary cross entropy.
    Sid,
    /// Noise estimator and remover with ground-truth intervals; detector untouched.
    DenoiserGt,
    /// Estimator and remover with the frozen detector's thresholded intervals.
    Finetune,
    /// All three components under the denoising loss only.
    EndToEnd,
    /// All three components under denoising loss plus detection loss.
    Joint,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Sid => "sid",
            Phase::DenoiserGt => "denoiser_gt",
            Phase::Finetune => "finetune",
            Phase::EndToEnd => "end_to_end",
            Phase::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Phase::Sid, Phase::DenoiserGt, Phase::Finetune, Phase::EndToEnd, Phase::Joint]
            .into_iter()
            .find(|p| p.name() == s)
    }

    fn trains_detector(&self) -> bool {
        matches!(self, Phase::Sid | Phase::EndToEnd | Phase::Joint)
    }

    fn trains_denoiser(&self) -> bool {
        !matches!(self, Phase::Sid)
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub phase: Phase,
    /// Weight of the clean-signal term of the denoising loss.
    pub beta: f64,
    /// Weight of the noise-estimate term (0 disables it).
    #[serde(default = "one")]
    pub noise_weight: f64,
    /// Weight of the detection loss in joint training.
    #[serde(default = "one")]
    pub bce_weight: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Confidence threshold that turns detections into binary masks.
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default = "beta1")]
    pub adam_beta1: f64,
    #[serde(default = "beta2")]
    pub adam_beta2: f64,
    #[serde(default = "adam_eps")]
    pub adam_eps: f64,
    /// Feed the whole noisy input to the noise estimator instead of the
    /// interval-masked profile (the variant without a detection component).
    #[serde(default)]
    pub no_silence_mask: bool,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl TrainingConfig {
    /// Published schedule: detector 100 epochs at batch 15, everything else
    /// 50 epochs at batch 20, Adam at 0.001.
    pub fn paper(phase: Phase) -> Self {
        let (epochs, batch_size) = match phase {
            Phase::Sid => (100, 15),
            _ => (50, 20),
        };
        Self {
            phase,
            beta: 1.0,
            noise_weight: 1.0,
            bce_weight: 1.0,
            lr: 1e-3,
            epochs,
            batch_size,
            seed: 0,
            threshold: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            no_silence_mask: false,
        }
    }

    /// Laptop-scale schedule for the desk model: fewer epochs, batch 4, and
    /// a higher learning rate for the denoising phases.
    pub fn desk(phase: Phase) -> Self {
        let (epochs, lr) = match phase {
            Phase::Sid => (30, 1e-3),
            Phase::DenoiserGt => (50, 3e-3),
            Phase::Finetune => (10, 3e-3),
            Phase::EndToEnd | Phase::Joint => (30, 3e-3),
        };
        Self { epochs, lr, batch_size: 4, ..Self::paper(phase) }
    }

    pub fn preset(name: &str, phase: Phase) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(phase)),
            "desk" => Ok(Self::desk(phase)),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.noise_weight < 0.0 || self.bce_weight < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    /// Parses a flat `key = value` TOML file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}

/// Terms of the training objective, averaged over a batch or an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub noise_term: f64,
    pub signal_term: f64,
    pub bce_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown, w: f64) {
        self.noise_term += w * o.noise_term;
        self.signal_term += w * o.signal_term;
        self.bce_term += w * o.bce_term;
        self.total += w * o.total;
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Denoising loss from network outputs: `||N - s_n|| + beta ||s_x ⊙ c - s_x*||`
/// over flattened two-channel spectrograms.
pub fn l0_from_outputs(
    noise_est: &Spectrogram,
    masked: &Spectrogram,
    noise_target: &Spectrogram,
    clean_target: &Spectrogram,
    beta: f64,
) -> Result<LossBreakdown> {
    ensure_arg!(
        noise_est.same_shape(noise_target) && masked.same_shape(clean_target) && noise_est.same_shape(masked),
        "loss inputs differ in shape"
    );
    let noise_term = l2(noise_est.planes(), noise_target.planes());
    let signal_term = l2(masked.planes(), clean_target.planes());
    Ok(LossBreakdown { noise_term, signal_term, bce_term: 0.0, total: noise_term + beta * signal_term })
}

/// Denoising loss of `model` on one clip, with the noise profile spectrogram given.
pub fn loss_l0(
    model: &SilenceModel,
    s_x: &Spectrogram,
    s_profile: &Spectrogram,
    noise_target: &Spectrogram,
    clean_target: &Spectrogram,
    beta: f64,
) -> Result<LossBreakdown> {
    let noise_est = model.estimate_noise(s_x, s_profile)?;
    let mask = model.removal_mask(s_x, &noise_est)?;
    let masked = crate::models::apply_mask(s_x, &mask, model.spec.mask_mode)?;
    l0_from_outputs(&noise_est, &masked, noise_target, clean_target, beta)
}

/// Mean binary cross entropy of segment predictions against labels, with
/// predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn loss_l1(pred: &[f64], truth: &SegmentLabels) -> Result<f64> {
    ensure_arg!(pred.len() == truth.len(), "{} predictions for {} labels", pred.len(), truth.len());
    ensure_arg!(!pred.is_empty(), "no segments");
    let total: f64 = pred
        .iter()
        .zip(&truth.labels)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// One clip with the spectrograms training needs.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub sample: MixtureSample,
    pub labels: SegmentLabels,
    pub spec_x: Spectrogram,
    pub spec_clean: Spectrogram,
    pub spec_noise: Spectrogram,
    /// Spectrogram of the mixture masked by the ground-truth intervals.
    pub spec_profile_gt: Spectrogram,
}

impl Example {
    pub fn new(id: String, sample: MixtureSample, labels: SegmentLabels, engine: &StftEngine) -> Result<Self> {
        let n = sample.mixture.len();
        let mask = expand_labels_to_samples(&labels, n, sample.mixture.sample_rate())?;
        let profile = noise_profile(&sample.mixture, &mask)?;
        Ok(Self {
            id,
            spec_x: engine.forward(sample.mixture.samples())?,
            spec_clean: engine.forward(sample.clean.samples())?,
            spec_noise: engine.forward(sample.noise.samples())?,
            spec_profile_gt: engine.forward(profile.samples())?,
            sample,
            labels,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub examples: Vec<Example>,
    pub stft: StftConfig,
}

impl TrainingSet {
    pub fn from_samples(items: Vec<(String, MixtureSample, SegmentLabels)>, stft: StftConfig) -> Result<Self> {
        let engine = StftEngine::new(stft)?;
        let examples = items
            .into_iter()
            .map(|(id, s, l)| Example::new(id, s, l, &engine))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { examples, stft })
    }

    pub fn from_manifest(root: &Path, manifest: &DatasetManifest, split: Split, stft: StftConfig) -> Result<Self> {
        let items = manifest
            .split(split)
            .map(|r| load_record(root, r).map(|(s, l)| (r.id.clone(), s, l)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(items, stft)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub phase: Phase,
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

/// Side effects of a training run: JSON-lines log, per-epoch atomic
/// checkpoint, resume, and an optional cap on epochs run in this call.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub resume: bool,
    pub max_epochs_this_run: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochStats>,
    /// True when every configured epoch has run.
    pub complete: bool,
}

fn stack(examples: &[&Example], pick: impl Fn(&Example) -> &Spectrogram) -> Tensor {
    let first = pick(examples[0]);
    let mut data = Vec::with_capacity(examples.len() * first.planes().len());
    for e in examples {
        data.extend_from_slice(pick(e).planes());
    }
    Tensor::new(vec![examples.len(), 2, first.n_frames(), first.n_freq()], data)
}

/// Builds the objective for one batch; returns the total-loss node and breakdown.
fn batch_objective(
    g: &mut Graph,
    model: &SilenceModel,
    cfg: &TrainingConfig,
    batch: &[&Example],
    profiles: Option<&[Spectrogram]>,
    engine: &StftEngine,
) -> (Var, LossBreakdown) {
    let n = batch[0].sample.mixture.len();
    let rate = model.spec.stft.sample_rate;
    let mut breakdown = LossBreakdown::default();
    let s_x = g.input(stack(batch, |e| &e.spec_x));

    let mut bce: Option<Var> = None;
    let mut conf: Option<Var> = None;
    if cfg.phase.trains_detector() {
        let c = model.sid.forward(g, s_x, n, &model.spec.stft, rate);
        if matches!(cfg.phase, Phase::Sid | Phase::Joint) {
            let target: Vec<f64> = batch.iter().flat_map(|e| e.labels.labels.iter().map(|&l| l as f64)).collect();
            let b = g.bce_mean(c, &target);
            breakdown.bce_term = g.value(b).item();
            bce = Some(b);
        }
        conf = Some(c);
    }
    if cfg.phase == Phase::Sid {
        breakdown.total = breakdown.bce_term;
        return (bce.unwrap(), breakdown);
    }

    let profile = match cfg.phase {
        Phase::DenoiserGt | Phase::Finetune if cfg.no_silence_mask => s_x,
        Phase::DenoiserGt => g.input(stack(batch, |e| &e.spec_profile_gt)),
        Phase::Finetune => {
            let p = profiles.expect("finetune needs detector profiles");
            let refs: Vec<&Spectrogram> = p.iter().collect();
            let mut data = Vec::new();
            for s in &refs {
                data.extend_from_slice(s.planes());
            }
            g.input(Tensor::new(vec![batch.len(), 2, refs[0].n_frames(), refs[0].n_freq()], data))
        }
        _ => {
            let mut signal = Vec::with_capacity(batch.len() * n);
            for e in batch {
                signal.extend_from_slice(e.sample.mixture.samples());
            }
            g.masked_stft(Tensor::new(vec![batch.len(), n], signal), conf.unwrap(), engine, rate)
        }
    };
    let noise_est = model.ne.forward(g, s_x, profile);
    let mask = model.nr.forward(g, s_x, noise_est);
    let masked = match model.spec.mask_mode {
        MaskMode::Complex => g.complex_mul(s_x, mask),
        MaskMode::PerChannel => g.mul(s_x, mask),
    };
    let noise_target = g.input(stack(batch, |e| &e.spec_noise));
    let clean_target = g.input(stack(batch, |e| &e.spec_clean));
    let noise_term = g.l2_dist_mean(noise_est, noise_target);
    let signal_term = g.l2_dist_mean(masked, clean_target);
    breakdown.noise_term = g.value(noise_term).item();
    breakdown.signal_term = g.value(signal_term).item();
    let a = g.scale(noise_term, cfg.noise_weight);
    let b = g.scale(signal_term, cfg.beta);
    let mut total = g.add(a, b);
    if let (Phase::Joint, Some(bv)) = (cfg.phase, bce) {
        let w = g.scale(bv, cfg.bce_weight);
        total = g.add(total, w);
    }
    breakdown.total = g.value(total).item();
    (total, breakdown)
}

/// Prefixes of the parameters a phase may update.
fn trainable_prefixes(phase: Phase) -> Vec<&'static str> {
    let mut p = Vec::new();
    if phase.trains_detector() {
        p.push(SID_PREFIX);
    }
    if phase.trains_denoiser() {
        p.extend([NE_PREFIX, NR_PREFIX]);
    }
    p
}

fn freeze_others(g: &mut Graph, phase: Phase) {
    let keep = trainable_prefixes(phase);
    for prefix in [SID_PREFIX, NE_PREFIX, NR_PREFIX] {
        if !keep.contains(&prefix) {
            g.freeze_prefix(prefix);
        }
    }
}

/// Noise-profile spectrograms from the detector's thresholded intervals.
pub fn detector_profiles(model: &SilenceModel, data: &TrainingSet, threshold: f64) -> Result<Vec<Spectrogram>> {
    let engine = StftEngine::new(model.spec.stft)?;
    data.examples
        .iter()
        .map(|e| {
            let x = &e.sample.mixture;
            let conf = model.sid_forward(&e.spec_x, x.len())?;
            let mask = confidences_to_mask(&conf, Some(threshold), x.len(), x.sample_rate())?;
            engine.forward(noise_profile(x, &mask)?.samples())
        })
        .collect()
}

/// Gradients and loss of one batch, without updating anything.
pub fn batch_gradients(
    model: &SilenceModel,
    cfg: &TrainingConfig,
    batch: &[&Example],
    profiles: Option<&[Spectrogram]>,
) -> Result<(Gradients, LossBreakdown)> {
    let engine = StftEngine::new(model.spec.stft)?;
    let mut g = Graph::new(&model.store, true);
    freeze_others(&mut g, cfg.phase);
    let (loss, breakdown) = batch_objective(&mut g, model, cfg, batch, profiles, &engine);
    Ok((g.backward(loss), breakdown))
}

fn adam_state_to_checkpoint(ckpt: &mut ModelCheckpoint, opt: &Adam, epochs_done: usize, history: &[EpochStats], cfg: &TrainingConfig) {
    let (step, moments) = opt.export();
    let store = &ckpt.model.store;
    let mut arrays = Vec::new();
    for (id, m, v) in moments {
        let name = store.name(id).to_string();
        arrays.push((format!("adam.m/{name}"), m));
        arrays.push((format!("adam.v/{name}"), v));
    }
    ckpt.extra = serde_json::json!({
        "epochs_done": epochs_done,
        "adam_step": step,
        "config": cfg,
        "history": history,
    });
    ckpt.extra_arrays = arrays;
}

fn adam_state_from_checkpoint(ckpt: &ModelCheckpoint, cfg: &TrainingConfig) -> Result<(Adam, usize, Vec<EpochStats>)> {
    let bad = |m: &str| Error::Checkpoint(format!("cannot resume: {m}"));
    let extra = &ckpt.extra;
    let saved: TrainingConfig =
        serde_json::from_value(extra["config"].clone()).map_err(|_| bad("no training config stored"))?;
    if saved != *cfg {
        return Err(bad("stored training config differs from the requested one"));
    }
    let epochs_done = extra["epochs_done"].as_u64().ok_or_else(|| bad("missing epoch count"))? as usize;
    let step = extra["adam_step"].as_u64().ok_or_else(|| bad("missing optimizer step"))?;
    let history: Vec<EpochStats> = serde_json::from_value(extra["history"].clone())?;
    let store = &ckpt.model.store;
    let mut moments: Vec<(ParamId, Tensor, Tensor)> = Vec::new();
    for (name, m) in &ckpt.extra_arrays {
        if let Some(p) = name.strip_prefix("adam.m/") {
            let v = ckpt
                .extra_arrays
                .iter()
                .find(|(n, _)| n == &format!("adam.v/{p}"))
                .ok_or_else(|| bad("unpaired optimizer moment"))?;
            let id = store.find(p).ok_or_else(|| bad("moment for unknown parameter"))?;
            moments.push((id, m.clone(), v.1.clone()));
        }
    }
    Ok((Adam::import(cfg.adam(), step, moments), epochs_done, history))
}

fn append_log(path: &Path, stats: &EpochStats) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(stats)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Generic training loop shared by every phase.
pub fn train(model: SilenceModel, data: &TrainingSet, cfg: &TrainingConfig, run: &RunOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    ensure_arg!(data.stft == model.spec.stft, "training set and model use different STFT settings");
    let n0 = data.examples[0].sample.mixture.len();
    if data.examples.iter().any(|e| e.sample.mixture.len() != n0) {
        return Err(Error::Config("training clips must share one length".into()));
    }

    let (mut model, mut opt, mut epochs_done, mut history) = match (&run.checkpoint_path, run.resume) {
        (Some(p), true) if p.exists() => {
            let ckpt = ModelCheckpoint::load(p)?;
            let (opt, done, hist) = adam_state_from_checkpoint(&ckpt, cfg)?;
            (ckpt.model, opt, done, hist)
        }
        _ => (model, Adam::new(cfg.adam()), 0, Vec::new()),
    };

    let profiles = if cfg.phase == Phase::Finetune && !cfg.no_silence_mask {
        Some(detector_profiles(&model, data, cfg.threshold)?)
    } else {
        None
    };
    let engine = StftEngine::new(model.spec.stft)?;
    let end = match run.max_epochs_this_run {
        Some(k) => (epochs_done + k).min(cfg.epochs),
        None => cfg.epochs,
    };
    while epochs_done < end {
        let epoch = epochs_done;
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.examples[i]).collect();
            let batch_profiles: Option<Vec<Spectrogram>> =
                profiles.as_ref().map(|p| chunk.iter().map(|&i| p[i].clone()).collect());
            let (grads, breakdown, updates) = {
                let mut g = Graph::new(&model.store, true);
                freeze_others(&mut g, cfg.phase);
                let (loss, breakdown) =
                    batch_objective(&mut g, &model, cfg, &batch, batch_profiles.as_deref(), &engine);
                let grads = g.backward(loss);
                (grads, breakdown, g.take_buffer_updates())
            };
            if !breakdown.total.is_finite() {
                return Err(Error::Config(format!("loss diverged at epoch {epoch}, step {steps}")));
            }
            opt.update(&mut model.store, &grads);
            model.store.apply_updates(updates);
            sum.add(&breakdown, chunk.len() as f64);
            steps += 1;
        }
        let mut mean = LossBreakdown::default();
        mean.add(&sum, 1.0 / data.len() as f64);
        let stats = EpochStats { phase: cfg.phase, epoch, steps, loss: mean, seconds: started.elapsed().as_secs_f64() };
        if let Some(p) = &run.log_path {
            append_log(p, &stats)?;
        }
        history.push(stats);
        epochs_done += 1;
        if let Some(p) = &run.checkpoint_path {
            let mut ckpt = ModelCheckpoint::new(model.clone(), cfg.phase.name());
            adam_state_to_checkpoint(&mut ckpt, &opt, epochs_done, &history, cfg);
            ckpt.save(p)?;
        }
    }
    let mut ckpt = ModelCheckpoint::new(model, cfg.phase.name());
    adam_state_to_checkpoint(&mut ckpt, &opt, epochs_done, &history, cfg);
    Ok(TrainOutcome { checkpoint: ckpt, history, complete: epochs_done >= cfg.epochs })
}

fn expect_phase(cfg: &TrainingConfig, phase: Phase) -> Result<()> {
    if cfg.phase != phase {
        return Err(Error::Config(format!("configuration is for phase {}, expected {phase}", cfg.phase)));
    }
    Ok(())
}

/// Trains the detector from fresh weights under the detection loss.
pub fn train_sid(model: SilenceModel, data: &TrainingSet, cfg: &TrainingConfig, run: &RunOptions) -> Result<TrainOutcome> {
    expect_phase(cfg, Phase::Sid)?;
    train(model, data, cfg, run)
}

/// Trains the estimator and remover on ground-truth interval profiles.
pub fn train_denoiser_gt(model: SilenceModel, data: &TrainingSet, cfg: &TrainingConfig, run: &RunOptions) -> Result<TrainOutcome> {
    expect_phase(cfg, Phase::DenoiserGt)?;
    train(model, data, cfg, run)
}

/// Combines a trained detector with a trained denoiser and fine-tunes the
/// denoiser on the detector's own intervals.
pub fn finetune(
    sid: &ModelCheckpoint,
    denoiser: &ModelCheckpoint,
    data: &TrainingSet,
    cfg: &TrainingConfig,
    run: &RunOptions,
) -> Result<TrainOutcome> {
    expect_phase(cfg, Phase::Finetune)?;
    let model = combine(sid, denoiser)?;
    train(model, data, cfg, run)
}

/// Detector weights from `sid`, estimator and remover weights from `denoiser`.
pub fn combine(sid: &ModelCheckpoint, denoiser: &ModelCheckpoint) -> Result<SilenceModel> {
    if sid.model.spec != denoiser.model.spec {
        return Err(Error::Checkpoint("detector and denoiser checkpoints have different architectures".into()));
    }
    let mut model = denoiser.model.clone();
    for id in sid.model.store.ids_with_prefix(SID_PREFIX) {
        *model.store.get_mut(id) = sid.model.store.get(id).clone();
    }
    Ok(model)
}

pub fn train_end_to_end(model: SilenceModel, data: &TrainingSet, cfg: &TrainingConfig, run: &RunOptions) -> Result<TrainOutcome> {
    expect_phase(cfg, Phase::EndToEnd)?;
    train(model, data, cfg, run)
}

pub fn train_joint(model: SilenceModel, data: &TrainingSet, cfg: &TrainingConfig, run: &RunOptions) -> Result<TrainOutcome> {
    expect_phase(cfg, Phase::Joint)?;
    train(model, data, cfg, run)
}

/// Per-segment detector confidences for every example (inference mode).
pub fn detector_confidences(model: &SilenceModel, data: &TrainingSet) -> Result<Vec<Vec<f64>>> {
    data.examples
        .iter()
        .map(|e| model.sid_forward(&e.spec_x, e.sample.mixture.len()))
        .collect()
}

/// Mean denoising loss over `data` in inference mode, with noise profiles
/// from ground-truth intervals (`profiles = None`) or the given spectrograms.
pub fn mean_l0(model: &SilenceModel, data: &TrainingSet, profiles: Option<&[Spectrogram]>, beta: f64) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    for (i, e) in data.examples.iter().enumerate() {
        let profile = profiles.map_or(&e.spec_profile_gt, |p| &p[i]);
        let b = loss_l0(model, &e.spec_x, profile, &e.spec_noise, &e.spec_clean, beta)?;
        sum.add(&b, 1.0 / data.len() as f64);
    }
    Ok(sum)
}
