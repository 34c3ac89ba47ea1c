use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;
use silence_denoise::audio::{load_wav, normalize_peak, save_wav};
use silence_denoise::baselines::gtsi_denoise_signal;
use silence_denoise::datagen::{label_silence_with, toy, DatasetManifest, SilenceRule, Split, SNR_LEVELS_DB};
use silence_denoise::experiment::{
    default_workers, evaluate_outputs, evaluate_system, load_clips, perturbation_study, run_ablation, sid_evaluation,
    synth_dataset, train_phases, training_set, detector_auc, LabeledClip, Schedules, Variant, MANIFEST_FILE,
};
use silence_denoise::metrics::{MetricsReport, PesqBackend, PesqMode};
use silence_denoise::models::{DenoiseOptions, ModelCheckpoint, ModelSpec, SilenceModel};
use silence_denoise::segments::segment_bounds;
use silence_denoise::training::{Phase, RunOptions};
use silence_denoise::{SegmentLabels, Waveform};

use crate::cli::*;
use crate::output::{cell, header, metric_cells, usage, write_csv, write_json, ExperimentConfig};
use crate::plot::{bar_chart, line_chart, Series};

fn workers(o: &OutArgs) -> usize {
    o.workers.unwrap_or_else(default_workers).max(1)
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn open_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(usage(format!("{} has no {MANIFEST_FILE}; run `sidenoise synth` first", root.display())));
    }
    Ok(DatasetManifest::read_jsonl(&path)?)
}

fn clips_of(d: &DataArgs) -> Result<Vec<LabeledClip>> {
    let manifest = open_manifest(&d.data)?;
    let clips = load_clips(&d.data, &manifest, split_of(d.split), d.limit)?;
    if clips.is_empty() {
        return Err(usage(format!("the {:?} split of {} is empty", d.split, d.data.display())));
    }
    Ok(clips)
}

fn load_model(path: &Path) -> Result<SilenceModel> {
    Ok(ModelCheckpoint::load(path).with_context(|| format!("loading {}", path.display()))?.model)
}

fn pesq_backend(arg: PesqArg) -> Option<PesqBackend> {
    let backend = match arg {
        PesqArg::Off => return None,
        PesqArg::Auto | PesqArg::Wideband => PesqBackend::detect(PesqMode::Wideband),
        PesqArg::Narrowband => PesqBackend::detect(PesqMode::Narrowband),
    };
    if backend.is_none() {
        eprintln!("warning: Python `pesq` package not found; PESQ and composite scores are omitted");
    }
    backend
}

fn wav_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(usage(format!("{} does not exist", input.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no .wav files in {}", input.display())));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into())
}

fn resolve_schedules(a: &ScheduleArgs) -> Result<Schedules> {
    let mut s = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Schedules::preset(&a.preset, a.seed)?,
    };
    for cfg in [&mut s.sid, &mut s.denoiser_gt, &mut s.finetune, &mut s.end_to_end, &mut s.joint] {
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = a.lr {
            cfg.lr = lr;
        }
        if let Some(b) = a.batch_size {
            cfg.batch_size = b;
        }
        if a.config.is_none() || a.seed != 0 {
            cfg.seed = a.seed;
        }
        cfg.validate()?;
    }
    Ok(s)
}

fn model_spec(preset: &str) -> Result<ModelSpec> {
    ModelSpec::preset(preset).ok_or_else(|| usage(format!("unknown preset {preset:?} (desk or paper)")))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut run = ExperimentConfig::new("synth", &a.out, a.seed);
    let (clean, noise) = match (&a.clean_dir, &a.noise_dir, a.preset.as_deref()) {
        (Some(c), Some(n), _) => (c.clone(), n.clone()),
        (None, None, Some("desk")) => {
            let src = a.out.join("sources");
            toy::write_corpus(&src, a.toy_clips, a.seed)?;
            (src.join("clean"), src.join("noise"))
        }
        (None, None, Some(other)) => return Err(usage(format!("preset {other:?} has no built-in corpus; use desk"))),
        _ => return Err(usage("give both --clean-dir and --noise-dir, or --preset desk")),
    };
    run.settings = serde_json::json!({
        "clean_dir": clean,
        "noise_dir": noise,
        "split_ratio": a.split_ratio,
        "preset": a.preset,
    });
    run.snr_buckets = SNR_LEVELS_DB.to_vec();
    let manifest = synth_dataset(&clean, &noise, &a.out, a.split_ratio, a.seed)?;
    run.manifest = Some(a.out.join(MANIFEST_FILE));
    run.write()?;
    let count = |s| manifest.split(s).count();
    let mut levels: Vec<f64> = manifest.records.iter().map(|r| r.snr_db).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    println!(
        "{} mixtures ({} train, {} test) at SNRs {:?} dB -> {}",
        manifest.records.len(),
        count(Split::Train),
        count(Split::Test),
        levels,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct LabelEntry {
    input: PathBuf,
    labels: PathBuf,
    segments: usize,
    silent_segments: usize,
}

pub fn label(a: &LabelArgs) -> Result<()> {
    let inputs = wav_inputs(&a.input)?;
    if !(a.threshold > 0.0) {
        return Err(usage("--threshold must be positive"));
    }
    let mut run = ExperimentConfig::new("label", &a.out.out, 0);
    run.settings = serde_json::json!({ "input": a.input, "threshold": a.threshold });
    run.write()?;
    let rule = SilenceRule { threshold: a.threshold, ..SilenceRule::default() };
    let mut entries = Vec::new();
    for path in inputs {
        let w = load_wav(&path)?;
        let labels = label_silence_with(&normalize_peak(&w), &rule);
        let out = a.out.out.join(format!("{}.json", stem(&path)));
        write_json(&out, &labels)?;
        entries.push(LabelEntry { input: path, labels: out, segments: labels.len(), silent_segments: labels.silent_count() });
    }
    write_json(&a.out.out.join("summary.json"), &entries)?;
    println!("labelled {} file(s) -> {}", entries.len(), a.out.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    silence_denoise::experiment::validate_phases(&a.phases)?;
    let schedules = resolve_schedules(&a.schedule)?;
    let spec = model_spec(&a.schedule.preset)?;
    let seed = schedules.get(a.phases[0]).seed;
    let mut run = ExperimentConfig::new("train", &a.out.out, seed);
    run.data_root = Some(a.data.clone());
    run.phases = a.phases.iter().map(|p| p.name().to_string()).collect();
    run.settings = serde_json::json!({
        "preset": a.schedule.preset,
        "limit": a.limit,
        "resume": a.resume,
        "schedules": schedules,
    });
    run.check_paths()?;
    let manifest = open_manifest(&a.data)?;
    let clips = load_clips(&a.data, &manifest, Split::Train, a.limit)?;
    if clips.is_empty() {
        return Err(usage(format!("the train split of {} is empty", a.data.display())));
    }
    run.write()?;
    let data = training_set(&clips, &spec)?;
    let out = &a.out.out;
    let run_for = |p: Phase| RunOptions {
        log_path: Some(out.join(format!("{}.log.jsonl", p.name()))),
        checkpoint_path: Some(out.join(format!("{}.ckpt", p.name()))),
        resume: a.resume,
        max_epochs_this_run: None,
    };
    let (ckpt, history) = train_phases(SilenceModel::new(spec, seed), &data, &a.phases, &schedules, run_for)?;
    let model_path = out.join("model.ckpt");
    ckpt.save(&model_path)?;

    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| {
            vec![
                h.phase.name().to_string(),
                h.epoch.to_string(),
                h.steps.to_string(),
                cell(Some(h.loss.noise_term)),
                cell(Some(h.loss.signal_term)),
                cell(Some(h.loss.bce_term)),
                cell(Some(h.loss.total)),
                format!("{:.3}", h.seconds),
            ]
        })
        .collect();
    write_csv(
        &out.join("history.csv"),
        &["phase", "epoch", "steps", "noise_term", "signal_term", "bce_term", "total", "seconds"],
        &rows,
    )?;
    let series: Vec<Series> = a
        .phases
        .iter()
        .map(|&p| Series {
            points: history.iter().filter(|h| h.phase == p).map(|h| (h.epoch as f64, h.loss.total)).collect(),
        })
        .collect();
    line_chart(&out.join("loss.png"), &series)?;
    for p in &a.phases {
        if let Some(last) = history.iter().rev().find(|h| h.phase == *p) {
            println!("{}: {} epochs, final loss {:.4}", p.name(), last.epoch + 1, last.loss.total);
        }
    }
    println!("checkpoint -> {}", model_path.display());
    Ok(())
}

#[derive(Serialize)]
struct MaskSidecar {
    input: PathBuf,
    output: PathBuf,
    sample_rate: u32,
    n_samples: usize,
    source: &'static str,
    threshold: Option<f64>,
    /// Per-segment mean of the sample mask (1 = treated as silent).
    segments: Vec<f64>,
    confidences: Option<Vec<f64>>,
}

fn segment_means(mask: &[f64], rate: u32) -> Vec<f64> {
    segment_bounds(mask.len(), rate)
        .into_iter()
        .map(|r| {
            let n = r.len().max(1) as f64;
            mask[r].iter().sum::<f64>() / n
        })
        .collect()
}

pub fn denoise(a: &DenoiseArgs) -> Result<()> {
    let mut run = ExperimentConfig::new("denoise", &a.out.out, 0);
    run.checkpoints = vec![a.checkpoint.clone()];
    run.settings = serde_json::json!({ "input": a.input, "gtsi": a.gtsi, "threshold": a.threshold });
    run.check_paths()?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage("--threshold must lie in [0, 1]"));
    }
    if let Some(g) = &a.gtsi {
        if !g.exists() {
            return Err(usage(format!("{} does not exist", g.display())));
        }
    }
    let inputs = wav_inputs(&a.input)?;
    let model = load_model(&a.checkpoint)?;
    run.write()?;
    let out_dir = &a.out.out;
    let job = |path: &PathBuf| -> silence_denoise::Result<MaskSidecar> {
        let x: Waveform = load_wav(path)?;
        let name = stem(path);
        let (out, source) = match &a.gtsi {
            Some(g) => {
                let file = if g.is_dir() { g.join(format!("{name}.json")) } else { g.clone() };
                let text = fs::read_to_string(&file).map_err(|e| silence_denoise::Error::Io { path: file.clone(), source: e })?;
                let labels: SegmentLabels = serde_json::from_str(&text)?;
                (gtsi_denoise_signal(&model, &x, &labels)?, "gtsi")
            }
            None => {
                let opts = DenoiseOptions { threshold: a.threshold, ..DenoiseOptions::default() };
                (model.denoise(&x, &opts)?, "detector")
            }
        };
        let output = out_dir.join(format!("{name}.wav"));
        save_wav(&output, &out.denoised)?;
        Ok(MaskSidecar {
            input: path.clone(),
            output,
            sample_rate: x.sample_rate(),
            n_samples: x.len(),
            source,
            threshold: (source == "detector").then_some(a.threshold),
            segments: segment_means(out.mask.values(), x.sample_rate()),
            confidences: out.confidences,
        })
    };
    let sidecars = silence_denoise::experiment::parallel_map(&inputs, workers(&a.out), job)?;
    for s in &sidecars {
        write_json(&out_dir.join(format!("{}.mask.json", stem(&s.output))), s)?;
    }
    if a.input.is_dir() {
        let files: Vec<serde_json::Value> = sidecars
            .iter()
            .map(|s| {
                serde_json::json!({
                    "input": s.input,
                    "output": s.output,
                    "duration_s": s.n_samples as f64 / s.sample_rate as f64,
                    "silent_segments": s.segments.iter().filter(|&&v| v >= 0.5).count(),
                    "segments": s.segments.len(),
                })
            })
            .collect();
        write_json(
            &out_dir.join("summary.json"),
            &serde_json::json!({ "checkpoint": a.checkpoint, "source": sidecars[0].source, "files": files }),
        )?;
    }
    println!("denoised {} file(s) -> {}", sidecars.len(), out_dir.display());
    Ok(())
}

/// Per-clip, per-SNR and overall CSVs plus plots for named reports.
fn write_reports(out: &Path, reports: &[(String, MetricsReport)]) -> Result<()> {
    let mut clip_rows = Vec::new();
    let mut snr_rows = Vec::new();
    let mut overall_rows = Vec::new();
    let mut levels: Vec<f64> = SNR_LEVELS_DB.to_vec();
    for (_, r) in reports {
        levels.extend(r.clips.iter().map(|c| c.snr_db));
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for (name, r) in reports {
        for c in &r.clips {
            clip_rows.push(vec![
                name.clone(),
                c.id.clone(),
                c.snr_db.to_string(),
                cell(c.pesq),
                cell(Some(c.ssnr)),
                cell(Some(c.stoi)),
                cell(c.csig),
                cell(c.cbak),
                cell(c.covl),
            ]);
        }
        for &snr in &levels {
            let mut row = vec![name.clone(), snr.to_string()];
            match r.per_snr.iter().find(|b| b.snr_db == snr) {
                Some(b) => row.extend(metric_cells(&b.means)),
                None => row.extend(std::iter::once("0".to_string()).chain(std::iter::repeat_n(String::new(), 6))),
            }
            snr_rows.push(row);
        }
        let mut row = vec![name.clone()];
        row.extend(metric_cells(&r.overall));
        overall_rows.push(row);
    }
    write_csv(
        &out.join("clips.csv"),
        &["system", "id", "snr_db", "pesq", "ssnr", "stoi", "csig", "cbak", "covl"],
        &clip_rows,
    )?;
    write_csv(&out.join("per_snr.csv"), &header(&["system", "snr_db"]), &snr_rows)?;
    write_csv(&out.join("overall.csv"), &header(&["system"]), &overall_rows)?;
    for (k, metric) in ["pesq", "ssnr", "stoi", "csig", "cbak", "covl"].iter().enumerate() {
        let series: Vec<Series> = reports
            .iter()
            .map(|(_, r)| Series {
                points: r.per_snr.iter().map(|b| (b.snr_db, b.means.named()[k].1.unwrap_or(f64::NAN))).collect(),
            })
            .collect();
        if series.iter().any(|s| s.points.iter().any(|p| p.1.is_finite())) {
            line_chart(&out.join(format!("per_snr_{metric}.png")), &series)?;
        }
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut run = ExperimentConfig::new("evaluate", &a.out.out, 0);
    run.data_root = Some(a.data.data.clone());
    run.checkpoints = a.checkpoint.iter().cloned().collect();
    run.systems = a.systems.iter().map(|s| s.name().to_string()).collect();
    if a.outputs.is_some() {
        run.systems.push(a.outputs_name.clone());
    }
    run.metrics = vec!["pesq", "ssnr", "stoi", "csig", "cbak", "covl"].into_iter().map(String::from).collect();
    run.snr_buckets = SNR_LEVELS_DB.to_vec();
    run.settings = serde_json::json!({
        "split": format!("{:?}", a.data.split).to_lowercase(),
        "limit": a.data.limit,
        "threshold": a.threshold,
        "outputs": a.outputs,
    });
    run.check_paths()?;
    if let Some(s) = a.systems.iter().find(|s| s.needs_model() && a.checkpoint.is_none()) {
        return Err(usage(format!("system {} needs --checkpoint", s.name())));
    }
    if let Some(o) = &a.outputs {
        if !o.is_dir() {
            return Err(usage(format!("{} is not a directory", o.display())));
        }
    }
    let clips = clips_of(&a.data)?;
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let pesq = pesq_backend(a.pesq);
    run.write()?;
    let w = workers(&a.out);
    let mut reports = Vec::new();
    for &s in &a.systems {
        let r = evaluate_system(s, model.as_ref(), &clips, a.threshold, pesq.as_ref(), w)?;
        reports.push((s.name().to_string(), r));
    }
    if let Some(dir) = &a.outputs {
        let outputs = clips
            .iter()
            .map(|c| load_wav(dir.join(format!("{}.wav", c.id))))
            .collect::<silence_denoise::Result<Vec<_>>>()?;
        reports.push((a.outputs_name.clone(), evaluate_outputs(&clips, &outputs, pesq.as_ref(), w)?));
    }
    write_reports(&a.out.out, &reports)?;
    write_json(&a.out.out.join("summary.json"), &reports.iter().map(|(n, r)| (n, &r.overall)).collect::<Vec<_>>())?;
    for (name, r) in &reports {
        let m = &r.overall;
        println!(
            "{name:<12} clips {:>4}  pesq {:>6}  ssnr {:>7.3}  stoi {:.3}",
            m.clips,
            m.pesq.map_or("-".into(), |v| format!("{v:.3}")),
            m.ssnr,
            m.stoi
        );
    }
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let schedules = resolve_schedules(&a.schedule)?;
    let spec = model_spec(&a.schedule.preset)?;
    let variants = a.variants.clone().unwrap_or_else(|| Variant::ALL.to_vec());
    let mut run = ExperimentConfig::new("ablate", &a.out.out, a.schedule.seed);
    run.data_root = Some(a.data.clone());
    run.systems = variants.iter().map(|v| v.name().to_string()).collect();
    run.settings = serde_json::json!({
        "preset": a.schedule.preset,
        "train_limit": a.train_limit,
        "test_limit": a.test_limit,
        "schedules": schedules,
    });
    run.check_paths()?;
    let manifest = open_manifest(&a.data)?;
    let train = load_clips(&a.data, &manifest, Split::Train, a.train_limit)?;
    let test = load_clips(&a.data, &manifest, Split::Test, a.test_limit)?;
    if train.is_empty() || test.is_empty() {
        return Err(usage(format!("{} needs clips in both splits", a.data.display())));
    }
    let pesq = pesq_backend(a.pesq);
    run.write()?;
    let data = training_set(&train, &spec)?;
    let rows = run_ablation(&spec, a.schedule.seed, &data, &test, &schedules, &variants, pesq.as_ref(), workers(&a.out))?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.variant.name().to_string(), r.label.clone()];
            row.extend(metric_cells(&r.means));
            row
        })
        .collect();
    write_csv(&a.out.out.join("ablation.csv"), &header(&["variant", "label"]), &csv_rows)?;
    let ssnr_of = |v: Variant| rows.iter().find(|r| r.variant == v).map(|r| r.means.ssnr);
    let nr_check = match (ssnr_of(Variant::Full), ssnr_of(Variant::NoNrComp)) {
        (Some(full), Some(no_nr)) => {
            let ok = full >= no_nr;
            println!("check: Ours SSNR {full:.3} {} Ours w/o NR comp {no_nr:.3}", if ok { ">=" } else { "<" });
            Some(ok)
        }
        _ => None,
    };
    write_json(&a.out.out.join("summary.json"), &serde_json::json!({ "rows": rows, "full_beats_no_nr_ssnr": nr_check }))?;
    let series = [Series { points: rows.iter().enumerate().map(|(k, r)| (k as f64, r.means.ssnr)).collect() }];
    bar_chart(&a.out.out.join("ablation.png"), rows.len(), &series)?;
    for r in &rows {
        println!("{:<20} ssnr {:>7.3}  stoi {:.3}", r.label, r.means.ssnr, r.means.stoi);
    }
    Ok(())
}

pub fn perturb(a: &PerturbArgs) -> Result<()> {
    let amounts = a.amounts.clone().unwrap_or_else(|| a.mode.default_amounts());
    let mut run = ExperimentConfig::new("perturb", &a.out.out, 0);
    run.data_root = Some(a.data.data.clone());
    run.checkpoints = vec![a.checkpoint.clone()];
    run.settings = serde_json::json!({ "mode": a.mode, "amounts": amounts, "split": format!("{:?}", a.data.split).to_lowercase(), "limit": a.data.limit });
    run.check_paths()?;
    let clips = clips_of(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    let pesq = pesq_backend(a.pesq);
    run.write()?;
    let rows = perturbation_study(&model, &clips, a.mode, &amounts, pesq.as_ref(), workers(&a.out))?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.mode.name().to_string(), r.amount.to_string()];
            match &r.means {
                Some(m) => row.extend(metric_cells(m)),
                None => row.extend(std::iter::once("0".to_string()).chain(std::iter::repeat_n(String::new(), 6))),
            }
            row.push(r.error.clone().unwrap_or_default());
            row
        })
        .collect();
    let mut cols = header(&["mode", "amount"]);
    cols.push("error");
    let name = a.mode.name();
    write_csv(&a.out.out.join(format!("perturb_{name}.csv")), &cols, &csv_rows)?;
    write_json(&a.out.out.join("summary.json"), &rows)?;
    let series: Vec<Series> = ["ssnr", "stoi", "pesq"]
        .iter()
        .map(|m| Series {
            points: rows
                .iter()
                .map(|r| {
                    let v = r.means.as_ref().and_then(|x| x.named().iter().find(|n| n.0 == *m).and_then(|n| n.1));
                    (r.amount, v.unwrap_or(f64::NAN))
                })
                .collect(),
        })
        .filter(|s| s.points.iter().any(|p| p.1.is_finite()))
        .collect();
    line_chart(&a.out.out.join(format!("perturb_{name}.png")), &series)?;
    for r in &rows {
        match (&r.means, &r.error) {
            (Some(m), _) => println!("{name} {:>6.3}: ssnr {:>7.3}  stoi {:.3}", r.amount, m.ssnr, m.stoi),
            (None, e) => println!("{name} {:>6.3}: {}", r.amount, e.clone().unwrap_or_default()),
        }
    }
    Ok(())
}

pub fn sid_eval(a: &SidEvalArgs) -> Result<()> {
    let mut run = ExperimentConfig::new("sid-eval", &a.out.out, 0);
    run.data_root = Some(a.data.data.clone());
    run.checkpoints = a.checkpoint.iter().cloned().chain(a.vad.iter().cloned()).collect();
    run.settings = serde_json::json!({
        "threshold": a.threshold,
        "vad": a.vad,
        "vad_timeout_s": a.vad_timeout_s,
        "split": format!("{:?}", a.data.split).to_lowercase(),
        "limit": a.data.limit,
    });
    run.check_paths()?;
    if !(a.vad_timeout_s > 0.0) {
        return Err(usage("--vad-timeout-s must be positive"));
    }
    let clips = clips_of(&a.data)?;
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    run.write()?;
    let vad = a.vad.as_deref().map(|p| (p, Duration::from_secs_f64(a.vad_timeout_s)));
    let rows = sid_evaluation(model.as_ref(), &clips, a.threshold, vad)?;
    let auc = model.as_ref().map(|m| detector_auc(m, &clips)).transpose()?.flatten();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.report;
            vec![
                r.method.clone(),
                s.tp.to_string(),
                s.tn.to_string(),
                s.fp.to_string(),
                s.fn_.to_string(),
                cell(s.precision),
                cell(s.recall),
                cell(s.f1),
                cell(Some(s.accuracy)),
                cell(if r.method == "ours" { auc } else { None }),
            ]
        })
        .collect();
    write_csv(
        &a.out.out.join("sid.csv"),
        &["method", "tp", "tn", "fp", "fn", "precision", "recall", "f1", "accuracy", "auc"],
        &csv_rows,
    )?;
    write_json(&a.out.out.join("summary.json"), &serde_json::json!({ "rows": rows, "auc": auc }))?;
    let series: Vec<Series> = rows
        .iter()
        .map(|r| {
            let s = &r.report;
            let vals = [s.precision, s.recall, s.f1, Some(s.accuracy)];
            Series { points: vals.iter().enumerate().map(|(k, v)| (k as f64, v.unwrap_or(f64::NAN))).collect() }
        })
        .collect();
    bar_chart(&a.out.out.join("sid.png"), 4, &series)?;
    for r in &rows {
        let s = &r.report;
        println!(
            "{:<15} precision {}  recall {}  f1 {}  accuracy {:.3}",
            r.method,
            cell(s.precision),
            cell(s.recall),
            cell(s.f1),
            s.accuracy
        );
    }
    if let Some(v) = auc {
        println!("detector AUC {v:.3}");
    }
    Ok(())
}
