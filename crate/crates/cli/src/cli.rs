use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use silence_denoise::experiment::{PerturbMode, System, Variant};
use silence_denoise::training::Phase;

#[derive(Parser, Debug)]
#[command(name = "sidenoise", version, about = "Speech denoising driven by silent intervals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Mix clean speech with noise into a labelled dataset.
    Synth(SynthArgs),
    /// Label the silent segments of clean recordings.
    Label(LabelArgs),
    /// Train one of the supported phase sequences.
    Train(TrainArgs),
    /// Denoise a recording or a directory of recordings.
    Denoise(DenoiseArgs),
    /// Score denoising systems on a dataset split.
    Evaluate(EvaluateArgs),
    /// Train and score the component/loss ablation variants.
    Ablate(AblateArgs),
    /// Denoise with shifted or shrunk ground-truth intervals.
    Perturb(PerturbArgs),
    /// Score silent-interval detection.
    SidEval(SidEvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Run directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for per-clip work (default: available cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Use at most this many clips of the split.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PesqArg {
    /// Use the Python `pesq` package when it can be found.
    Auto,
    Off,
    Wideband,
    Narrowband,
}

#[derive(Args, Debug, Clone)]
pub struct ScheduleArgs {
    /// Model and schedule preset: desk or paper.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// TOML file with a full set of schedules, replacing the preset's.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the epoch count of every phase.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub clean_dir: Option<PathBuf>,
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of clean speakers (and noise sources) used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
    /// `desk` generates the built-in toy corpus when no source folders are given.
    #[arg(long)]
    pub preset: Option<String>,
    /// Clean clips in the generated toy corpus.
    #[arg(long, default_value_t = 100)]
    pub toy_clips: usize,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    /// A clean WAV file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    /// Mean-square threshold on the peak-normalized segment.
    #[arg(long, default_value_t = silence_denoise::datagen::SILENCE_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated phases: sid,denoiser_gt,finetune | end_to_end | joint.
    #[arg(long, value_delimiter = ',', value_parser = parse_phase, default_value = "sid,denoiser_gt,finetune")]
    pub phases: Vec<Phase>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Train on at most this many clips of the train split.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Continue from the per-phase checkpoints in the run directory.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    /// A WAV file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Ground-truth labels: a JSON file, or a directory of `<stem>.json`.
    #[arg(long)]
    pub gtsi: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated systems to run.
    #[arg(long, value_delimiter = ',', value_parser = parse_system, default_value = "noisy")]
    pub systems: Vec<System>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of already denoised `<clip id>.wav` files to score as well.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// Name reported for `--outputs`.
    #[arg(long, default_value = "outputs")]
    pub outputs_name: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = PesqArg::Auto)]
    pub pesq: PesqArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Option<Vec<Variant>>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = PesqArg::Auto)]
    pub pesq: PesqArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// shift (seconds) or shrink (fraction of each interval).
    #[arg(long, value_parser = parse_perturb_mode)]
    pub mode: PerturbMode,
    /// Comma-separated amounts; defaults to the standard study.
    #[arg(long, value_delimiter = ',')]
    pub amounts: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = PesqArg::Auto)]
    pub pesq: PesqArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SidEvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// External VAD executable: reads a WAV path, prints `start end label` lines.
    #[arg(long)]
    pub vad: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    pub vad_timeout_s: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    Phase::parse(s).ok_or_else(|| format!("unknown phase {s:?} (sid, denoiser_gt, finetune, end_to_end, joint)"))
}

fn parse_system(s: &str) -> Result<System, String> {
    System::parse(s).ok_or_else(|| {
        let names: Vec<&str> = System::ALL.iter().map(|v| v.name()).collect();
        format!("unknown system {s:?} ({})", names.join(", "))
    })
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant {s:?} ({})", names.join(", "))
    })
}

fn parse_perturb_mode(s: &str) -> Result<PerturbMode, String> {
    PerturbMode::parse(s).ok_or_else(|| format!("unknown perturbation mode {s:?} (shift, shrink)"))
}
