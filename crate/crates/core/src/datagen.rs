//! Supervised mixture synthesis, silence labeling and dataset manifests.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{self, normalize_peak, ClipSpec, Waveform, SAMPLE_RATE};
use crate::error::{ensure_arg, Error, Result};
use crate::segments::{expand_segments, segment_bounds, SampleMask, SegmentLabels};

pub mod toy;

/// Mixing SNRs in dB.
pub const SNR_LEVELS_DB: [f64; 7] = [-10.0, -7.0, -3.0, 0.0, 3.0, 7.0, 10.0];

/// Segment energy threshold on peak-normalized clean speech.
pub const SILENCE_THRESHOLD: f64 = 0.08;

// Values are snapped to this grid (2^-40) so that `clean + noise` is exact
// and subtracting the noise recovers the clean signal bit for bit.
const MIX_GRID: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMeasure {
    /// Mean of squared amplitudes.
    #[default]
    MeanSquare,
    /// Mean of absolute amplitudes.
    MeanAbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceRule {
    pub threshold: f64,
    pub energy: EnergyMeasure,
}

impl Default for SilenceRule {
    fn default() -> Self {
        Self {
            threshold: SILENCE_THRESHOLD,
            energy: EnergyMeasure::MeanSquare,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSample {
    pub clean: Waveform,
    pub noise: Waveform,
    pub mixture: Waveform,
    pub snr_db: f64,
    pub clean_id: String,
    pub noise_id: String,
}

fn snap(v: f64) -> f64 {
    (v / MIX_GRID).round() * MIX_GRID
}

/// Scale `noise` so the clean-to-noise power ratio equals `snr_db` and add it
/// to `clean`.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<MixtureSample> {
    ensure_arg!(
        clean.len() == noise.len(),
        "clean ({}) and noise ({}) lengths differ",
        clean.len(),
        noise.len()
    );
    ensure_arg!(
        clean.sample_rate() == noise.sample_rate(),
        "clean and noise sample rates differ"
    );
    ensure_arg!(snr_db.is_finite(), "SNR must be finite");
    let clean_s: Vec<f64> = clean.samples().iter().map(|&v| snap(v)).collect();
    let p_clean = mean_square(&clean_s);
    let p_noise = noise.power();
    ensure_arg!(p_clean > 0.0, "clean signal has zero power");
    ensure_arg!(p_noise > 0.0, "noise signal has zero power");
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise_s: Vec<f64> = noise.samples().iter().map(|&v| snap(v * gain)).collect();
    let mixture: Vec<f64> = clean_s.iter().zip(&noise_s).map(|(c, n)| c + n).collect();
    let rate = clean.sample_rate();
    Ok(MixtureSample {
        clean: Waveform::new(clean_s, rate)?,
        noise: Waveform::new(noise_s, rate)?,
        mixture: Waveform::new(mixture, rate)?,
        snr_db,
        clean_id: String::new(),
        noise_id: String::new(),
    })
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Measured SNR in dB between a clean signal and a noise signal.
pub fn measured_snr_db(clean: &Waveform, noise: &Waveform) -> f64 {
    10.0 * (clean.power() / noise.power()).log10()
}

/// Energy of every 1/30 s segment under `rule`.
pub fn segment_energies(w: &Waveform, rule: &SilenceRule) -> Vec<f64> {
    segment_bounds(w.len(), w.sample_rate())
        .into_iter()
        .map(|r| {
            let seg = &w.samples()[r];
            let total: f64 = match rule.energy {
                EnergyMeasure::MeanSquare => seg.iter().map(|v| v * v).sum(),
                EnergyMeasure::MeanAbs => seg.iter().map(|v| v.abs()).sum(),
            };
            total / seg.len() as f64
        })
        .collect()
}

/// Label segments whose energy falls below the threshold as silent (1).
pub fn label_silence_with(w: &Waveform, rule: &SilenceRule) -> SegmentLabels {
    let labels = segment_energies(w, rule)
        .into_iter()
        .map(|e| u8::from(e < rule.threshold))
        .collect();
    SegmentLabels {
        labels,
        sample_rate: w.sample_rate(),
    }
}

/// Ground-truth silent intervals of a peak-normalized clean clip.
pub fn label_silence(clean: &Waveform) -> SegmentLabels {
    label_silence_with(clean, &SilenceRule::default())
}

pub fn expand_labels_to_samples(
    labels: &SegmentLabels,
    n_samples: usize,
    rate: u32,
) -> Result<SampleMask> {
    let values: Vec<f64> = labels.labels.iter().map(|&l| l as f64).collect();
    Ok(SampleMask(expand_segments(&values, n_samples, rate)?))
}

/// Tile `noise` (cyclically, starting at `offset`) to exactly `len` samples.
pub fn fit_noise(noise: &Waveform, len: usize, offset: usize) -> Result<Waveform> {
    ensure_arg!(!noise.is_empty(), "noise clip is empty");
    let src = noise.samples();
    let out = (0..len).map(|i| src[(offset + i) % src.len()]).collect();
    Waveform::new(out, noise.sample_rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One supervised example. Paths are relative to the dataset root. The
/// `*_out` paths are filled in once the example has been materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub clean_id: String,
    pub noise_id: String,
    pub clean_path: String,
    pub clean_offset: usize,
    pub noise_path: String,
    pub noise_offset: usize,
    pub n_samples: usize,
    pub snr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_out_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_out_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Source ids shared between train and test (empty when separated).
    pub fn leaked_sources(&self) -> Vec<String> {
        let collect = |s: Split| -> BTreeSet<String> {
            self.split(s)
                .flat_map(|r| [format!("clean:{}", r.clean_id), format!("noise:{}", r.noise_id)])
                .collect()
        };
        collect(Split::Train)
            .intersection(&collect(Split::Test))
            .cloned()
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { records })
    }
}

/// A clean or noise source file with its usable length at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceInfo {
    pub id: String,
    pub path: String,
    /// Indices (in clip units) of usable clips; for noise this is unused.
    pub clips: Vec<usize>,
    pub n_samples: usize,
}

fn partition<T: Clone>(items: &[T], ratio: f64, rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<T>) {
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let n = shuffled.len();
    let mut n_train = (ratio * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    } else {
        n_train = n;
    }
    let test = shuffled.split_off(n_train);
    (shuffled, test)
}

/// Assign sources to splits and draw one record per clean clip, pairing it
/// with a random same-split noise source, offset and SNR.
pub fn plan_records(
    clean: &[SourceInfo],
    noise: &[SourceInfo],
    split_ratio: f64,
    clip: &ClipSpec,
    seed: u64,
) -> Result<DatasetManifest> {
    ensure_arg!(
        (0.0..=1.0).contains(&split_ratio),
        "split ratio must be within [0, 1]"
    );
    if clean.is_empty() {
        return Err(Error::Config("no clean speech sources".into()));
    }
    if noise.is_empty() {
        return Err(Error::Config("no noise sources".into()));
    }
    let clip_len = clip.n_samples()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (clean_train, clean_test) = partition(clean, split_ratio, &mut rng);
    let (noise_train, noise_test) = partition(noise, split_ratio, &mut rng);
    let mut records = Vec::new();
    for (split, cleans, noises) in [
        (Split::Train, clean_train, noise_train),
        (Split::Test, clean_test, noise_test),
    ] {
        if cleans.is_empty() {
            continue;
        }
        // A lone noise source goes to train; test then borrows nothing.
        if noises.is_empty() {
            return Err(Error::Config(format!(
                "split {split} has clean sources but no noise sources"
            )));
        }
        let mut cleans = cleans;
        cleans.sort_by(|a, b| a.id.cmp(&b.id));
        let mut counter = 0usize;
        for src in &cleans {
            for &clip_idx in &src.clips {
                let n = &noises[rng.gen_range(0..noises.len())];
                let snr_db = SNR_LEVELS_DB[rng.gen_range(0..SNR_LEVELS_DB.len())];
                let noise_offset = rng.gen_range(0..n.n_samples.max(1));
                records.push(ManifestRecord {
                    id: format!("{split}-{counter:06}"),
                    split,
                    clean_id: src.id.clone(),
                    noise_id: n.id.clone(),
                    clean_path: src.path.clone(),
                    clean_offset: clip_idx * clip_len,
                    noise_path: n.path.clone(),
                    noise_offset,
                    n_samples: clip_len,
                    snr_db,
                    mixture_path: None,
                    clean_out_path: None,
                    noise_out_path: None,
                    label_path: None,
                });
                counter += 1;
            }
        }
    }
    Ok(DatasetManifest { records })
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!(
            "no WAV files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn relative_to(root: &Path, p: &Path) -> String {
    let abs_root = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let abs_p = p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    pathdiff::diff_paths(&abs_p, &abs_root)
        .unwrap_or(abs_p)
        .to_string_lossy()
        .into_owned()
}

/// Load an audio source at 16 kHz.
pub fn load_source(path: &Path) -> Result<Waveform> {
    let w = audio::load_wav(path)?;
    audio::resample(&w, SAMPLE_RATE)
}

/// Scan `clean_dir` and `noise_dir`, split sources into train/test and plan
/// one record per usable 2 s clean clip. All-silent clips are skipped.
pub fn build_manifest(
    root: &Path,
    clean_dir: &Path,
    noise_dir: &Path,
    split_ratio: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    let clip = ClipSpec::default();
    let clip_len = clip.n_samples()?;
    let mut clean = Vec::new();
    for p in wav_files(clean_dir)? {
        let w = load_source(&p)?;
        let clips = w
            .samples()
            .chunks_exact(clip_len)
            .enumerate()
            .filter(|(_, c)| c.iter().any(|&v| v != 0.0))
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        clean.push(SourceInfo {
            id: source_id(&p),
            path: relative_to(root, &p),
            clips,
            n_samples: w.len(),
        });
    }
    let mut noise = Vec::new();
    for p in wav_files(noise_dir)? {
        let w = load_source(&p)?;
        if w.power() == 0.0 {
            return Err(Error::Config(format!(
                "noise source {} is silent",
                p.display()
            )));
        }
        noise.push(SourceInfo {
            id: source_id(&p),
            path: relative_to(root, &p),
            clips: Vec::new(),
            n_samples: w.len(),
        });
    }
    plan_records(&clean, &noise, split_ratio, &clip, seed)
}

fn source_id(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn resolve(root: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

/// Synthesize a record from its recipe (clean clip, noise offset, SNR).
pub fn synthesize_record(root: &Path, record: &ManifestRecord) -> Result<MixtureSample> {
    let clean_src = load_source(&resolve(root, &record.clean_path))?;
    let end = record.clean_offset + record.n_samples;
    ensure_arg!(
        end <= clean_src.len(),
        "record {} reaches past the end of {}",
        record.id,
        record.clean_path
    );
    let clean = normalize_peak(&Waveform::new(
        clean_src.samples()[record.clean_offset..end].to_vec(),
        SAMPLE_RATE,
    )?);
    let noise_src = load_source(&resolve(root, &record.noise_path))?;
    let noise = fit_noise(&noise_src, record.n_samples, record.noise_offset)?;
    let mut sample = mix_at_snr(&clean, &noise, record.snr_db)?;
    sample.clean_id = record.clean_id.clone();
    sample.noise_id = record.noise_id.clone();
    Ok(sample)
}

/// Load a record, preferring materialized files when present.
pub fn load_record(root: &Path, record: &ManifestRecord) -> Result<(MixtureSample, SegmentLabels)> {
    let sample = match (&record.mixture_path, &record.clean_out_path, &record.noise_out_path) {
        (Some(m), Some(c), Some(n)) => {
            let load = |p: &str| -> Result<Waveform> {
                let path = resolve(root, p);
                read_samples_f64(&path)
            };
            MixtureSample {
                clean: load(c)?,
                noise: load(n)?,
                mixture: load(m)?,
                snr_db: record.snr_db,
                clean_id: record.clean_id.clone(),
                noise_id: record.noise_id.clone(),
            }
        }
        _ => synthesize_record(root, record)?,
    };
    let labels = match &record.label_path {
        Some(p) => {
            let path = resolve(root, p);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text)?
        }
        None => label_silence(&sample.clean),
    };
    Ok((sample, labels))
}

/// Materialized dataset signals are stored losslessly as raw little-endian
/// f64 (`.f64` files) so that `mixture == clean + noise` survives the round
/// trip; WAV previews are written alongside for listening.
pub fn write_samples_f64(path: &Path, w: &Waveform) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 8 * w.len());
    bytes.extend_from_slice(&(w.sample_rate() as u64).to_le_bytes());
    for v in w.samples() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_samples_f64(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || (bytes.len() - 8) % 8 != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "truncated sample file".into(),
        });
    }
    let rate = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as u32;
    let samples = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Waveform::new(samples, rate)
}

/// Write mixture/clean/noise/labels for every record under `out_root` and
/// return the manifest with output paths filled in.
pub fn materialize(
    source_root: &Path,
    out_root: &Path,
    manifest: &DatasetManifest,
) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    for dir in ["mixture", "clean", "noise", "labels", "preview"] {
        let d = out_root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for rec in &mut out.records {
        let sample = synthesize_record(source_root, rec)?;
        let labels = label_silence(&sample.clean);
        let name = &rec.id;
        let paths = [
            ("mixture", &sample.mixture),
            ("clean", &sample.clean),
            ("noise", &sample.noise),
        ];
        for (dir, w) in paths {
            write_samples_f64(&out_root.join(dir).join(format!("{name}.f64")), w)?;
        }
        audio::save_wav(
            out_root.join("preview").join(format!("{name}.wav")),
            &sample.mixture,
        )?;
        let label_file = out_root.join("labels").join(format!("{name}.json"));
        fs::write(&label_file, serde_json::to_string(&labels)?)
            .map_err(|e| Error::io(&label_file, e))?;
        rec.mixture_path = Some(format!("mixture/{name}.f64"));
        rec.clean_out_path = Some(format!("clean/{name}.f64"));
        rec.noise_out_path = Some(format!("noise/{name}.f64"));
        rec.label_path = Some(format!("labels/{name}.json"));
        if source_root != out_root {
            let rebase = |p: &str| relative_to(out_root, &resolve(source_root, p));
            rec.clean_path = rebase(&rec.clean_path);
            rec.noise_path = rebase(&rec.noise_path);
        }
    }
    Ok(out)
}
