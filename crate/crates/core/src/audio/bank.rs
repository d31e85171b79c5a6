use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::augment::resample_linear;
use super::esc50::{esc50_description, parse_esc50_filename};
use super::wav::read_wav;
use crate::corpus::AudioClip;
use crate::error::{Error, Result};

/// Nominal length of an atomic sound.
pub const ATOMIC_SECONDS: f64 = 5.0;

/// Peak level atomic clips are normalized to.
pub const DEFAULT_PEAK: f32 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timbre {
    Sine,
    Chirp,
    Square,
    AmTone,
    NoiseBurst,
}

impl Timbre {
    pub const ALL: [Timbre; 5] = [
        Timbre::Sine,
        Timbre::Chirp,
        Timbre::Square,
        Timbre::AmTone,
        Timbre::NoiseBurst,
    ];
}

/// A sound class with its caption fragment and materialized clips.
#[derive(Clone, Debug, PartialEq)]
pub struct SoundBankEntry {
    pub label: String,
    pub description: String,
    pub clips: Vec<AudioClip>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankLabel {
    pub label: String,
    pub description: String,
    pub n_clips: usize,
}

#[derive(Clone, Debug)]
enum Source {
    Builtin { seed: u64 },
    Files { dir: PathBuf, clips: Vec<Vec<PathBuf>> },
}

/// Atomic sound bank. Clips are rendered or loaded on demand, so a full
/// 50 x 40 bank never has to sit in memory at once.
#[derive(Clone, Debug)]
pub struct SoundBank {
    pub sample_rate: u32,
    pub peak: f32,
    labels: Vec<BankLabel>,
    source: Source,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and a path of indices.
pub(crate) fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

impl SoundBank {
    pub fn builtin(n_labels: usize, clips_per_label: usize, sample_rate: u32, seed: u64) -> Result<Self> {
        if n_labels < 2 {
            return Err(Error::InvalidArgument(format!(
                "a sound bank needs at least 2 labels, got {n_labels}"
            )));
        }
        if clips_per_label == 0 {
            return Err(Error::InvalidArgument("clips_per_label must be >= 1".into()));
        }
        let labels = (0..n_labels)
            .map(|l| {
                let label = format!("tone_{l:02}");
                BankLabel {
                    description: format!("{label} sounding"),
                    label,
                    n_clips: clips_per_label,
                }
            })
            .collect();
        Ok(SoundBank {
            sample_rate,
            peak: DEFAULT_PEAK,
            labels,
            source: Source::Builtin { seed },
        })
    }

    /// Parse `builtin`, `builtin:<labels>x<clips>` or `esc50:<dir>`.
    pub fn from_spec(spec: &str, sample_rate: u32, seed: u64) -> Result<Self> {
        if spec == "builtin" {
            return Self::builtin(50, 40, sample_rate, seed);
        }
        if let Some(dims) = spec.strip_prefix("builtin:") {
            let (a, b) = dims
                .split_once('x')
                .ok_or_else(|| Error::InvalidArgument(format!("bad bank spec `{spec}`")))?;
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad bank spec `{spec}`")))
            };
            return Self::builtin(parse(a)?, parse(b)?, sample_rate, seed);
        }
        if let Some(dir) = spec.strip_prefix("esc50:") {
            return Self::esc50(dir, sample_rate);
        }
        Err(Error::InvalidArgument(format!(
            "unknown bank `{spec}` (expected builtin, builtin:<L>x<C> or esc50:<dir>)"
        )))
    }

    /// Canonical spec string, recorded in manifests.
    pub fn spec_string(&self) -> String {
        match &self.source {
            Source::Builtin { .. } => {
                format!("builtin:{}x{}", self.labels.len(), self.labels[0].n_clips)
            }
            Source::Files { dir, .. } => format!("esc50:{}", dir.display()),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self.source {
            Source::Builtin { seed } => Some(seed),
            Source::Files { .. } => None,
        }
    }

    /// Load an ESC-50 style directory: `<fold>-<id>-<take>-<class>.wav` files
    /// (in `audio/` or the directory itself) plus a label CSV with `target`
    /// and `category` columns (`meta/esc50.csv` or `labels.csv`).
    pub fn esc50(dir: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let dir = dir.as_ref();
        let csv_path = [dir.join("meta").join("esc50.csv"), dir.join("labels.csv")]
            .into_iter()
            .find(|p| p.exists())
            .ok_or_else(|| Error::InvalidArgument(format!("no label CSV under {}", dir.display())))?;
        let mut names: BTreeMap<u32, String> = BTreeMap::new();
        let mut rdr = csv::Reader::from_path(&csv_path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(name, format!("missing column in {}", csv_path.display())))
        };
        let (ti, ci) = (col("target")?, col("category")?);
        for row in rdr.records() {
            let row = row?;
            let target: u32 = row[ti]
                .parse()
                .map_err(|_| Error::invalid("target", format!("`{}` is not an integer", &row[ti])))?;
            names.entry(target).or_insert_with(|| row[ci].to_string());
        }

        let audio_dir = if dir.join("audio").is_dir() { dir.join("audio") } else { dir.to_path_buf() };
        let mut by_class: BTreeMap<u32, Vec<PathBuf>> = BTreeMap::new();
        let entries = std::fs::read_dir(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&audio_dir, e))?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            if let Some(f) = parse_esc50_filename(name) {
                by_class.entry(f.class).or_default().push(path);
            }
        }
        if by_class.len() < 2 {
            return Err(Error::InsufficientBank(format!(
                "{} holds {} class(es); need at least 2",
                audio_dir.display(),
                by_class.len()
            )));
        }
        let mut labels = Vec::new();
        let mut clips = Vec::new();
        for (class, mut paths) in by_class {
            paths.sort();
            let category = names.get(&class).cloned().unwrap_or_else(|| format!("class_{class}"));
            labels.push(BankLabel {
                description: esc50_description(&category),
                label: category,
                n_clips: paths.len(),
            });
            clips.push(paths);
        }
        Ok(SoundBank {
            sample_rate,
            peak: DEFAULT_PEAK,
            labels,
            source: Source::Files {
                dir: dir.to_path_buf(),
                clips,
            },
        })
    }

    pub fn labels(&self) -> &[BankLabel] {
        &self.labels
    }

    pub fn n_clips(&self) -> usize {
        self.labels.iter().map(|l| l.n_clips).sum()
    }

    /// Render or load clip `clip` of label `label`, peak-normalized, at the bank rate.
    pub fn clip(&self, label: usize, clip: usize) -> Result<AudioClip> {
        let info = self
            .labels
            .get(label)
            .ok_or_else(|| Error::InvalidArgument(format!("label index {label} out of range")))?;
        if clip >= info.n_clips {
            return Err(Error::InvalidArgument(format!(
                "clip index {clip} out of range for {}",
                info.label
            )));
        }
        let id = format!("{}#{clip}", info.label);
        let mut samples = match &self.source {
            Source::Builtin { seed } => {
                render_builtin(label, self.labels.len(), clip, self.sample_rate, *seed)
            }
            Source::Files { clips, .. } => {
                let raw = read_wav(&clips[label][clip])?;
                if raw.sample_rate_hz == self.sample_rate {
                    raw.samples
                } else {
                    let step = raw.sample_rate_hz as f64 / self.sample_rate as f64;
                    let n = (raw.samples.len() as f64 / step).round() as usize;
                    resample_linear(&raw.samples, n, step)
                }
            }
        };
        let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
        if peak > 0.0 {
            let g = self.peak / peak;
            samples.iter_mut().for_each(|s| *s *= g);
        }
        Ok(AudioClip::new(id, self.sample_rate, samples))
    }

    pub fn entries(&self) -> Result<Vec<SoundBankEntry>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(l, info)| {
                Ok(SoundBankEntry {
                    label: info.label.clone(),
                    description: info.description.clone(),
                    clips: (0..info.n_clips).map(|c| self.clip(l, c)).collect::<Result<_>>()?,
                })
            })
            .collect()
    }
}

/// Builtin bank with every clip materialized.
pub fn synth_bank(
    n_labels: usize,
    clips_per_label: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<SoundBankEntry>> {
    SoundBank::builtin(n_labels, clips_per_label, sample_rate, seed)?.entries()
}

/// Fundamental of a label: log-spaced between 150 Hz and 5 kHz (capped below Nyquist).
fn label_frequency(label: usize, n_labels: usize, sample_rate: u32) -> f64 {
    let hi = 5000f64.min(sample_rate as f64 * 0.3);
    let lo = 150f64.min(hi / 2.0);
    let t = label as f64 / (n_labels - 1).max(1) as f64;
    lo * (hi / lo).powf(t)
}

fn render_builtin(label: usize, n_labels: usize, clip: usize, sr: u32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[label as u64, clip as u64]));
    let timbre = Timbre::ALL[label % Timbre::ALL.len()];
    let f0 = label_frequency(label, n_labels, sr) * rng.gen_range(0.96..1.04);
    let srf = sr as f64;
    let n = (ATOMIC_SECONDS * srf).round() as usize;
    let nyq = srf / 2.0;
    let mut out: Vec<f64> = match timbre {
        Timbre::Sine => (0..n).map(|i| (2.0 * PI * f0 * i as f64 / srf).sin()).collect(),
        Timbre::Chirp => {
            let up = rng.gen_bool(0.5);
            let (fa, fb) = if up { (f0, (f0 * 1.5).min(nyq * 0.9)) } else { ((f0 * 1.5).min(nyq * 0.9), f0) };
            let dur = ATOMIC_SECONDS;
            (0..n)
                .map(|i| {
                    let t = i as f64 / srf;
                    (2.0 * PI * (fa * t + (fb - fa) * t * t / (2.0 * dur))).sin()
                })
                .collect()
        }
        Timbre::Square => (0..n)
            .map(|i| {
                let t = i as f64 / srf;
                (1..=15)
                    .step_by(2)
                    .filter(|&k| k as f64 * f0 < nyq)
                    .map(|k| (2.0 * PI * k as f64 * f0 * t).sin() / k as f64)
                    .sum()
            })
            .collect(),
        Timbre::AmTone => {
            let rate = rng.gen_range(3.0..7.0);
            (0..n)
                .map(|i| {
                    let t = i as f64 / srf;
                    (0.55 + 0.45 * (2.0 * PI * rate * t).sin()) * (2.0 * PI * f0 * t).sin()
                })
                .collect()
        }
        Timbre::NoiseBurst => {
            // RBJ band-pass biquad around f0, gated into bursts
            let w0 = 2.0 * PI * f0.min(nyq * 0.9) / srf;
            let q = 4.0;
            let alpha = w0.sin() / (2.0 * q);
            let a0 = 1.0 + alpha;
            let (b0, b2) = (alpha / a0, -alpha / a0);
            let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
            let period = rng.gen_range(0.25..0.45);
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            (0..n)
                .map(|i| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
                    x2 = x1;
                    x1 = x;
                    y2 = y1;
                    y1 = y;
                    let phase = (i as f64 / srf / period).fract();
                    if phase < 0.6 { y } else { 0.1 * y }
                })
                .collect()
        }
    };
    let attack = (0.02 * srf) as usize;
    let release = (0.05 * srf) as usize;
    for (i, s) in out.iter_mut().enumerate() {
        let a = if i < attack { i as f64 / attack as f64 } else { 1.0 };
        let r = if i + release > n { (n - i) as f64 / release as f64 } else { 1.0 };
        *s *= a.min(r);
    }
    out.into_iter().map(|s| s as f32).collect()
}
