//! Data model shared by every pipeline and the JSON Lines manifest format.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cue::{detect_cues, Cue, CueClass, CueLexicon};
use crate::error::{Error, Result};

/// Mono waveform with amplitudes in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate_hz: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, sample_rate_hz: u32, samples: Vec<f32>) -> Self {
        AudioClip {
            id: id.into(),
            sample_rate_hz,
            samples,
        }
    }

    pub fn silence(id: impl Into<String>, sample_rate_hz: u32, seconds: f64) -> Self {
        let n = (seconds * sample_rate_hz as f64).round() as usize;
        Self::new(id, sample_rate_hz, vec![0.0; n])
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Clamp every sample into `[-1, 1]`; non-finite values become 0.
    pub fn clip_in_place(&mut self) {
        for s in &mut self.samples {
            *s = if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 };
        }
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// A grounded sound occurrence inside a clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundEvent {
    pub label: String,
    pub onset_s: f64,
    pub offset_s: f64,
}

impl SoundEvent {
    pub fn new(label: impl Into<String>, onset_s: f64, offset_s: f64) -> Self {
        SoundEvent {
            label: label.into(),
            onset_s,
            offset_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset_s.is_finite() && self.onset_s >= 0.0) {
            return Err(Error::invalid("events.onset_s", format!("{} must be >= 0", self.onset_s)));
        }
        if !(self.offset_s.is_finite() && self.offset_s > self.onset_s) {
            return Err(Error::invalid(
                "events.offset_s",
                format!("{} must exceed onset {}", self.offset_s, self.onset_s),
            ));
        }
        Ok(())
    }
}

/// One detected cue inside a caption. `span` is a byte range into the text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CueMatch {
    pub surface: String,
    pub cue: Cue,
    pub class: CueClass,
    pub span: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionAnnotation {
    pub text: String,
    pub cues: Vec<CueMatch>,
    /// Event clauses in text order; two entries iff exactly one future/past cue splits the text.
    pub events_text_order: Vec<String>,
}

impl CaptionAnnotation {
    pub fn annotate(text: &str) -> Self {
        detect_cues(text, &CueLexicon::default())
    }

    /// The single cue of a single-cue future/past caption.
    pub fn single_ordered_cue(&self) -> Option<&CueMatch> {
        match &self.cues[..] {
            [c] if c.class.is_ordered() && self.events_text_order.len() == 2 => Some(c),
            _ => None,
        }
    }

    pub fn has_ordered_cue(&self) -> bool {
        self.cues.iter().any(|c| c.class.is_ordered())
    }

    fn validate(&self) -> Result<()> {
        let mut last_end = 0;
        for c in &self.cues {
            let (s, e) = c.span;
            if s < last_end || s >= e || e > self.text.len() {
                return Err(Error::invalid(
                    "captions.cues.span",
                    format!("span {s}..{e} invalid in {:?}", self.text),
                ));
            }
            if !self.text.is_char_boundary(s) || !self.text.is_char_boundary(e) {
                return Err(Error::invalid("captions.cues.span", "span splits a character"));
            }
            last_end = e;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid("split", format!("`{s}` is not one of train|val|test")))
    }
}

/// Captions may be given as bare strings in hand-written manifests; they are
/// annotated with the default lexicon on load.
#[derive(Deserialize)]
#[serde(untagged)]
enum CaptionRepr {
    Text(String),
    Full(CaptionAnnotation),
}

fn de_captions<'de, D>(d: D) -> std::result::Result<Vec<CaptionAnnotation>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = Vec::<CaptionRepr>::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|c| match c {
            CaptionRepr::Text(t) => CaptionAnnotation::annotate(&t),
            CaptionRepr::Full(a) => a,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    /// Relative to the manifest root. Absent for records rendered from an inline recipe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    pub split: Split,
    #[serde(deserialize_with = "de_captions")]
    pub captions: Vec<CaptionAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<SoundEvent>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Record {
    pub fn new(id: impl Into<String>, split: Split, captions: Vec<CaptionAnnotation>) -> Self {
        Record {
            id: id.into(),
            audio_path: None,
            split,
            captions,
            events: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("id", "must be non-empty"));
        }
        if self.captions.is_empty() {
            return Err(Error::invalid(
                "captions",
                format!("record `{}` has no caption", self.id),
            ));
        }
        for c in &self.captions {
            c.validate()?;
        }
        for e in self.events.iter().flatten() {
            e.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = DatasetManifest { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Parse JSON Lines text. Blank lines are skipped; line numbers are 1-based.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        DatasetManifest::new(records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Resolve a record's audio path against the manifest root.
    pub fn audio_path(record: &Record, root: &Path) -> Option<PathBuf> {
        record.audio_path.as_ref().map(|p| root.join(p))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    DatasetManifest::new(records)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in &m.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Weights and temperature of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax temperature of the audio-text term.
    pub tau: f64,
    /// Weight of the text-text term.
    pub lambda: f64,
    /// Hinge margin of the text-text term.
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            lambda: 10.0,
            margin: 0.2,
        }
    }
}

impl LossConfig {
    /// Audio-text term only.
    pub fn audio_text_only(tau: f64) -> Self {
        LossConfig {
            tau,
            lambda: 0.0,
            margin: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be > 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be >= 0"));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("margin", "must be >= 0"));
        }
        Ok(())
    }
}
