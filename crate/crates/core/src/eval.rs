//! Recall@k retrieval evaluation on original and order-corrupted test subsets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::audio::FrameFeatures;
use crate::corpus::{CaptionAnnotation, DatasetManifest, Record, Split};
use crate::cue::CueLexicon;
use crate::error::{Error, Result};
use crate::plot::BarChart;
use crate::scalar::{dot, Scalar};
use crate::train::{Checkpoint, Encoder};
use crate::transform::{BatchTransform, RepMode};

pub const KS: [usize; 3] = [1, 5, 10];

/// Percentage of queries whose top-`k` gallery items (descending similarity,
/// ties broken by lower gallery index) contain a relevant item.
///
/// `sim` is row-major `relevance.len() x n_gallery`.
pub fn recall_at_k<S: Scalar>(sim: &[S], n_gallery: usize, relevance: &[Vec<usize>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if sim.len() != relevance.len() * n_gallery {
        return Err(Error::Shape(format!(
            "{} similarities for {} queries x {n_gallery} items",
            sim.len(),
            relevance.len()
        )));
    }
    if relevance.is_empty() {
        return Err(Error::Empty("query set".into()));
    }
    let mut hits = 0usize;
    for (q, rel) in relevance.iter().enumerate() {
        if rel.is_empty() {
            return Err(Error::Empty(format!("relevance set of query {q}")));
        }
        let row = &sim[q * n_gallery..(q + 1) * n_gallery];
        let hit = rel.iter().any(|&r| {
            // rank = number of items ordered strictly ahead of r
            let s = row[r];
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > s || (v == s && j < r))
                .count();
            ahead < k
        });
        hits += usize::from(hit);
    }
    Ok(100.0 * hits as f64 / relevance.len() as f64)
}

/// A gallery of clips and captions plus the queries to issue against it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrievalTask {
    pub audio_ids: Vec<String>,
    pub captions: Vec<String>,
    /// Index into `audio_ids` of each caption's clip.
    pub caption_audio: Vec<usize>,
    /// Captions used as text queries.
    pub t2a_queries: Vec<usize>,
    /// Clips used as audio queries.
    pub a2t_queries: Vec<usize>,
}

impl RetrievalTask {
    /// Every caption and every clip of the records is a query.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a Record>) -> Self {
        let mut t = RetrievalTask::default();
        for r in records {
            t.push_record(r, r.captions.iter().map(|c| (c.text.clone(), true)));
        }
        t.a2t_queries = (0..t.audio_ids.len()).collect();
        t
    }

    fn push_record(&mut self, r: &Record, captions: impl Iterator<Item = (String, bool)>) {
        let a = self.audio_ids.len();
        self.audio_ids.push(r.id.clone());
        for (text, is_query) in captions {
            if is_query {
                self.t2a_queries.push(self.captions.len());
            }
            self.captions.push(text);
            self.caption_audio.push(a);
        }
    }
}

/// R@1, R@5, R@10 in both directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recalls {
    pub t2a: [f64; 3],
    pub a2t: [f64; 3],
}

/// Embed a task with one encoder and score both directions.
pub fn score_task(enc: &Encoder<'_>, task: &RetrievalTask, feats: &BTreeMap<String, FrameFeatures>) -> Result<Recalls> {
    if task.t2a_queries.is_empty() || task.a2t_queries.is_empty() {
        return Err(Error::Empty("retrieval task without queries".into()));
    }
    let audio: Vec<Vec<f64>> = task
        .audio_ids
        .iter()
        .map(|id| {
            let f = feats
                .get(id)
                .ok_or_else(|| Error::invalid("features", format!("no features for record `{id}`")))?;
            enc.audio(f)
        })
        .collect::<Result<_>>()?;
    let texts: Vec<Vec<f64>> = task.captions.iter().map(|c| enc.text(c)).collect::<Result<_>>()?;

    let mut sim = Vec::with_capacity(task.t2a_queries.len() * audio.len());
    for &q in &task.t2a_queries {
        sim.extend(audio.iter().map(|a| dot(&texts[q], a)));
    }
    let rel: Vec<Vec<usize>> = task.t2a_queries.iter().map(|&q| vec![task.caption_audio[q]]).collect();
    let mut t2a = [0.0; 3];
    for (out, k) in t2a.iter_mut().zip(KS) {
        *out = recall_at_k(&sim, audio.len(), &rel, k)?;
    }

    let mut sim = Vec::with_capacity(task.a2t_queries.len() * texts.len());
    for &a in &task.a2t_queries {
        sim.extend(texts.iter().map(|t| dot(&audio[a], t)));
    }
    let rel: Vec<Vec<usize>> = task
        .a2t_queries
        .iter()
        .map(|&a| (0..texts.len()).filter(|&c| task.caption_audio[c] == a).collect())
        .collect();
    let mut a2t = [0.0; 3];
    for (out, k) in a2t.iter_mut().zip(KS) {
        *out = recall_at_k(&sim, texts.len(), &rel, k)?;
    }
    Ok(Recalls { t2a, a2t })
}

/// Test subsets. `Test^t` keeps the whole test gallery and queries with the
/// transformed captions; `TempTest^t` restricts both to records with at least
/// one transformable caption and is paired with `TempTest[t]`, the same
/// records and queries before transformation.
pub fn build_subsets(test: &[&Record], lex: &CueLexicon, rep_mode: RepMode) -> Result<Vec<(String, RetrievalTask)>> {
    if test.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    let mut out = vec![("Test".to_string(), RetrievalTask::from_records(test.iter().copied()))];
    let temporal: Vec<&Record> = test
        .iter()
        .copied()
        .filter(|r| r.captions.iter().any(CaptionAnnotation::has_ordered_cue))
        .collect();
    if !temporal.is_empty() {
        out.push(("TempTest".into(), RetrievalTask::from_records(temporal.iter().copied())));
    }
    for tf in [BatchTransform::Rev, BatchTransform::Rep(rep_mode)] {
        let name = tf.suffix();
        let rewrite = |r: &Record| -> Result<Vec<(String, bool)>> {
            r.captions
                .iter()
                .map(|c| {
                    if tf.applicable(c) {
                        Ok((tf.apply(c, lex)?.text, true))
                    } else {
                        Ok((c.text.clone(), false))
                    }
                })
                .collect()
        };
        let mut derived_all = RetrievalTask::default();
        let mut derived = RetrievalTask::default();
        let mut paired = RetrievalTask::default();
        for r in test {
            let caps = rewrite(r)?;
            let any = caps.iter().any(|c| c.1);
            if any {
                derived_all.a2t_queries.push(derived_all.audio_ids.len());
                derived.a2t_queries.push(derived.audio_ids.len());
                paired.a2t_queries.push(paired.audio_ids.len());
                derived.push_record(r, caps.clone().into_iter());
                paired.push_record(r, r.captions.iter().zip(&caps).map(|(c, d)| (c.text.clone(), d.1)));
            }
            derived_all.push_record(r, caps.into_iter());
        }
        if derived.audio_ids.is_empty() {
            continue;
        }
        out.push((format!("Test^{name}"), derived_all));
        out.push((format!("TempTest[{name}]"), paired));
        out.push((format!("TempTest^{name}"), derived));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "T->A")]
    TextToAudio,
    #[serde(rename = "A->T")]
    AudioToText,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::TextToAudio, Direction::AudioToText];

    pub fn name(self) -> &'static str {
        match self {
            Direction::TextToAudio => "T->A",
            Direction::AudioToText => "A->T",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub subset: String,
    pub direction: Direction,
    pub k: usize,
    pub n_queries: usize,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

/// R@1 difference between an original subset and its corrupted counterpart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub transform: String,
    pub base: String,
    pub derived: String,
    pub direction: Direction,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub seeds: Vec<u64>,
    pub rep_mode: RepMode,
    pub notes: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub gaps: Vec<Gap>,
}

pub const REPORT_NOTES: [&str; 3] = [
    "ties in similarity are broken by lower gallery index",
    "Test^t/TempTest^t query with transformed captions only; untransformable captions stay in the gallery unchanged",
    "TempTest[t] is the untransformed counterpart of TempTest^t over the same records and queries",
];

impl EvalReport {
    pub fn get(&self, subset: &str, direction: Direction, k: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.subset == subset && r.direction == direction && r.k == k)
    }

    pub fn mean_r1(&self, subset: &str, direction: Direction) -> Option<f64> {
        self.get(subset, direction, 1).map(|r| r.mean)
    }

    pub fn gap(&self, derived: &str, direction: Direction) -> Option<f64> {
        self.gaps
            .iter()
            .find(|g| g.derived == derived && g.direction == direction)
            .map(|g| g.delta)
    }

    /// Long-format CSV: one line per (subset, direction, k).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string(), "subset".into(), "direction".into(), "k".into(), "n_queries".into()];
        header.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        header.push("mean".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut line = vec![
                self.label.clone(),
                r.subset.clone(),
                r.direction.name().to_string(),
                r.k.to_string(),
                r.n_queries.to_string(),
            ];
            line.extend(r.per_seed.iter().map(|v| format!("{v:.2}")));
            line.push(format!("{:.2}", r.mean));
            w.write_record(&line)?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))
    }

    pub fn write_gaps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "transform", "base", "derived", "direction", "delta_R@1"])?;
        for g in &self.gaps {
            w.write_record([
                self.label.as_str(),
                &g.transform,
                &g.base,
                &g.derived,
                g.direction.name(),
                &format!("{:.2}", g.delta),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))
    }

    /// Human-readable table of mean R@k per subset, plus gaps and notes.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} (seeds {:?}, rep mode {})", self.label, self.seeds, self.rep_mode);
        for n in &self.notes {
            let _ = writeln!(s, "# note: {n}");
        }
        let _ = writeln!(
            s,
            "{:<18} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "subset", "T2A@1", "T2A@5", "T2A@10", "A2T@1", "A2T@5", "A2T@10"
        );
        let mut subsets: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !subsets.contains(&r.subset.as_str()) {
                subsets.push(&r.subset);
            }
        }
        for sub in subsets {
            let _ = write!(s, "{sub:<18}");
            for d in Direction::ALL {
                for k in KS {
                    match self.get(sub, d, k) {
                        Some(r) => {
                            let _ = write!(s, " {:>7.2}", r.mean);
                        }
                        None => {
                            let _ = write!(s, " {:>7}", "-");
                        }
                    }
                }
            }
            s.push('\n');
        }
        for g in &self.gaps {
            let _ = writeln!(s, "gap {} {} - {} ({}) = {:.2}", g.transform, g.base, g.derived, g.direction.name(), g.delta);
        }
        s
    }

    /// Grouped bar chart of R@1 gaps.
    pub fn gaps_svg(&self) -> String {
        let mut chart = BarChart::new(
            format!("Temporal gap in R@1 ({})", self.label),
            "R@1 difference (points)",
            Direction::ALL.iter().map(|d| d.name().to_string()).collect(),
        );
        let mut seen: Vec<String> = Vec::new();
        for g in &self.gaps {
            let name = format!("{} - {}", g.base, g.derived);
            if seen.contains(&name) {
                continue;
            }
            seen.push(name.clone());
            let values = Direction::ALL
                .iter()
                .map(|&d| self.gap(&g.derived, d).unwrap_or(0.0))
                .collect();
            chart.push_group(name, values);
        }
        chart.to_svg()
    }
}

/// Recompute R@1 gaps from a report's rows.
pub fn temporal_gap(report: &EvalReport) -> Vec<Gap> {
    let mut out = Vec::new();
    for t in ["rev", "rep"] {
        for (base, derived) in [("Test".to_string(), format!("Test^{t}")), (format!("TempTest[{t}]"), format!("TempTest^{t}"))] {
            for d in Direction::ALL {
                if let (Some(b), Some(x)) = (report.mean_r1(&base, d), report.mean_r1(&derived, d)) {
                    out.push(Gap {
                        transform: t.to_string(),
                        base: base.clone(),
                        derived: derived.clone(),
                        direction: d,
                        delta: b - x,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub label: String,
    pub rep_mode: RepMode,
    /// Subsets to report; `None` means all.
    pub subsets: Option<Vec<String>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            label: "eval".into(),
            rep_mode: RepMode::PaperCompat,
            subsets: None,
        }
    }
}

/// Evaluate every checkpoint on the test split; values are averaged over checkpoints.
pub fn evaluate(
    checkpoints: &[Checkpoint],
    manifest: &DatasetManifest,
    feats: &BTreeMap<String, FrameFeatures>,
    lex: &CueLexicon,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let first = checkpoints.first().ok_or_else(|| Error::Empty("checkpoint list".into()))?;
    if checkpoints
        .iter()
        .any(|c| c.vocab != first.vocab || c.model != first.model || c.config != first.config)
    {
        return Err(Error::InvalidArgument("checkpoints do not share vocabulary and config".into()));
    }
    let test: Vec<&Record> = manifest.split(Split::Test).collect();
    let mut subsets = build_subsets(&test, lex, cfg.rep_mode)?;
    if let Some(wanted) = &cfg.subsets {
        for w in wanted {
            if !subsets.iter().any(|(n, _)| n == w) {
                return Err(Error::InvalidArgument(format!("unknown or empty subset `{w}`")));
            }
        }
        subsets.retain(|(n, _)| wanted.contains(n));
    }
    let per_ck: Vec<Vec<Recalls>> = checkpoints
        .iter()
        .map(|ck| {
            let enc = ck.encoder(lex);
            subsets.iter().map(|(_, t)| score_task(&enc, t, feats)).collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (si, (name, task)) in subsets.iter().enumerate() {
        for d in Direction::ALL {
            for (ki, &k) in KS.iter().enumerate() {
                let per_seed: Vec<f64> = per_ck
                    .iter()
                    .map(|r| match d {
                        Direction::TextToAudio => r[si].t2a[ki],
                        Direction::AudioToText => r[si].a2t[ki],
                    })
                    .collect();
                let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
                rows.push(ReportRow {
                    subset: name.clone(),
                    direction: d,
                    k,
                    n_queries: match d {
                        Direction::TextToAudio => task.t2a_queries.len(),
                        Direction::AudioToText => task.a2t_queries.len(),
                    },
                    per_seed,
                    mean,
                });
            }
        }
    }
    let mut report = EvalReport {
        label: cfg.label.clone(),
        seeds: checkpoints.iter().map(|c| c.seed).collect(),
        rep_mode: cfg.rep_mode,
        notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
        rows,
        gaps: Vec::new(),
    };
    report.gaps = temporal_gap(&report);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_reversed_identity() {
        let n = 4;
        let eye: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
        let rel: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        assert_eq!(recall_at_k(&eye, n, &rel, 1).unwrap(), 100.0);
        // relevant item ranked last
        let rev: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 0.0 } else { 1.0 }).collect();
        assert_eq!(recall_at_k(&rev, n, &rel, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&rev, n, &rel, 3).unwrap(), 0.0);
        assert_eq!(recall_at_k(&rev, n, &rel, 4).unwrap(), 100.0);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let sim = [0.5, 0.5, 0.5];
        assert_eq!(recall_at_k(&sim, 3, &[vec![0]], 1).unwrap(), 100.0);
        assert_eq!(recall_at_k(&sim, 3, &[vec![2]], 2).unwrap(), 0.0);
        assert_eq!(recall_at_k(&sim, 3, &[vec![2]], 3).unwrap(), 100.0);
    }

    #[test]
    fn errors() {
        assert!(recall_at_k(&[1.0], 1, &[vec![]], 1).is_err());
        assert!(recall_at_k(&[1.0], 1, &[vec![0]], 0).is_err());
        assert!(recall_at_k(&[1.0, 2.0], 1, &[vec![0]], 1).is_err());
    }

    #[test]
    fn gap_arithmetic() {
        let row = |subset: &str, mean: f64| ReportRow {
            subset: subset.into(),
            direction: Direction::TextToAudio,
            k: 1,
            n_queries: 1,
            per_seed: vec![mean],
            mean,
        };
        let report = EvalReport {
            label: "x".into(),
            seeds: vec![0],
            rep_mode: RepMode::PaperCompat,
            notes: vec![],
            rows: vec![row("Test", 69.35), row("Test^rev", 40.55), row("Test^rep", 69.35)],
            gaps: vec![],
        };
        let gaps = temporal_gap(&report);
        assert_eq!(gaps.len(), 2);
        assert!((gaps[0].delta - 28.80).abs() < 1e-9);
        assert_eq!(gaps[1].delta, 0.0);
    }
}
