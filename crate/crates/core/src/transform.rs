//! Rule-based caption rewrites: rev, rep, cue-balancing uniformization and
//! positive/negative generation for the text-text loss.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionAnnotation, DatasetManifest};
use crate::cue::{detect_cues, trim_clause, Cue, CueClass, CueLexicon};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepMode {
    /// after→before, before→after, then→before, followed by→preceded by, preceded by→followed by.
    PaperCompat,
    /// As `PaperCompat` but then→after, so every replacement flips the order.
    Corrected,
}

impl FromStr for RepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_compat" | "paper-compat" | "compat" => Ok(RepMode::PaperCompat),
            "corrected" => Ok(RepMode::Corrected),
            _ => Err(Error::InvalidArgument(format!("unknown rep mode `{s}`"))),
        }
    }
}

impl fmt::Display for RepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepMode::PaperCompat => "paper_compat",
            RepMode::Corrected => "corrected",
        })
    }
}

/// Replacement table used by `rep`.
#[derive(Clone, Debug, PartialEq)]
pub struct RepMap {
    pub mapping: BTreeMap<Cue, Cue>,
    pub mode: RepMode,
}

impl RepMap {
    pub fn new(mode: RepMode) -> Self {
        let then_to = match mode {
            RepMode::PaperCompat => Cue::Before,
            RepMode::Corrected => Cue::After,
        };
        let mapping = [
            (Cue::After, Cue::Before),
            (Cue::Before, Cue::After),
            (Cue::Then, then_to),
            (Cue::FollowedBy, Cue::PrecededBy),
            (Cue::PrecededBy, Cue::FollowedBy),
        ]
        .into_iter()
        .collect();
        RepMap { mapping, mode }
    }

    pub fn get(&self, cue: Cue) -> Option<Cue> {
        self.mapping.get(&cue).copied()
    }
}

impl Default for RepMap {
    fn default() -> Self {
        RepMap::new(RepMode::PaperCompat)
    }
}

/// Lowercase the leading character unless the first word looks like an acronym.
fn lower_initial(clause: &str) -> String {
    let mut chars = clause.chars();
    let Some(first) = chars.next() else {
        return String::new();
    };
    let first_word: String = clause.split_whitespace().next().unwrap_or("").to_string();
    let acronym = first_word.chars().count() > 1
        && first_word.chars().filter(|c| c.is_alphabetic()).all(|c| c.is_uppercase());
    if acronym {
        clause.to_string()
    } else {
        first.to_lowercase().chain(chars).collect()
    }
}

pub(crate) fn sentence_case(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn terminal_punct(text: &str) -> &str {
    let trimmed = text.trim_end();
    let body = trimmed.trim_end_matches(['.', '!', '?']);
    &trimmed[body.len()..]
}

/// `<first> <cue> <second>` in sentence case.
pub fn join_clauses(first: &str, cue_surface: &str, second: &str) -> String {
    let text = format!(
        "{} {} {}",
        lower_initial(trim_clause(first)),
        cue_surface.to_lowercase(),
        lower_initial(trim_clause(second))
    );
    sentence_case(&text)
}

fn rewrite(
    c: &CaptionAnnotation,
    cue_surface: &str,
    swap: bool,
    lex: &CueLexicon,
) -> CaptionAnnotation {
    let (a, b) = (&c.events_text_order[0], &c.events_text_order[1]);
    let (first, second) = if swap { (b, a) } else { (a, b) };
    let mut text = join_clauses(first, cue_surface, second);
    text.push_str(terminal_punct(&c.text));
    detect_cues(&text, lex)
}

fn ordered_cue(c: &CaptionAnnotation) -> Option<&crate::corpus::CueMatch> {
    let mut ordered = c.cues.iter().filter(|m| m.class.is_ordered());
    match (ordered.next(), ordered.next()) {
        (Some(m), None) if c.events_text_order.len() == 2 => Some(m),
        _ => None,
    }
}

pub fn rev_applicable(c: &CaptionAnnotation) -> bool {
    ordered_cue(c).is_some()
}

/// Swap the two event clauses and keep the cue.
pub fn rev(c: &CaptionAnnotation, lex: &CueLexicon) -> Result<CaptionAnnotation> {
    let cue = ordered_cue(c).ok_or_else(|| {
        Error::NotApplicable(format!("rev needs exactly one future/past cue: {:?}", c.text))
    })?;
    Ok(rewrite(c, &cue.surface, true, lex))
}

pub fn rep_applicable(c: &CaptionAnnotation, map: &RepMap) -> bool {
    c.single_ordered_cue()
        .is_some_and(|m| map.get(m.cue).is_some())
}

/// Replace the single cue with its opposite and keep clause positions.
pub fn rep(c: &CaptionAnnotation, map: &RepMap, lex: &CueLexicon) -> Result<CaptionAnnotation> {
    let m = c.single_ordered_cue().ok_or_else(|| {
        Error::NotApplicable(format!("rep needs exactly one cue: {:?}", c.text))
    })?;
    let target = map
        .get(m.cue)
        .ok_or_else(|| Error::NotApplicable(format!("cue {} has no replacement", m.cue)))?;
    let text = format!(
        "{}{}{}",
        &c.text[..m.span.0],
        target.surface(),
        &c.text[m.span.1..]
    );
    Ok(detect_cues(&sentence_case(&text), lex))
}

/// Rewrite a single-cue caption so that it uses `target` while keeping the
/// acoustic order: same-class targets replace in place, opposite-class targets
/// also swap the clauses.
pub fn retarget(
    c: &CaptionAnnotation,
    target: Cue,
    lex: &CueLexicon,
) -> Result<CaptionAnnotation> {
    let m = c
        .single_ordered_cue()
        .ok_or_else(|| Error::NotApplicable(format!("not a single-cue caption: {:?}", c.text)))?;
    let tclass = lex.class_of(target);
    if !tclass.is_ordered() {
        return Err(Error::NotApplicable(format!("{target} carries no order")));
    }
    if target == m.cue {
        return Ok(c.clone());
    }
    Ok(rewrite(c, target.surface(), tclass != m.class, lex))
}

/// Cue-balancing rewrite of every single-cue future/past caption.
///
/// Captions are visited in a seeded random order; each one is moved to the
/// currently least-frequent ordered cue (ties go to the earlier cue in enum
/// order). Joint-cue, multi-cue and cue-free captions are left untouched.
pub fn uniformize(manifest: &DatasetManifest, lex: &CueLexicon, seed: u64) -> DatasetManifest {
    let mut out = manifest.clone();
    let mut counts: BTreeMap<Cue, i64> = Cue::ORDERED.into_iter().map(|c| (c, 0)).collect();
    let mut slots = Vec::new();
    for (ri, rec) in out.records.iter_mut().enumerate() {
        for (ci, cap) in rec.captions.iter_mut().enumerate() {
            *cap = detect_cues(&cap.text, lex);
            for m in &cap.cues {
                if let Some(n) = counts.get_mut(&m.cue) {
                    *n += 1;
                }
            }
            if cap.single_ordered_cue().is_some() {
                slots.push((ri, ci));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);

    let mut rewritten: BTreeMap<usize, usize> = BTreeMap::new();
    for (ri, ci) in slots {
        let cap = &out.records[ri].captions[ci];
        let source = cap.single_ordered_cue().unwrap().cue;
        *counts.get_mut(&source).unwrap() -= 1;
        let target = Cue::ORDERED
            .into_iter()
            .filter(|c| lex.class_of(*c).is_ordered())
            .min_by_key(|c| (counts[c], c.index()))
            .unwrap();
        *counts.get_mut(&target).unwrap() += 1;
        if target != source {
            let new = retarget(cap, target, lex).expect("single-cue caption");
            out.records[ri].captions[ci] = new;
            *rewritten.entry(ri).or_insert(0) += 1;
        }
    }
    for (ri, rec) in out.records.iter_mut().enumerate() {
        rec.meta.insert("transform".into(), "uni".into());
        rec.meta
            .insert("uni_rewrites".into(), rewritten.get(&ri).copied().unwrap_or(0).to_string());
    }
    out
}

/// Which caption transform to apply in batch mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchTransform {
    Rev,
    Rep(RepMode),
}

impl BatchTransform {
    pub fn suffix(self) -> &'static str {
        match self {
            BatchTransform::Rev => "rev",
            BatchTransform::Rep(_) => "rep",
        }
    }

    pub fn applicable(self, c: &CaptionAnnotation) -> bool {
        match self {
            BatchTransform::Rev => rev_applicable(c),
            BatchTransform::Rep(mode) => rep_applicable(c, &RepMap::new(mode)),
        }
    }

    pub fn apply(self, c: &CaptionAnnotation, lex: &CueLexicon) -> Result<CaptionAnnotation> {
        match self {
            BatchTransform::Rev => rev(c, lex),
            BatchTransform::Rep(mode) => rep(c, &RepMap::new(mode), lex),
        }
    }
}

/// Apply rev/rep to every applicable caption; other captions are kept.
/// Provenance goes into record meta (`transform`, `transformed_captions`).
pub fn transform_manifest(
    manifest: &DatasetManifest,
    t: BatchTransform,
    lex: &CueLexicon,
) -> DatasetManifest {
    let mut out = manifest.clone();
    for rec in &mut out.records {
        let mut changed = Vec::new();
        for (i, cap) in rec.captions.iter_mut().enumerate() {
            let ann = detect_cues(&cap.text, lex);
            if t.applicable(&ann) {
                *cap = t.apply(&ann, lex).expect("checked applicable");
                changed.push(i.to_string());
            }
        }
        rec.meta.insert("transform".into(), t.suffix().into());
        if let BatchTransform::Rep(mode) = t {
            rec.meta.insert("rep_mode".into(), mode.to_string());
        }
        rec.meta.insert("transformed_captions".into(), changed.join(","));
    }
    out
}

/// Anchor caption with two same-order and two reversed-order rewrites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveTextSet {
    pub anchor: CaptionAnnotation,
    pub positives: [CaptionAnnotation; 2],
    pub negatives: [CaptionAnnotation; 2],
}

const SYNONYM_PREFERENCE: [Cue; 5] = [
    Cue::Before,
    Cue::FollowedBy,
    Cue::Then,
    Cue::PrecededBy,
    Cue::After,
];
const OPPOSITE_PREFERENCE: [Cue; 5] = [
    Cue::After,
    Cue::Before,
    Cue::PrecededBy,
    Cue::FollowedBy,
    Cue::Then,
];

/// Positives: same-class synonym in place, and swapped clauses with an
/// opposite-class cue. Negatives: opposite-class cue in place, and swapped
/// clauses with the original cue.
pub fn make_contrastive_set(c: &CaptionAnnotation, lex: &CueLexicon) -> Result<ContrastiveTextSet> {
    let m = c.single_ordered_cue().ok_or_else(|| {
        Error::NotApplicable(format!("contrastive set needs a single future/past cue: {:?}", c.text))
    })?;
    let class = m.class;
    let opposite = match class {
        CueClass::Future => CueClass::Past,
        _ => CueClass::Future,
    };
    let synonym = SYNONYM_PREFERENCE
        .into_iter()
        .find(|&q| q != m.cue && lex.class_of(q) == class)
        .ok_or_else(|| Error::NotApplicable(format!("no synonym for {}", m.cue)))?;
    let flipped = OPPOSITE_PREFERENCE
        .into_iter()
        .find(|&q| lex.class_of(q) == opposite)
        .ok_or_else(|| Error::NotApplicable(format!("no opposite for {}", m.cue)))?;
    Ok(ContrastiveTextSet {
        anchor: c.clone(),
        positives: [
            rewrite(c, synonym.surface(), false, lex),
            rewrite(c, flipped.surface(), true, lex),
        ],
        negatives: [
            rewrite(c, flipped.surface(), false, lex),
            rewrite(c, &m.surface, true, lex),
        ],
    })
}
