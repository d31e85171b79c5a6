//! Temporal-cue lexicon, detection, classification and corpus histograms.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionAnnotation, CueMatch, DatasetManifest, Split};
use crate::error::{Error, Result};

/// Canonical temporal cue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Cue {
    FollowedBy,
    Then,
    Before,
    After,
    PrecededBy,
    As,
    While,
    During,
    And,
}

impl Cue {
    pub const ALL: [Cue; 9] = [
        Cue::FollowedBy,
        Cue::Then,
        Cue::Before,
        Cue::After,
        Cue::PrecededBy,
        Cue::As,
        Cue::While,
        Cue::During,
        Cue::And,
    ];

    /// The five order-bearing cues, in canonical enum order.
    pub const ORDERED: [Cue; 5] = [
        Cue::FollowedBy,
        Cue::Then,
        Cue::Before,
        Cue::After,
        Cue::PrecededBy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Surface form written when a rewrite introduces this cue.
    pub fn surface(self) -> &'static str {
        match self {
            Cue::FollowedBy => "followed by",
            Cue::Then => "then",
            Cue::Before => "before",
            Cue::After => "after",
            Cue::PrecededBy => "preceded by",
            Cue::As => "as",
            Cue::While => "while",
            Cue::During => "during",
            Cue::And => "and",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cue::FollowedBy => "FOLLOWED_BY",
            Cue::Then => "THEN",
            Cue::Before => "BEFORE",
            Cue::After => "AFTER",
            Cue::PrecededBy => "PRECEDED_BY",
            Cue::As => "AS",
            Cue::While => "WHILE",
            Cue::During => "DURING",
            Cue::And => "AND",
        }
    }

    /// Label used in tables and charts, e.g. "Followed by".
    pub fn display_name(self) -> String {
        let s = self.surface();
        let mut out = s[..1].to_uppercase();
        out.push_str(&s[1..]);
        out
    }
}

impl fmt::Display for Cue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace([' ', '-'], "_");
        Cue::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::UnknownCue(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueClass {
    /// First-mentioned sound happens first.
    Future,
    /// First-mentioned sound happens second.
    Past,
    /// Simultaneous or unordered.
    Joint,
}

impl CueClass {
    pub fn is_ordered(self) -> bool {
        !matches!(self, CueClass::Joint)
    }

    pub fn name(self) -> &'static str {
        match self {
            CueClass::Future => "future",
            CueClass::Past => "past",
            CueClass::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconEntry {
    /// Lowercase words of the surface form.
    pub words: Vec<String>,
    pub cue: Cue,
}

/// Surface forms mapped to canonical cues, plus the class of every cue.
#[derive(Clone, Debug, PartialEq)]
pub struct CueLexicon {
    entries: Vec<LexiconEntry>,
    classes: BTreeMap<Cue, CueClass>,
}

impl Default for CueLexicon {
    fn default() -> Self {
        let surfaces: &[(&str, Cue)] = &[
            ("followed by", Cue::FollowedBy),
            ("and then", Cue::Then),
            ("then", Cue::Then),
            ("before", Cue::Before),
            ("after", Cue::After),
            ("preceded by", Cue::PrecededBy),
            ("proceeded by", Cue::PrecededBy),
            ("as", Cue::As),
            ("while", Cue::While),
            ("whilst", Cue::While),
            ("during", Cue::During),
            ("and", Cue::And),
        ];
        let classes = Cue::ALL
            .into_iter()
            .map(|c| {
                let class = match c {
                    Cue::FollowedBy | Cue::Then | Cue::Before => CueClass::Future,
                    Cue::After | Cue::PrecededBy => CueClass::Past,
                    Cue::As | Cue::While | Cue::During | Cue::And => CueClass::Joint,
                };
                (c, class)
            })
            .collect();
        let mut lex = CueLexicon {
            entries: Vec::new(),
            classes,
        };
        for &(s, c) in surfaces {
            lex.add_surface(s, c);
        }
        lex
    }
}

impl CueLexicon {
    /// Variant that treats BEFORE as a past cue.
    pub fn with_before_as_past() -> Self {
        let mut lex = Self::default();
        lex.set_class(Cue::Before, CueClass::Past);
        lex
    }

    pub fn set_class(&mut self, cue: Cue, class: CueClass) {
        self.classes.insert(cue, class);
    }

    pub fn add_surface(&mut self, surface: &str, cue: Cue) {
        let words = surface
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>();
        if words.is_empty() || self.entries.iter().any(|e| e.words == words) {
            return;
        }
        self.entries.push(LexiconEntry { words, cue });
        // longest match first; stable so insertion order breaks ties
        self.entries.sort_by_key(|e| std::cmp::Reverse(e.words.len()));
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn class_of(&self, cue: Cue) -> CueClass {
        self.classes[&cue]
    }

    /// Multi-word surfaces (`followed by`) as they appear in the lexicon.
    pub fn multiword_surfaces(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.iter().filter(|e| e.words.len() > 1)
    }
}

pub fn classify_cue(cue: Cue, lex: &CueLexicon) -> Result<CueClass> {
    lex.classes
        .get(&cue)
        .copied()
        .ok_or_else(|| Error::UnknownCue(cue.name().to_string()))
}

/// Byte spans of the words in `text`. A word is a run of alphanumerics,
/// apostrophes or underscores.
pub(crate) fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        let is_word = ch.is_alphanumeric() || ch == '\'' || ch == '_';
        match (is_word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

const CLAUSE_TRIM: &[char] = &[',', '.', ';', ':', '!', '?', '"', '\'', '(', ')'];

pub(crate) fn trim_clause(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || CLAUSE_TRIM.contains(&c))
}

/// Detect cues (case-insensitive, whole words, longest match first) and
/// split the caption into two event clauses around its single future/past cue.
pub fn detect_cues(text: &str, lex: &CueLexicon) -> CaptionAnnotation {
    let spans = word_spans(text);
    let words: Vec<String> = spans.iter().map(|&(s, e)| text[s..e].to_lowercase()).collect();
    let mut cues = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let hit = lex.entries.iter().find(|e| {
            let n = e.words.len();
            i + n <= words.len() && words[i..i + n] == e.words[..]
        });
        match hit {
            Some(entry) => {
                let n = entry.words.len();
                let span = (spans[i].0, spans[i + n - 1].1);
                cues.push(CueMatch {
                    surface: text[span.0..span.1].to_string(),
                    cue: entry.cue,
                    class: lex.class_of(entry.cue),
                    span,
                });
                i += n;
            }
            None => i += 1,
        }
    }

    let ordered: Vec<&CueMatch> = cues.iter().filter(|c| c.class.is_ordered()).collect();
    let mut events_text_order = Vec::new();
    if let [only] = ordered[..] {
        let first = trim_clause(&text[..only.span.0]);
        let second = trim_clause(&text[only.span.1..]);
        if !first.is_empty() && !second.is_empty() {
            events_text_order = vec![first.to_string(), second.to_string()];
        }
    }
    CaptionAnnotation {
        text: text.to_string(),
        cues,
        events_text_order,
    }
}

/// Canonical key for an event clause: lowercase, single-spaced, without a
/// leading article or trailing punctuation.
pub fn normalize_event(clause: &str) -> String {
    let lower = trim_clause(clause).to_lowercase();
    let mut words: Vec<&str> = lower.split_whitespace().collect();
    if matches!(words.first(), Some(&("a" | "an" | "the"))) && words.len() > 1 {
        words.remove(0);
    }
    words.join(" ")
}

/// Acoustic order `(first, second)` of a single-cue future/past caption.
pub fn semantic_order(c: &CaptionAnnotation) -> Option<(String, String)> {
    let [cue] = &c.cues[..] else {
        return None;
    };
    let [first, second] = &c.events_text_order[..] else {
        return None;
    };
    let (a, b) = (normalize_event(first), normalize_event(second));
    match cue.class {
        CueClass::Future => Some((a, b)),
        CueClass::Past => Some((b, a)),
        CueClass::Joint => None,
    }
}

/// Cue occurrence counts over a set of captions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueHistogram {
    pub counts: BTreeMap<Cue, u64>,
    pub total_captions: u64,
    /// Captions with at least one detected cue.
    pub total_temporal_captions: u64,
}

impl CueHistogram {
    pub fn empty() -> Self {
        CueHistogram {
            counts: Cue::ALL.into_iter().map(|c| (c, 0)).collect(),
            total_captions: 0,
            total_temporal_captions: 0,
        }
    }

    pub fn count(&self, cue: Cue) -> u64 {
        self.counts.get(&cue).copied().unwrap_or(0)
    }

    pub fn total_occurrences(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn add_caption(&mut self, ann: &CaptionAnnotation) {
        self.total_captions += 1;
        if !ann.cues.is_empty() {
            self.total_temporal_captions += 1;
        }
        for m in &ann.cues {
            *self.counts.entry(m.cue).or_insert(0) += 1;
        }
    }

    /// max/min count over the five ordered cues; infinite if one is absent.
    pub fn ordered_imbalance(&self) -> f64 {
        let counts = Cue::ORDERED.map(|c| self.count(c));
        let max = *counts.iter().max().unwrap() as f64;
        let min = *counts.iter().min().unwrap() as f64;
        if min == 0.0 {
            if max == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            max / min
        }
    }

    /// Writes `cue,class,count,percent`, percent of all cue occurrences.
    pub fn write_csv<W: Write>(&self, lex: &CueLexicon, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cue", "class", "count", "percent"])?;
        let total = self.total_occurrences();
        for cue in Cue::ALL {
            let n = self.count(cue);
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * n as f64 / total as f64
            };
            w.write_record([
                cue.name().to_string(),
                lex.class_of(cue).name().to_string(),
                n.to_string(),
                format!("{pct:.2}"),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

impl Add for &CueHistogram {
    type Output = CueHistogram;

    fn add(self, rhs: &CueHistogram) -> CueHistogram {
        let mut out = self.clone();
        for (cue, n) in &rhs.counts {
            *out.counts.entry(*cue).or_insert(0) += n;
        }
        out.total_captions += rhs.total_captions;
        out.total_temporal_captions += rhs.total_temporal_captions;
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub overall: CueHistogram,
    pub per_split: BTreeMap<Split, CueHistogram>,
}

/// Counts every cue occurrence in every caption, re-detected with `lex`.
pub fn histogram(manifest: &DatasetManifest, lex: &CueLexicon) -> HistogramReport {
    let mut overall = CueHistogram::empty();
    let mut per_split: BTreeMap<Split, CueHistogram> = Split::ALL
        .into_iter()
        .map(|s| (s, CueHistogram::empty()))
        .collect();
    for rec in &manifest.records {
        for cap in &rec.captions {
            let ann = detect_cues(&cap.text, lex);
            overall.add_caption(&ann);
            per_split.get_mut(&rec.split).unwrap().add_caption(&ann);
        }
    }
    HistogramReport { overall, per_split }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> CueLexicon {
        CueLexicon::default()
    }

    #[test]
    fn followed_by_is_one_future_cue() {
        let a = detect_cues("Bird singing followed by dog barking", &lex());
        assert_eq!(a.cues.len(), 1);
        assert_eq!(a.cues[0].cue, Cue::FollowedBy);
        assert_eq!(a.cues[0].class, CueClass::Future);
        assert_eq!(a.events_text_order, vec!["Bird singing", "dog barking"]);
    }

    #[test]
    fn no_cue() {
        let a = detect_cues("Rain falls", &lex());
        assert!(a.cues.is_empty());
        assert!(a.events_text_order.is_empty());
    }

    #[test]
    fn mixed_cues_in_span_order() {
        let a = detect_cues("A motor runs as people speak after a horn", &lex());
        let got: Vec<_> = a.cues.iter().map(|c| (c.cue, c.class)).collect();
        assert_eq!(
            got,
            vec![(Cue::As, CueClass::Joint), (Cue::After, CueClass::Past)]
        );
        assert_eq!(a.events_text_order, vec!["A motor runs as people speak", "a horn"]);
        assert!(semantic_order(&a).is_none());
    }

    #[test]
    fn longest_match_wins() {
        let a = detect_cues("Wind blows preceded by thunder", &lex());
        assert_eq!(a.cues.len(), 1);
        assert_eq!(a.cues[0].cue, Cue::PrecededBy);
        let a = detect_cues("A car passes, followed by a horn", &lex());
        assert_eq!(a.cues.len(), 1);
        assert_eq!(a.cues[0].surface, "followed by");
        let a = detect_cues("Dogs bark and then a man yells", &lex());
        assert_eq!(a.cues.len(), 1);
        assert_eq!(a.cues[0].cue, Cue::Then);
    }

    #[test]
    fn proceeded_by_spelling() {
        let a = detect_cues("Speech proceeded by a bell", &lex());
        assert_eq!(a.cues[0].cue, Cue::PrecededBy);
    }

    #[test]
    fn word_boundaries() {
        // "thence", "aftermath", "bass" contain cue substrings
        let a = detect_cues("Thence an aftermath of bass", &lex());
        assert!(a.cues.is_empty());
    }

    #[test]
    fn classify() {
        let l = lex();
        assert_eq!(classify_cue(Cue::FollowedBy, &l).unwrap(), CueClass::Future);
        assert_eq!(classify_cue(Cue::After, &l).unwrap(), CueClass::Past);
        assert_eq!(classify_cue(Cue::While, &l).unwrap(), CueClass::Joint);
        assert_eq!(classify_cue(Cue::Before, &l).unwrap(), CueClass::Future);
        let alt = CueLexicon::with_before_as_past();
        assert_eq!(classify_cue(Cue::Before, &alt).unwrap(), CueClass::Past);
    }

    #[test]
    fn unknown_cue_name() {
        assert!(matches!("SOON".parse::<Cue>(), Err(Error::UnknownCue(_))));
        assert_eq!("followed by".parse::<Cue>().unwrap(), Cue::FollowedBy);
    }

    #[test]
    fn semantic_order_examples() {
        let l = lex();
        let so = |t: &str| semantic_order(&detect_cues(t, &l));
        assert_eq!(
            so("Bird sings before dog barks"),
            Some(("bird sings".into(), "dog barks".into()))
        );
        assert_eq!(
            so("Bird sings after dog barks"),
            Some(("dog barks".into(), "bird sings".into()))
        );
        assert_eq!(so("Bird sings while dog barks"), None);
    }

    #[test]
    fn leading_cue_has_no_clauses() {
        let a = detect_cues("Then a dog barks", &lex());
        assert_eq!(a.cues.len(), 1);
        assert!(a.events_text_order.is_empty());
        assert!(semantic_order(&a).is_none());
    }

    #[test]
    fn five_thens() {
        let mut m = DatasetManifest::default();
        for i in 0..5 {
            m.records.push(crate::corpus::Record::new(
                format!("r{i}"),
                Split::Train,
                vec![detect_cues(&format!("A dog barks then cat {i} meows"), &lex())],
            ));
        }
        let h = histogram(&m, &lex()).overall;
        for cue in Cue::ALL {
            assert_eq!(h.count(cue), if cue == Cue::Then { 5 } else { 0 });
        }
        assert_eq!(h.total_captions, 5);
    }

    #[test]
    fn empty_manifest_histogram() {
        let h = histogram(&DatasetManifest::default(), &lex());
        assert_eq!(h.overall, CueHistogram::empty());
        assert_eq!(h.overall.total_occurrences(), 0);
    }

    #[test]
    fn csv_layout() {
        let mut h = CueHistogram::empty();
        h.add_caption(&detect_cues("a then b", &lex()));
        h.add_caption(&detect_cues("a as b", &lex()));
        let mut buf = Vec::new();
        h.write_csv(&lex(), &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("cue,class,count,percent\nFOLLOWED_BY,future,0,0.00\nTHEN,future,1,50.00\n"));
    }
}
