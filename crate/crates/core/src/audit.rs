//! Caption-quality audit: ask a chat model whether a caption matches the
//! grounded sound events of its clip, and tabulate the verdicts per cue.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::thread::sleep;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::SoundEvent;
use crate::cue::{detect_cues, semantic_order, normalize_event, Cue, CueLexicon};
use crate::error::{Error, Result};

/// Prompt template shipped with the crate; `{description}` and
/// `{components}` are substituted per item.
pub const DEFAULT_TEMPLATE: &str = include_str!("../data/audit_prompt.txt");

/// Clip length the grounded times refer to.
pub const CLIP_SECONDS: f64 = 10.0;

/// Grounded end times may overrun the nominal clip length slightly
/// (the one-shot example in the prompt ends at 10.02 s).
pub const CLIP_SLACK_S: f64 = 0.1;

/// A caption together with the localized sounds of its clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundedItem {
    pub description: String,
    pub components: Vec<SoundEvent>,
}

impl GroundedItem {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("components", "a grounded item needs at least one component"));
        }
        for c in &self.components {
            c.validate()?;
            if c.offset_s > CLIP_SECONDS + CLIP_SLACK_S {
                return Err(Error::invalid(
                    "components",
                    format!("`{}` ends at {} s, past the {CLIP_SECONDS} s clip", c.label, c.offset_s),
                ));
            }
        }
        Ok(())
    }
}

/// One `label: start, end;` line per component, in input order.
pub fn format_components(components: &[SoundEvent]) -> String {
    components
        .iter()
        .map(|c| format!("{}: {:?}, {:?};", c.label, c.onset_s, c.offset_s))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse the `label: start, end;` text form (one component per line or `;`-separated).
pub fn parse_components(text: &str) -> Result<Vec<SoundEvent>> {
    let mut out = Vec::new();
    for (i, chunk) in text.split(';').enumerate() {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: format!("{m}: `{chunk}`"),
        };
        let (label, times) = chunk.rsplit_once(':').ok_or_else(|| bad("missing `:`"))?;
        let (a, b) = times.split_once(',').ok_or_else(|| bad("missing `,`"))?;
        let onset = a.trim().parse().map_err(|_| bad("bad start time"))?;
        let offset = b.trim().parse().map_err(|_| bad("bad end time"))?;
        let ev = SoundEvent::new(label.trim(), onset, offset);
        ev.validate()?;
        out.push(ev);
    }
    Ok(out)
}

/// Substitute an item into a template holding both placeholders.
pub fn build_prompt(item: &GroundedItem, template: &str) -> Result<String> {
    for ph in ["{description}", "{components}"] {
        if !template.contains(ph) {
            return Err(Error::invalid("template", format!("missing placeholder {ph}")));
        }
    }
    item.validate()?;
    Ok(template
        .replace("{description}", &item.description)
        .replace("{components}", &format_components(&item.components)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuditLabel {
    Correct,
    Incomplete,
    Wrong,
}

impl AuditLabel {
    pub const ALL: [AuditLabel; 3] = [AuditLabel::Correct, AuditLabel::Incomplete, AuditLabel::Wrong];

    pub fn name(self) -> &'static str {
        match self {
            AuditLabel::Correct => "Correct",
            AuditLabel::Incomplete => "Incomplete",
            AuditLabel::Wrong => "Wrong",
        }
    }
}

impl fmt::Display for AuditLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AuditLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_matches(|c: char| c == '\'' || c == '"' || c == '`' || c == '*' || c == '.');
        AuditLabel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown audit label `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub description: String,
    /// `None` when the response had no parseable `Evaluation:` line.
    pub label: Option<AuditLabel>,
    pub corrected_description: Option<String>,
    pub raw_response: String,
}

/// Extract the verdict from a model response; never guesses a label.
pub fn parse_response(description: &str, raw: &str) -> AuditVerdict {
    let field = |key: &str| {
        raw.lines().find_map(|l| {
            let l = l.trim().trim_start_matches(['*', '#', '-', ' ']);
            let head = l.get(..key.len())?;
            head.eq_ignore_ascii_case(key)
                .then(|| l[key.len()..].trim_start_matches(['*', ':', ' ']).trim().to_string())
        })
    };
    AuditVerdict {
        description: description.to_string(),
        label: field("Evaluation").and_then(|v| v.parse().ok()),
        corrected_description: field("Corrected description").filter(|s| !s.is_empty()),
        raw_response: raw.to_string(),
    }
}

/// Anything that turns a prompt into a response text.
pub trait AuditBackend {
    /// Transient failures return `Err(Transient)`; they are retried.
    fn complete(&mut self, item: &GroundedItem, prompt: &str) -> std::result::Result<String, BackendError>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendError {
    Transient(String),
    Fatal(String),
}

/// Deterministic rule-based stand-in for the chat model: `Correct` when the
/// description mentions every component label and orders them by onset,
/// `Incomplete` otherwise.
#[derive(Clone, Debug, Default)]
pub struct MockBackend {
    pub lex: CueLexicon,
}

impl MockBackend {
    pub fn judge(&self, item: &GroundedItem) -> AuditLabel {
        let desc = item.description.to_lowercase();
        let mut mentions = Vec::new();
        for c in &item.components {
            match desc.find(&c.label.to_lowercase()) {
                Some(pos) => mentions.push((pos, c)),
                None => return AuditLabel::Incomplete,
            }
        }
        let ann = detect_cues(&item.description, &self.lex);
        // acoustic rank of each mention: clause order for a single ordered cue, else mention order
        let ranked: Vec<(usize, &SoundEvent)> = match (semantic_order(&ann), ann.single_ordered_cue()) {
            (Some((first, _)), Some(_)) => mentions
                .iter()
                .map(|&(_, c)| {
                    let in_first = first.contains(&normalize_event(&c.label)) || first.contains(&c.label.to_lowercase());
                    (usize::from(!in_first), c)
                })
                .collect(),
            _ => {
                let mut m = mentions.clone();
                m.sort_by_key(|&(pos, _)| pos);
                m.into_iter().enumerate().map(|(i, (_, c))| (i, c)).collect()
            }
        };
        let ordered = ranked.iter().all(|&(ra, a)| {
            ranked
                .iter()
                .all(|&(rb, b)| ra >= rb || a.onset_s <= b.onset_s + 1e-9)
        });
        if ordered {
            AuditLabel::Correct
        } else {
            AuditLabel::Incomplete
        }
    }
}

impl AuditBackend for MockBackend {
    fn complete(&mut self, item: &GroundedItem, _prompt: &str) -> std::result::Result<String, BackendError> {
        Ok(format!("Evaluation: {}\n", self.judge(item)))
    }
}

/// Generic chat-completion endpoint:
/// `{model, messages: [{role, content}]}` -> `{choices: [{message: {content}}]}`.
#[derive(Clone, Debug)]
pub struct HttpBackend {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
}

pub const ENV_URL: &str = "AUDIT_API_URL";
pub const ENV_KEY: &str = "AUDIT_API_KEY";

impl HttpBackend {
    /// Endpoint and key from `AUDIT_API_URL` / `AUDIT_API_KEY`.
    pub fn from_env(model: &str, temperature: f64) -> Result<Self> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| Error::InvalidArgument(format!("{ENV_URL} is not set")))?;
        Ok(HttpBackend {
            url,
            api_key: std::env::var(ENV_KEY).ok(),
            model: model.to_string(),
            temperature,
            timeout: Duration::from_secs(120),
        })
    }
}

impl AuditBackend for HttpBackend {
    fn complete(&mut self, _item: &GroundedItem, prompt: &str) -> std::result::Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = ureq::post(&self.url).timeout(self.timeout);
        if let Some(k) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        let resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {text}");
                return Err(if code == 429 || code >= 500 {
                    BackendError::Transient(msg)
                } else {
                    BackendError::Fatal(msg)
                });
            }
            Err(e) => return Err(BackendError::Transient(e.to_string())),
        };
        let v: serde_json::Value = resp
            .into_json()
            .map_err(|e| BackendError::Fatal(format!("response is not JSON: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay: Duration,
    /// Minimum spacing between consecutive requests.
    pub min_interval: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            min_interval: Duration::ZERO,
        }
    }
}

/// Audit items one request at a time.
pub fn audit_batch<B: AuditBackend>(
    items: &[GroundedItem],
    template: &str,
    backend: &mut B,
    policy: RetryPolicy,
) -> Result<Vec<AuditVerdict>> {
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        if i > 0 && !policy.min_interval.is_zero() {
            sleep(policy.min_interval);
        }
        let prompt = build_prompt(item, template)?;
        let mut attempt = 0;
        let raw = loop {
            attempt += 1;
            match backend.complete(item, &prompt) {
                Ok(r) => break r,
                Err(BackendError::Transient(m)) if attempt < policy.max_attempts => {
                    log::warn!("audit item {i}: attempt {attempt} failed ({m}); retrying");
                    sleep(policy.base_delay * 2u32.saturating_pow(attempt - 1));
                }
                Err(BackendError::Transient(m)) | Err(BackendError::Fatal(m)) => {
                    return Err(Error::Backend { attempts: attempt as usize, message: m });
                }
            }
        };
        let v = parse_response(&item.description, &raw);
        if v.label.is_none() {
            log::warn!("audit item {i}: no parseable `Evaluation:` line");
        }
        out.push(v);
    }
    Ok(out)
}

/// Verdict percentages for one row of the aggregate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub name: String,
    pub n: usize,
    pub correct: f64,
    pub incomplete: f64,
    pub wrong: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditAggregate {
    /// Counts over all parsed verdicts.
    pub totals: BTreeMap<AuditLabel, usize>,
    pub unparsed: usize,
    /// `All` first, then one row per cue present, in canonical cue order.
    pub rows: Vec<AggregateRow>,
}

fn row(name: String, counts: &BTreeMap<AuditLabel, usize>) -> AggregateRow {
    let n: usize = counts.values().sum();
    let pct = |l| {
        if n == 0 {
            0.0
        } else {
            100.0 * *counts.get(&l).unwrap_or(&0) as f64 / n as f64
        }
    };
    AggregateRow {
        name,
        n,
        correct: pct(AuditLabel::Correct),
        incomplete: pct(AuditLabel::Incomplete),
        wrong: pct(AuditLabel::Wrong),
    }
}

/// Per-cue and overall verdict percentages. A description with several
/// cues counts once in each cue's row; unparsed verdicts are left out.
pub fn aggregate(verdicts: &[AuditVerdict], lex: &CueLexicon) -> AuditAggregate {
    let mut totals = BTreeMap::new();
    let mut per_cue: BTreeMap<Cue, BTreeMap<AuditLabel, usize>> = BTreeMap::new();
    let mut unparsed = 0;
    for v in verdicts {
        let Some(label) = v.label else {
            unparsed += 1;
            continue;
        };
        *totals.entry(label).or_insert(0) += 1;
        let mut cues: Vec<Cue> = detect_cues(&v.description, lex).cues.iter().map(|m| m.cue).collect();
        cues.sort();
        cues.dedup();
        for c in cues {
            *per_cue.entry(c).or_default().entry(label).or_insert(0) += 1;
        }
    }
    let mut rows = vec![row("All".into(), &totals)];
    rows.extend(per_cue.iter().map(|(c, counts)| row(c.display_name(), counts)));
    AuditAggregate { totals, unparsed, rows }
}

impl AuditAggregate {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cue", "n", "correct_pct", "incomplete_pct", "wrong_pct"])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.n.to_string(),
                format!("{:.1}", r.correct),
                format!("{:.1}", r.incomplete),
                format!("{:.1}", r.wrong),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<audit>", e))
    }
}
