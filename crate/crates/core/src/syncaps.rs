//! Synthetic two-event corpus: pairs of augmented atomic sounds composed into
//! 10 s clips with a rule-based temporal caption.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{augment, compose_pair, AugmentationRanges, AugmentationSpec, SoundBank};
use crate::audio::bank::derive_seed;
use crate::corpus::{AudioClip, CaptionAnnotation, DatasetManifest, Record, SoundEvent, Split};
use crate::cue::{Cue, CueClass, CueLexicon};
use crate::error::{Error, Result};
use crate::transform::join_clauses;

pub const RECIPE_TAG: &str = "syncaps-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct SynCapsConfig {
    /// Record counts for train, val and test.
    pub sizes: (usize, usize, usize),
    /// Target mean number of uses per atomic clip.
    pub reuse_avg: f64,
    pub seed: u64,
    pub target_s: f64,
    pub max_overlap_s: f64,
    pub augment: AugmentationRanges,
}

impl Default for SynCapsConfig {
    fn default() -> Self {
        SynCapsConfig {
            sizes: (4400, 485, 485),
            reuse_avg: 5.0,
            seed: 0,
            target_s: 10.0,
            max_overlap_s: 1.0,
            augment: AugmentationRanges::default(),
        }
    }
}

/// Caption whose acoustic order is `(first, second)`: future cues keep the
/// mention order, past cues swap it.
pub fn caption_for(first_desc: &str, second_desc: &str, cue: Cue, lex: &CueLexicon) -> Result<String> {
    match lex.class_of(cue) {
        CueClass::Future => Ok(join_clauses(first_desc, cue.surface(), second_desc)),
        CueClass::Past => Ok(join_clauses(second_desc, cue.surface(), first_desc)),
        CueClass::Joint => Err(Error::InvalidArgument(format!(
            "{cue} is a joint cue; captions need a future or past cue"
        ))),
    }
}

/// `(label index, clip index)` of an atomic component.
pub type ComponentId = (usize, usize);

fn fmt_component(c: ComponentId) -> String {
    format!("{}:{}", c.0, c.1)
}

fn parse_component(s: &str) -> Result<ComponentId> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::invalid("meta.component", format!("bad component `{s}`")))?;
    let p = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::invalid("meta.component", format!("bad component `{s}`")))
    };
    Ok((p(a)?, p(b)?))
}

/// Components used by a generated record (first, second).
pub fn record_components(rec: &Record) -> Result<[ComponentId; 2]> {
    let get = |k: &str| {
        rec.meta
            .get(k)
            .ok_or_else(|| Error::invalid(format!("meta.{k}"), format!("missing on `{}`", rec.id)))
    };
    Ok([parse_component(get("first")?)?, parse_component(get("second")?)?])
}

/// Arrange `slots` uses of `pool` so that every clip is used either
/// floor or ceil of the average, and consecutive pairs have distinct labels.
fn usage_plan(pool: &[ComponentId], slots: usize, rng: &mut ChaCha8Rng) -> Result<Vec<ComponentId>> {
    let mut plan = Vec::with_capacity(slots);
    while plan.len() < slots {
        let mut pass = pool.to_vec();
        pass.shuffle(rng);
        plan.extend(pass);
    }
    plan.truncate(slots);
    for i in (0..slots).step_by(2) {
        if plan[i].0 != plan[i + 1].0 {
            continue;
        }
        let label = plan[i].0;
        let fwd = (i + 2..slots).find(|&j| plan[j].0 != label);
        let swap_with = fwd.or_else(|| {
            // earlier pair whose members both differ from `label`
            (0..i).find(|&j| {
                let partner = if j % 2 == 0 { j + 1 } else { j - 1 };
                plan[j].0 != label && plan[partner].0 != label
            })
        });
        match swap_with {
            Some(j) => plan.swap(i + 1, j),
            None => {
                return Err(Error::InsufficientBank(
                    "cannot pair components from two different labels".into(),
                ))
            }
        }
    }
    Ok(plan)
}

/// Build the plan for a SynCaps-style corpus. Audio is not rendered here,
/// except for file-backed banks whose clip lengths must be read.
pub fn generate(bank: &SoundBank, cfg: &SynCapsConfig) -> Result<DatasetManifest> {
    let lex = CueLexicon::default();
    let (n_train, n_val, n_test) = cfg.sizes;
    let test_slots = 2 * n_test;
    let tv_slots = 2 * (n_train + n_val);
    let total_slots = test_slots + tv_slots;
    if total_slots == 0 {
        return Ok(DatasetManifest::default());
    }
    if !(cfg.reuse_avg > 0.0) {
        return Err(Error::InvalidArgument("reuse_avg must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5EED]));

    // Per-label split of clips into a test-exclusive pool and a train/val pool,
    // proportional to slot demand.
    let test_frac = test_slots as f64 / total_slots as f64;
    let mut test_pool = Vec::new();
    let mut tv_pool = Vec::new();
    for (l, info) in bank.labels().iter().enumerate() {
        let mut idx: Vec<usize> = (0..info.n_clips).collect();
        idx.shuffle(&mut rng);
        let k = if n_test == 0 || info.n_clips < 2 {
            0
        } else if tv_slots == 0 {
            info.n_clips
        } else {
            ((info.n_clips as f64 * test_frac).round() as usize).clamp(1, info.n_clips - 1)
        };
        test_pool.extend(idx[..k].iter().map(|&c| (l, c)));
        tv_pool.extend(idx[k..].iter().map(|&c| (l, c)));
    }
    let check = |pool: &[ComponentId], slots: usize, name: &str| -> Result<()> {
        if slots == 0 {
            return Ok(());
        }
        let labels: BTreeSet<usize> = pool.iter().map(|c| c.0).collect();
        let cap = (2.0 * cfg.reuse_avg * pool.len() as f64).floor() as usize;
        if labels.len() < 2 || cap < slots {
            let need = (slots as f64 / (2.0 * cfg.reuse_avg)).ceil() as usize;
            return Err(Error::InsufficientBank(format!(
                "{name} pool has {} clips over {} labels; {slots} component slots need at least {need} clips from 2+ labels",
                pool.len(),
                labels.len()
            )));
        }
        Ok(())
    };
    check(&test_pool, test_slots, "test")?;
    check(&tv_pool, tv_slots, "train/val")?;

    let tv_plan = if tv_slots > 0 { usage_plan(&tv_pool, tv_slots, &mut rng)? } else { Vec::new() };
    let test_plan = if test_slots > 0 { usage_plan(&test_pool, test_slots, &mut rng)? } else { Vec::new() };

    let mut records = Vec::with_capacity(n_train + n_val + n_test);
    let mut length_cache: BTreeMap<ComponentId, usize> = BTreeMap::new();
    let splits = [
        (Split::Train, n_train, &tv_plan[..], 0),
        (Split::Val, n_val, &tv_plan[..], 2 * n_train),
        (Split::Test, n_test, &test_plan[..], 0),
    ];
    let sr = bank.sample_rate;
    let reuse_tv = if tv_pool.is_empty() { 0.0 } else { tv_slots as f64 / tv_pool.len() as f64 };
    let reuse_test = if test_pool.is_empty() { 0.0 } else { test_slots as f64 / test_pool.len() as f64 };
    for (split, n, plan, offset) in splits {
        for i in 0..n {
            let first = plan[offset + 2 * i];
            let second = plan[offset + 2 * i + 1];
            let cue = Cue::ORDERED[i % Cue::ORDERED.len()];
            let overlap: f64 = rng.gen_range(0.0..=cfg.max_overlap_s);
            let aug1 = AugmentationSpec::sample(&cfg.augment, &mut rng);
            let aug2 = AugmentationSpec::sample(&cfg.augment, &mut rng);
            let noise1: u64 = rng.gen();
            let noise2: u64 = rng.gen();

            let labels = bank.labels();
            let (d1, d2) = (&labels[first.0].description, &labels[second.0].description);
            let text = caption_for(d1, d2, cue, &lex)?;

            let mut base_len = |c: ComponentId| -> Result<usize> {
                if let Some(&n) = length_cache.get(&c) {
                    return Ok(n);
                }
                let n = match bank.seed() {
                    Some(_) => (crate::audio::ATOMIC_SECONDS * sr as f64).round() as usize,
                    None => bank.clip(c.0, c.1)?.samples.len(),
                };
                length_cache.insert(c, n);
                Ok(n)
            };
            let n1 = augmented_len(base_len(first)?, &aug1);
            let n2 = augmented_len(base_len(second)?, &aug2);
            let layout = Layout::new(n1, n2, overlap, cfg.target_s, sr);

            let mut meta = BTreeMap::new();
            meta.insert("recipe".into(), RECIPE_TAG.into());
            meta.insert("bank".into(), bank.spec_string());
            if let Some(s) = bank.seed() {
                meta.insert("bank_seed".into(), s.to_string());
            }
            meta.insert("sample_rate".into(), sr.to_string());
            meta.insert("target_s".into(), cfg.target_s.to_string());
            meta.insert("first".into(), fmt_component(first));
            meta.insert("second".into(), fmt_component(second));
            meta.insert("aug_first".into(), aug1.to_meta());
            meta.insert("aug_second".into(), aug2.to_meta());
            meta.insert("noise_seed_first".into(), noise1.to_string());
            meta.insert("noise_seed_second".into(), noise2.to_string());
            meta.insert("overlap_s".into(), overlap.to_string());
            meta.insert("cue".into(), cue.name().into());
            meta.insert("cue_assignment".into(), "round_robin".into());
            meta.insert("overlap_sampling".into(), format!("uniform[0,{}]", cfg.max_overlap_s));
            let reuse = if split == Split::Test { reuse_test } else { reuse_tv };
            meta.insert("pool_mean_reuse".into(), format!("{reuse:.3}"));

            let mut rec = Record::new(
                format!("syncaps-{}-{i:05}", split.name()),
                split,
                vec![CaptionAnnotation::annotate(&text)],
            );
            rec.events = Some(layout.events(&labels[first.0].label, &labels[second.0].label));
            rec.meta = meta;
            records.push(rec);
        }
    }
    DatasetManifest::new(records)
}

fn augmented_len(n: usize, spec: &AugmentationSpec) -> usize {
    if spec.stretch_factor != 1.0 {
        (n as f64 * spec.stretch_factor).round() as usize
    } else {
        n
    }
}

/// Sample-exact placement of the two components in the composite.
struct Layout {
    n1: usize,
    n2: usize,
    start2: usize,
    sr: f64,
}

impl Layout {
    fn new(n1: usize, n2: usize, overlap_s: f64, target_s: f64, sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let target = (target_s * sr).round() as usize;
        let n1 = n1.min(target);
        let overlap = ((overlap_s * sr).round() as usize).min(n1);
        let start2 = n1 - overlap;
        // the second component is trimmed when stretching pushes it past the end
        let n2 = n2.min(target - start2);
        Layout { n1, n2, start2, sr }
    }

    fn events(&self, first: &str, second: &str) -> Vec<SoundEvent> {
        vec![
            SoundEvent::new(first, 0.0, self.n1 as f64 / self.sr),
            SoundEvent::new(second, self.start2 as f64 / self.sr, (self.start2 + self.n2) as f64 / self.sr),
        ]
    }
}

fn meta_f64(rec: &Record, key: &str) -> Result<f64> {
    rec.meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::invalid(format!("meta.{key}"), format!("missing or invalid on `{}`", rec.id)))
}

fn meta_u64(rec: &Record, key: &str) -> Result<u64> {
    rec.meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::invalid(format!("meta.{key}"), format!("missing or invalid on `{}`", rec.id)))
}

/// Bank a generated record was planned against.
pub fn bank_for_record(rec: &Record) -> Result<SoundBank> {
    let spec = rec
        .meta
        .get("bank")
        .ok_or_else(|| Error::invalid("meta.bank", format!("missing on `{}`", rec.id)))?;
    let sr = meta_u64(rec, "sample_rate")? as u32;
    let seed = rec.meta.get("bank_seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    SoundBank::from_spec(spec, sr, seed)
}

/// Render the composite audio of a generated record from its inline recipe.
pub fn render_record(bank: &SoundBank, rec: &Record) -> Result<AudioClip> {
    if rec.meta.get("recipe").map(String::as_str) != Some(RECIPE_TAG) {
        return Err(Error::invalid("meta.recipe", format!("`{}` has no synthesis recipe", rec.id)));
    }
    let [first, second] = record_components(rec)?;
    let aug1 = AugmentationSpec::from_meta(rec.meta.get("aug_first").map(String::as_str).unwrap_or(""))?;
    let aug2 = AugmentationSpec::from_meta(rec.meta.get("aug_second").map(String::as_str).unwrap_or(""))?;
    let overlap = meta_f64(rec, "overlap_s")?;
    let target_s = meta_f64(rec, "target_s")?;
    let sr = bank.sample_rate;

    let mut c1 = augment(&bank.clip(first.0, first.1)?, &aug1, meta_u64(rec, "noise_seed_first")?)?;
    let mut c2 = augment(&bank.clip(second.0, second.1)?, &aug2, meta_u64(rec, "noise_seed_second")?)?;
    let layout = Layout::new(c1.samples.len(), c2.samples.len(), overlap, target_s, sr);
    c1.samples.truncate(layout.n1);
    c2.samples.truncate(layout.n2);
    let (mut clip, _) = compose_pair(&c1, &c2, overlap, target_s, sr)?;
    clip.id = rec.id.clone();
    Ok(clip)
}
