//! Audio resolution and feature extraction for manifest records.
//!
//! A record's audio comes from its WAV file when `audio_path` is set, and
//! otherwise from its inline synthesis recipe.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::audio::{features, read_wav, write_wav, FeatureConfig, FrameFeatures, SoundBank};
use crate::corpus::{AudioClip, DatasetManifest, Record, Split};
use crate::error::{Error, Result};
use crate::syncaps::{bank_for_record, render_record};

/// Load or synthesize the audio of one record.
pub fn record_audio(rec: &Record, root: Option<&Path>, bank: Option<&SoundBank>) -> Result<AudioClip> {
    if let Some(rel) = &rec.audio_path {
        let path = match root {
            Some(r) => r.join(rel),
            None => rel.into(),
        };
        if path.exists() || !rec.meta.contains_key("recipe") {
            return read_wav(&path);
        }
    }
    match bank {
        Some(b) => render_record(b, rec),
        None => render_record(&bank_for_record(rec)?, rec),
    }
}

/// Features for every record of the given splits, keyed by record id.
///
/// `jobs` worker threads extract in parallel; the result does not depend on it.
pub fn extract_features(
    manifest: &DatasetManifest,
    splits: &[Split],
    root: Option<&Path>,
    cfg: FeatureConfig,
    jobs: usize,
) -> Result<BTreeMap<String, FrameFeatures>> {
    let recs: Vec<&Record> = manifest.records.iter().filter(|r| splits.contains(&r.split)).collect();
    // one bank per distinct recipe source, shared across records
    let mut banks: BTreeMap<(String, String, String), SoundBank> = BTreeMap::new();
    for r in &recs {
        if r.audio_path.is_none() {
            let key = bank_key(r);
            if let std::collections::btree_map::Entry::Vacant(e) = banks.entry(key) {
                e.insert(bank_for_record(r)?);
            }
        }
    }
    let work = |r: &&Record| -> Result<(String, FrameFeatures)> {
        let bank = banks.get(&bank_key(r));
        let clip = record_audio(r, root, bank)?;
        Ok((r.id.clone(), features(&clip, cfg)?))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let out: Result<Vec<_>> = pool.install(|| recs.par_iter().map(work).collect());
    Ok(out?.into_iter().collect())
}

/// Render every record's audio to `<dir>/audio/<id>.wav` and point
/// `audio_path` at it (relative to `dir`).
pub fn write_audio(manifest: &mut DatasetManifest, dir: &Path, jobs: usize) -> Result<()> {
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut banks: BTreeMap<(String, String, String), SoundBank> = BTreeMap::new();
    for r in &manifest.records {
        let key = bank_key(r);
        if let std::collections::btree_map::Entry::Vacant(e) = banks.entry(key) {
            e.insert(bank_for_record(r)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        manifest.records.par_iter().try_for_each(|r| {
            let clip = render_record(&banks[&bank_key(r)], r)?;
            write_wav(&clip, audio_dir.join(format!("{}.wav", r.id)))
        })
    })?;
    for r in &mut manifest.records {
        r.audio_path = Some(format!("audio/{}.wav", r.id));
    }
    Ok(())
}

fn bank_key(r: &Record) -> (String, String, String) {
    let get = |k: &str| r.meta.get(k).cloned().unwrap_or_default();
    (get("bank"), get("sample_rate"), get("bank_seed"))
}
