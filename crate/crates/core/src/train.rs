//! Seeded training loop with validation-based model selection.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::FrameFeatures;
use crate::corpus::{DatasetManifest, LossConfig, Record, Split};
use crate::cue::CueLexicon;
use crate::error::{Error, Result};
use crate::eval::{score_task, RetrievalTask};
use crate::model::{
    backward, encode_audio, encode_text, AudioInput, BatchItem, ContrastiveTokens, DualEncoderParams, ModelConfig,
    Objective, Vocab,
};
use crate::optim::{Adam, AdamConfig};
use crate::transform::make_contrastive_set;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub use_positions: bool,
    /// Layer sizes; `vocab_size` and `bands` are taken from the data.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            use_positions: true,
            model: ModelConfig::new(0, 8),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid("lr", "must be > 0"));
        }
        self.loss.validate()
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_r1_t2a: f64,
    pub val_r1_a2t: f64,
}

impl EpochLog {
    pub fn val_r1(&self) -> f64 {
        0.5 * (self.val_r1_t2a + self.val_r1_a2t)
    }
}

/// Trained parameters plus everything needed to embed new inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub config_hash: String,
    pub vocab: Vec<String>,
    /// 1-based epoch the parameters were taken from.
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub params: DualEncoderParams<f64>,
}

impl Checkpoint {
    pub fn vocab(&self) -> Vocab {
        Vocab::from_tokens(self.vocab.clone())
    }

    pub fn encoder(&self, lex: &CueLexicon) -> Encoder<'_> {
        Encoder {
            params: &self.params,
            model: &self.model,
            vocab: self.vocab(),
            lex: lex.clone(),
            use_positions: self.config.use_positions,
        }
    }

    /// SHA-256 over the serialized parameters, hex.
    pub fn params_hash(&self) -> String {
        hex_digest(serde_json::to_vec(&self.params).expect("params serialize").as_slice())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid("version", format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.config_hash != config_hash(&ck.config, &ck.model, &ck.vocab) {
            return Err(Error::invalid("config_hash", "does not match the stored config"));
        }
        Ok(ck)
    }

    /// Training log as CSV.
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_R@1_t2a", "val_R@1_a2t"])?;
        for e in &self.history {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.2}", e.val_r1_t2a),
                format!("{:.2}", e.val_r1_a2t),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<log>", e))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &TrainConfig, model: &ModelConfig, vocab: &[String]) -> String {
    let blob = serde_json::to_vec(&(cfg, model, vocab)).expect("config serializes");
    hex_digest(&blob)
}

/// Embeds captions and clips with a fixed parameter set.
pub struct Encoder<'a> {
    pub params: &'a DualEncoderParams<f64>,
    pub model: &'a ModelConfig,
    pub vocab: Vocab,
    pub lex: CueLexicon,
    pub use_positions: bool,
}

impl Encoder<'_> {
    pub fn tokens(&self, text: &str) -> Vec<usize> {
        let ids = self.vocab.encode(text, &self.lex, self.model.max_text_len);
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }

    pub fn text(&self, text: &str) -> Result<Vec<f64>> {
        encode_text(self.params, &self.tokens(text))
    }

    pub fn audio(&self, feats: &FrameFeatures) -> Result<Vec<f64>> {
        encode_audio(self.params, &AudioInput::from_features(feats, self.model)?, self.use_positions)
    }
}

struct Example {
    audio: AudioInput<f64>,
    /// Token ids and contrastive set of every caption.
    captions: Vec<(Vec<usize>, Option<ContrastiveTokens>)>,
}

fn features_of<'f>(feats: &'f BTreeMap<String, FrameFeatures>, rec: &Record) -> Result<&'f FrameFeatures> {
    feats
        .get(&rec.id)
        .ok_or_else(|| Error::invalid("features", format!("no features for record `{}`", rec.id)))
}

fn encode_ids(vocab: &Vocab, lex: &CueLexicon, text: &str, max_len: usize) -> Vec<usize> {
    let ids = vocab.encode(text, lex, max_len);
    if ids.is_empty() {
        vec![0]
    } else {
        ids
    }
}

/// Validation retrieval task: every caption is a text query, every clip an audio query.
pub fn split_task(manifest: &DatasetManifest, split: Split) -> RetrievalTask {
    RetrievalTask::from_records(manifest.split(split))
}

/// Train one model; returns the checkpoint of the epoch with the best mean validation R@1.
pub fn train(
    manifest: &DatasetManifest,
    feats: &BTreeMap<String, FrameFeatures>,
    cfg: &TrainConfig,
    lex: &CueLexicon,
    seed: u64,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let train_recs: Vec<&Record> = manifest.split(Split::Train).collect();
    if train_recs.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    if manifest.split_len(Split::Val) == 0 {
        return Err(Error::Empty("val split".into()));
    }
    let vocab = Vocab::build(
        train_recs.iter().flat_map(|r| r.captions.iter().map(|c| c.text.as_str())),
        lex,
    );
    let first = features_of(feats, train_recs[0])?;
    let model = ModelConfig {
        vocab_size: vocab.len(),
        bands: first.bands,
        ..cfg.model.clone()
    };
    let max_len = model.max_text_len;
    let use_tt = cfg.loss.lambda != 0.0;
    let examples: Vec<Example> = train_recs
        .iter()
        .map(|r| {
            let audio = AudioInput::from_features(features_of(feats, r)?, &model)?;
            let captions = r
                .captions
                .iter()
                .map(|c| {
                    let ids = encode_ids(&vocab, lex, &c.text, max_len);
                    let ct = if use_tt {
                        make_contrastive_set(c, lex).ok().map(|s| {
                            let enc = |a: &crate::corpus::CaptionAnnotation| encode_ids(&vocab, lex, &a.text, max_len);
                            ContrastiveTokens {
                                positives: [enc(&s.positives[0]), enc(&s.positives[1])],
                                negatives: [enc(&s.negatives[0]), enc(&s.negatives[1])],
                            }
                        })
                    } else {
                        None
                    };
                    (ids, ct)
                })
                .collect();
            Ok(Example { audio, captions })
        })
        .collect::<Result<_>>()?;
    let val_task = split_task(manifest, Split::Val);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = DualEncoderParams::<f64>::init(&model, rng.gen());
    let mut opt = Adam::new(cfg.adam, &params);
    let obj = Objective::<f64>::from_config(&cfg.loss, cfg.use_positions);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let vocab_tokens = vocab.tokens().to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, DualEncoderParams<f64>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        // one caption per clip per epoch keeps in-batch clips distinct
        let picks: Vec<usize> = order.iter().map(|&i| rng.gen_range(0..examples[i].captions.len())).collect();
        let mut loss_sum = 0.0;
        let mut n_seen = 0usize;
        for (chunk, pick_chunk) in order.chunks(cfg.batch_size).zip(picks.chunks(cfg.batch_size)) {
            let batch: Vec<BatchItem<'_, f64>> = chunk
                .iter()
                .zip(pick_chunk)
                .map(|(&i, &c)| {
                    let (ids, ct) = &examples[i].captions[c];
                    BatchItem {
                        audio: &examples[i].audio,
                        text: ids,
                        contrastive: ct.as_ref(),
                    }
                })
                .collect();
            let (parts, grads) = backward(&params, &batch, &obj)?;
            if !parts.total.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite loss at epoch {epoch}")));
            }
            opt.update(&mut params, &grads);
            loss_sum += parts.total * batch.len() as f64;
            n_seen += batch.len();
        }
        let enc = Encoder {
            params: &params,
            model: &model,
            vocab: vocab.clone(),
            lex: lex.clone(),
            use_positions: cfg.use_positions,
        };
        let val = score_task(&enc, &val_task, feats)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / n_seen as f64,
            val_r1_t2a: val.t2a[0],
            val_r1_a2t: val.a2t[0],
        };
        log::debug!(
            "seed {seed} epoch {epoch}: loss {:.4} val R@1 {:.2}/{:.2}",
            log.train_loss,
            log.val_r1_t2a,
            log.val_r1_a2t
        );
        if best.as_ref().is_none_or(|(b, _, _)| log.val_r1() > *b) {
            best = Some((log.val_r1(), epoch, params.clone()));
        }
        history.push(log);
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        seed,
        config_hash: config_hash(cfg, &model, &vocab_tokens),
        config: cfg.clone(),
        model,
        vocab: vocab_tokens,
        best_epoch,
        history,
        params: best_params,
    })
}

/// Independent runs, one per seed, returned in seed-list order.
///
/// Up to `jobs` runs proceed in parallel; each run is single-threaded, so
/// results do not depend on `jobs`.
pub fn run_seeds(
    manifest: &DatasetManifest,
    feats: &BTreeMap<String, FrameFeatures>,
    cfg: &TrainConfig,
    lex: &CueLexicon,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<Checkpoint>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| train(manifest, feats, cfg, lex, s)).collect())
}
