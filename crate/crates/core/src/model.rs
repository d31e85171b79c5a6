//! Toy dual encoder with exact reverse-mode gradients.
//!
//! Both towers share one shape: each input position (token or audio frame)
//! is embedded and offset by an optional positional row, passed through a
//! per-position `tanh` layer, mean-pooled, then fed to a `tanh` MLP whose
//! output is L2-normalized.
//!
//! The per-position layer is what lets positions change the pooled vector
//! (a mean of `token + position` rows is order-free); the MLP after pooling
//! lets what was said at one position interact with what was said at another,
//! which is needed to tell that "A after B" and "B before A" agree. With
//! positions disabled the audio tower is invariant to frame order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::FrameFeatures;
use crate::cue::{word_spans, CueLexicon};
use crate::error::{Error, Result};
use crate::losses::{nt_xent_from_sims, text_text_from_sims, TextTextSims};
use crate::scalar::{dot, Scalar};

/// Row-major dense matrix; vectors are `1 x n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Tensor {
            rows,
            cols,
            data: (0..rows * cols).map(|_| S::of(rng.gen_range(-scale..=scale))).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor<S>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// `y = W^T x + b` for `W: in x out`.
fn affine<S: Scalar>(w: &Tensor<S>, b: &[S], x: &[S]) -> Vec<S> {
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == S::zero() {
            continue;
        }
        for (yj, &wij) in y.iter_mut().zip(w.row(i)) {
            *yj += xi * wij;
        }
    }
    y
}

/// `dx = W dy` for `W: in x out`.
fn affine_back_input<S: Scalar>(w: &Tensor<S>, dy: &[S]) -> Vec<S> {
    (0..w.rows).map(|i| dot(w.row(i), dy)).collect()
}

/// `dW += x dy^T`.
fn outer_acc<S: Scalar>(dw: &mut Tensor<S>, x: &[S], dy: &[S]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == S::zero() {
            continue;
        }
        for (g, &d) in dw.row_mut(i).iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
}

fn axpy<S: Scalar>(acc: &mut [S], a: S, x: &[S]) {
    for (y, &v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub bands: usize,
    pub d_tok: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub max_text_len: usize,
    pub max_frames: usize,
    pub init_scale: f64,
    /// Audio input is `(log energy - feature_center) * feature_scale`.
    pub feature_center: f64,
    pub feature_scale: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, bands: usize) -> Self {
        ModelConfig {
            vocab_size,
            bands,
            d_tok: 32,
            hidden: 128,
            d_out: 64,
            max_text_len: 32,
            max_frames: 64,
            init_scale: 0.05,
            feature_center: -5.0,
            feature_scale: 0.1,
        }
    }
}

/// One encoder tower after the input embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerParams<S> {
    /// Per-position layer, `d_tok x hidden`.
    pub w0: Tensor<S>,
    pub b0: Tensor<S>,
    /// MLP after pooling: `hidden x hidden`, then `hidden x d_out`.
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> TowerParams<S> {
    fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let s = cfg.init_scale;
        TowerParams {
            w0: Tensor::uniform(cfg.d_tok, cfg.hidden, s, rng),
            b0: Tensor::uniform(1, cfg.hidden, s, rng),
            w1: Tensor::uniform(cfg.hidden, cfg.hidden, s, rng),
            b1: Tensor::uniform(1, cfg.hidden, s, rng),
            w2: Tensor::uniform(cfg.hidden, cfg.d_out, s, rng),
            b2: Tensor::uniform(1, cfg.d_out, s, rng),
        }
    }

    fn blocks(&self) -> [&Tensor<S>; 6] {
        [&self.w0, &self.b0, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn blocks_mut(&mut self) -> [&mut Tensor<S>; 6] {
        [&mut self.w0, &mut self.b0, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// All learnable tensors of the audio encoder and the text encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEncoderParams<S> {
    /// `vocab x d_tok`
    pub tok_emb: Tensor<S>,
    /// `max_text_len x d_tok`
    pub text_pos: Tensor<S>,
    pub text: TowerParams<S>,
    /// `bands x d_tok`
    pub audio_proj: Tensor<S>,
    /// `max_frames x d_tok`
    pub audio_pos: Tensor<S>,
    pub audio: TowerParams<S>,
}

/// Gradients share the parameter layout.
pub type Gradients<S> = DualEncoderParams<S>;

pub const N_BLOCKS: usize = 16;

/// Names of the tensors in [`DualEncoderParams::blocks`] order.
pub const BLOCK_NAMES: [&str; N_BLOCKS] = [
    "tok_emb",
    "text_pos",
    "text.w0",
    "text.b0",
    "text.w1",
    "text.b1",
    "text.w2",
    "text.b2",
    "audio_proj",
    "audio_pos",
    "audio.w0",
    "audio.b0",
    "audio.w1",
    "audio.b1",
    "audio.w2",
    "audio.b2",
];

impl<S: Scalar> DualEncoderParams<S> {
    /// Every entry drawn from `Uniform[-init_scale, init_scale]`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.init_scale;
        DualEncoderParams {
            tok_emb: Tensor::uniform(cfg.vocab_size, cfg.d_tok, s, &mut rng),
            text_pos: Tensor::uniform(cfg.max_text_len, cfg.d_tok, s, &mut rng),
            text: TowerParams::init(cfg, &mut rng),
            audio_proj: Tensor::uniform(cfg.bands, cfg.d_tok, s, &mut rng),
            audio_pos: Tensor::uniform(cfg.max_frames, cfg.d_tok, s, &mut rng),
            audio: TowerParams::init(cfg, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.data.iter_mut().for_each(|v| *v = S::zero());
        }
        z
    }

    pub fn blocks(&self) -> Vec<&Tensor<S>> {
        let mut v = vec![&self.tok_emb, &self.text_pos];
        v.extend(self.text.blocks());
        v.extend([&self.audio_proj, &self.audio_pos]);
        v.extend(self.audio.blocks());
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = vec![&mut self.tok_emb, &mut self.text_pos];
        v.extend(self.text.blocks_mut());
        v.extend([&mut self.audio_proj, &mut self.audio_pos]);
        v.extend(self.audio.blocks_mut());
        v
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> DualEncoderParams<T> {
        let tower = |t: &TowerParams<S>| TowerParams {
            w0: t.w0.cast(),
            b0: t.b0.cast(),
            w1: t.w1.cast(),
            b1: t.b1.cast(),
            w2: t.w2.cast(),
            b2: t.b2.cast(),
        };
        DualEncoderParams {
            tok_emb: self.tok_emb.cast(),
            text_pos: self.text_pos.cast(),
            text: tower(&self.text),
            audio_proj: self.audio_proj.cast(),
            audio_pos: self.audio_pos.cast(),
            audio: tower(&self.audio),
        }
    }
}

/// Caption words with multi-word cue surfaces fused (`followed_by`).
pub fn tokenize(text: &str, lex: &CueLexicon) -> Vec<String> {
    let words: Vec<String> = word_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect();
    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    'outer: while i < words.len() {
        for entry in lex.multiword_surfaces() {
            let n = entry.words.len();
            if i + n <= words.len() && words[i..i + n] == entry.words[..] {
                out.push(entry.words.join("_"));
                i += n;
                continue 'outer;
            }
        }
        out.push(words[i].clone());
        i += 1;
    }
    out
}

pub const UNK: &str = "<unk>";

/// Token vocabulary; index 0 is the unknown token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, lex: &CueLexicon) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for t in texts {
            set.extend(tokenize(t, lex));
        }
        set.remove(UNK);
        let tokens = std::iter::once(UNK.to_string()).chain(set).collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Token ids, truncated to `max_len`.
    pub fn encode(&self, text: &str, lex: &CueLexicon, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(text, lex).iter().map(|t| self.id(t)).collect();
        ids.truncate(max_len);
        ids
    }
}

/// Normalized frame matrix fed to the audio tower.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioInput<S> {
    pub frames: usize,
    pub bands: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> AudioInput<S> {
    pub fn from_features(f: &FrameFeatures, cfg: &ModelConfig) -> Result<Self> {
        if f.bands != cfg.bands {
            return Err(Error::Shape(format!("{} bands, model expects {}", f.bands, cfg.bands)));
        }
        if f.frames > cfg.max_frames {
            return Err(Error::Shape(format!(
                "{} frames exceed the positional table ({})",
                f.frames, cfg.max_frames
            )));
        }
        Ok(AudioInput {
            frames: f.frames,
            bands: f.bands,
            data: f
                .data
                .iter()
                .map(|&v| S::of((v - cfg.feature_center) * cfg.feature_scale))
                .collect(),
        })
    }

    pub fn row(&self, t: usize) -> &[S] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }

    pub fn reversed_frames(&self) -> Self {
        let mut out = self.clone();
        for t in 0..self.frames {
            let src = self.frames - 1 - t;
            out.data[t * self.bands..(t + 1) * self.bands].copy_from_slice(self.row(src));
        }
        out
    }
}

/// Guard against a zero-norm projection.
const NORM_EPS: f64 = 1e-12;

/// Intermediate values kept for the backward pass.
struct TowerCache<S> {
    inputs: Vec<Vec<S>>,
    /// Per-position activations.
    elems: Vec<Vec<S>>,
    pooled: Vec<S>,
    hidden: Vec<S>,
    norm: S,
    emb: Vec<S>,
}

fn tanh_affine<S: Scalar>(w: &Tensor<S>, b: &Tensor<S>, x: &[S]) -> Vec<S> {
    affine(w, &b.data, x).into_iter().map(S::tanh).collect()
}

/// `d pre-activation` from `d activation` through `tanh`.
fn tanh_back<S: Scalar>(act: &[S], d: &[S]) -> Vec<S> {
    act.iter().zip(d).map(|(&a, &g)| g * (S::one() - a * a)).collect()
}

impl<S: Scalar> TowerParams<S> {
    fn forward(&self, inputs: Vec<Vec<S>>) -> TowerCache<S> {
        let elems: Vec<Vec<S>> = inputs.iter().map(|x| tanh_affine(&self.w0, &self.b0, x)).collect();
        let mut pooled = vec![S::zero(); self.w0.cols];
        for e in &elems {
            axpy(&mut pooled, S::one(), e);
        }
        let n = S::of(elems.len() as f64);
        pooled.iter_mut().for_each(|v| *v /= n);
        let hidden = tanh_affine(&self.w1, &self.b1, &pooled);
        let out = affine(&self.w2, &self.b2.data, &hidden);
        let norm = dot(&out, &out).sqrt().max(S::of(NORM_EPS));
        let emb = out.iter().map(|&v| v / norm).collect();
        TowerCache {
            inputs,
            elems,
            pooled,
            hidden,
            norm,
            emb,
        }
    }

    /// Accumulate parameter gradients into `g`; returns `dL/dx` per input position.
    fn backward(&self, c: &TowerCache<S>, d_emb: &[S], g: &mut TowerParams<S>) -> Vec<Vec<S>> {
        // d(o/|o|) = (I - e e^T) / |o|
        let proj = dot(&c.emb, d_emb);
        let d_out: Vec<S> = c.emb.iter().zip(d_emb).map(|(&e, &d)| (d - e * proj) / c.norm).collect();
        outer_acc(&mut g.w2, &c.hidden, &d_out);
        axpy(&mut g.b2.data, S::one(), &d_out);
        let d_pre1 = tanh_back(&c.hidden, &affine_back_input(&self.w2, &d_out));
        outer_acc(&mut g.w1, &c.pooled, &d_pre1);
        axpy(&mut g.b1.data, S::one(), &d_pre1);
        let inv_n = S::one() / S::of(c.elems.len() as f64);
        let d_elem: Vec<S> = affine_back_input(&self.w1, &d_pre1).into_iter().map(|v| v * inv_n).collect();
        c.inputs
            .iter()
            .zip(&c.elems)
            .map(|(x, e)| {
                let d_pre0 = tanh_back(e, &d_elem);
                outer_acc(&mut g.w0, x, &d_pre0);
                axpy(&mut g.b0.data, S::one(), &d_pre0);
                affine_back_input(&self.w0, &d_pre0)
            })
            .collect()
    }
}

fn text_inputs<S: Scalar>(p: &DualEncoderParams<S>, tokens: &[usize]) -> Result<Vec<Vec<S>>> {
    if tokens.is_empty() {
        return Err(Error::Empty("caption has no tokens".into()));
    }
    if tokens.len() > p.text_pos.rows {
        return Err(Error::Shape(format!(
            "{} tokens exceed max text length {}",
            tokens.len(),
            p.text_pos.rows
        )));
    }
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t >= p.tok_emb.rows {
                return Err(Error::Shape(format!("token id {t} outside vocabulary")));
            }
            Ok(p.tok_emb.row(t).iter().zip(p.text_pos.row(i)).map(|(&a, &b)| a + b).collect())
        })
        .collect()
}

fn audio_inputs<S: Scalar>(p: &DualEncoderParams<S>, feats: &AudioInput<S>, use_positions: bool) -> Result<Vec<Vec<S>>> {
    if feats.bands != p.audio_proj.rows {
        return Err(Error::Shape(format!("{} bands, model expects {}", feats.bands, p.audio_proj.rows)));
    }
    if feats.frames > p.audio_pos.rows || feats.frames == 0 {
        return Err(Error::Shape(format!("{} frames, table holds {}", feats.frames, p.audio_pos.rows)));
    }
    let zero = vec![S::zero(); p.audio_proj.cols];
    Ok((0..feats.frames)
        .map(|t| {
            let mut x = affine(&p.audio_proj, &zero, feats.row(t));
            if use_positions {
                axpy(&mut x, S::one(), p.audio_pos.row(t));
            }
            x
        })
        .collect())
}

/// Unit-norm caption embedding.
pub fn encode_text<S: Scalar>(p: &DualEncoderParams<S>, tokens: &[usize]) -> Result<Vec<S>> {
    Ok(p.text.forward(text_inputs(p, tokens)?).emb)
}

/// Unit-norm clip embedding.
pub fn encode_audio<S: Scalar>(p: &DualEncoderParams<S>, feats: &AudioInput<S>, use_positions: bool) -> Result<Vec<S>> {
    Ok(p.audio.forward(audio_inputs(p, feats, use_positions)?).emb)
}

/// Token ids of a caption's two positives and two negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveTokens {
    pub positives: [Vec<usize>; 2],
    pub negatives: [Vec<usize>; 2],
}

/// One audio-caption pair; `contrastive` is set for single-cue temporal captions.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a, S> {
    pub audio: &'a AudioInput<S>,
    pub text: &'a [usize],
    pub contrastive: Option<&'a ContrastiveTokens>,
}

/// Objective selection plus temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective<S> {
    pub tau: S,
    /// 0 disables the text-text term.
    pub lambda: S,
    pub margin: S,
    pub use_positions: bool,
}

impl<S: Scalar> Objective<S> {
    pub fn from_config(cfg: &crate::corpus::LossConfig, use_positions: bool) -> Self {
        Objective {
            tau: S::of(cfg.tau),
            lambda: S::of(cfg.lambda),
            margin: S::of(cfg.margin),
            use_positions,
        }
    }
}

/// Breakdown of the combined loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<S> {
    pub total: S,
    pub audio_text: S,
    pub text_text: S,
    /// Anchors that contributed to the text-text term.
    pub n_anchors: usize,
}

/// Caches of one anchor's two positives and two negatives.
struct SetCache<S> {
    item: usize,
    pos: [TowerCache<S>; 2],
    neg: [TowerCache<S>; 2],
}

struct Forward<S> {
    audio: Vec<TowerCache<S>>,
    text: Vec<TowerCache<S>>,
    sets: Vec<SetCache<S>>,
    sims: Vec<S>,
    tt_sims: Vec<TextTextSims<S>>,
}

fn forward_batch<S: Scalar>(p: &DualEncoderParams<S>, batch: &[BatchItem<'_, S>], obj: &Objective<S>) -> Result<Forward<S>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let mut audio = Vec::with_capacity(batch.len());
    let mut text = Vec::with_capacity(batch.len());
    for item in batch {
        audio.push(p.audio.forward(audio_inputs(p, item.audio, obj.use_positions)?));
        text.push(p.text.forward(text_inputs(p, item.text)?));
    }
    let mut sims = Vec::with_capacity(batch.len() * batch.len());
    for a in &audio {
        for t in &text {
            sims.push(dot(&a.emb, &t.emb));
        }
    }
    let mut sets = Vec::new();
    let mut tt_sims = Vec::new();
    if obj.lambda != S::zero() {
        let enc = |toks: &[usize]| -> Result<TowerCache<S>> { Ok(p.text.forward(text_inputs(p, toks)?)) };
        for (i, item) in batch.iter().enumerate() {
            let Some(ct) = item.contrastive else { continue };
            let pos = [enc(&ct.positives[0])?, enc(&ct.positives[1])?];
            let neg = [enc(&ct.negatives[0])?, enc(&ct.negatives[1])?];
            let anchor = &text[i].emb;
            tt_sims.push([
                (dot(anchor, &pos[0].emb), dot(anchor, &neg[0].emb)),
                (dot(anchor, &pos[1].emb), dot(anchor, &neg[1].emb)),
            ]);
            sets.push(SetCache { item: i, pos, neg });
        }
    }
    Ok(Forward {
        audio,
        text,
        sets,
        sims,
        tt_sims,
    })
}

/// Value of `L_ta + lambda * L_tt` on a batch, without gradients.
pub fn combined_loss<S: Scalar>(p: &DualEncoderParams<S>, batch: &[BatchItem<'_, S>], obj: &Objective<S>) -> Result<LossParts<S>> {
    let fw = forward_batch(p, batch, obj)?;
    let (lta, _) = nt_xent_from_sims(&fw.sims, batch.len(), obj.tau)?;
    let (ltt, _) = text_text_from_sims(&fw.tt_sims, obj.margin);
    Ok(LossParts {
        total: lta + obj.lambda * ltt,
        audio_text: lta,
        text_text: ltt,
        n_anchors: fw.tt_sims.len(),
    })
}

/// Loss value and exact gradients with respect to every parameter.
pub fn backward<S: Scalar>(
    p: &DualEncoderParams<S>,
    batch: &[BatchItem<'_, S>],
    obj: &Objective<S>,
) -> Result<(LossParts<S>, Gradients<S>)> {
    let fw = forward_batch(p, batch, obj)?;
    let b = batch.len();
    let (lta, d_sims) = nt_xent_from_sims(&fw.sims, b, obj.tau)?;
    let (ltt, d_tt) = text_text_from_sims(&fw.tt_sims, obj.margin);

    // gradients with respect to the unit embeddings
    let d = p.text.w2.cols;
    let mut d_audio = vec![vec![S::zero(); d]; b];
    let mut d_text = vec![vec![S::zero(); d]; b];
    for i in 0..b {
        for j in 0..b {
            let g = d_sims[i * b + j];
            if g == S::zero() {
                continue;
            }
            axpy(&mut d_audio[i], g, &fw.text[j].emb);
            axpy(&mut d_text[j], g, &fw.audio[i].emb);
        }
    }
    let mut d_sets = Vec::with_capacity(fw.sets.len());
    for (set, g) in fw.sets.iter().zip(&d_tt) {
        let i = set.item;
        let mut dp = [vec![S::zero(); d], vec![S::zero(); d]];
        let mut dn = [vec![S::zero(); d], vec![S::zero(); d]];
        for k in 0..2 {
            let (gp, gn) = (g[k].0 * obj.lambda, g[k].1 * obj.lambda);
            if gp != S::zero() {
                axpy(&mut d_text[i], gp, &set.pos[k].emb);
                axpy(&mut dp[k], gp, &fw.text[i].emb);
            }
            if gn != S::zero() {
                axpy(&mut d_text[i], gn, &set.neg[k].emb);
                axpy(&mut dn[k], gn, &fw.text[i].emb);
            }
        }
        d_sets.push((dp, dn));
    }

    let mut grads = p.zeros_like();
    let text_back = |cache: &TowerCache<S>, de: &[S], toks: &[usize], g: &mut Gradients<S>| {
        let dx = p.text.backward(cache, de, &mut g.text);
        for (pos, (&t, dxi)) in toks.iter().zip(&dx).enumerate() {
            axpy(g.tok_emb.row_mut(t), S::one(), dxi);
            axpy(g.text_pos.row_mut(pos), S::one(), dxi);
        }
    };
    for (j, item) in batch.iter().enumerate() {
        text_back(&fw.text[j], &d_text[j], item.text, &mut grads);
    }
    for (set, (dp, dn)) in fw.sets.iter().zip(&d_sets) {
        let ct = batch[set.item].contrastive.expect("set built from contrastive item");
        for k in 0..2 {
            text_back(&set.pos[k], &dp[k], &ct.positives[k], &mut grads);
            text_back(&set.neg[k], &dn[k], &ct.negatives[k], &mut grads);
        }
    }
    for (i, item) in batch.iter().enumerate() {
        let dx = p.audio.backward(&fw.audio[i], &d_audio[i], &mut grads.audio);
        for (t, dxt) in dx.iter().enumerate() {
            outer_acc(&mut grads.audio_proj, item.audio.row(t), dxt);
            if obj.use_positions {
                axpy(grads.audio_pos.row_mut(t), S::one(), dxt);
            }
        }
    }
    Ok((
        LossParts {
            total: lta + obj.lambda * ltt,
            audio_text: lta,
            text_text: ltt,
            n_anchors: fw.tt_sims.len(),
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::l2_norm;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_tok: 6,
            hidden: 7,
            d_out: 5,
            max_text_len: 8,
            max_frames: 6,
            init_scale: 0.5,
            ..ModelConfig::new(10, 3)
        }
    }

    fn audio(frames: usize, bands: usize, seed: u64) -> AudioInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioInput {
            frames,
            bands,
            data: (0..frames * bands).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let p = DualEncoderParams::<f64>::init(&ModelConfig::new(20, 8), 1);
        let e = encode_text(&p, &[3, 4, 5]).unwrap();
        assert!((l2_norm(&e) - 1.0).abs() < 1e-6);
        assert_eq!(e, encode_text(&p, &[3, 4, 5]).unwrap());
        let a = encode_audio(&p, &audio(20, 8, 2), true).unwrap();
        assert!((l2_norm(&a) - 1.0).abs() < 1e-6);
        let p32: DualEncoderParams<f32> = p.cast();
        let e32 = encode_text(&p32, &[3, 4, 5]).unwrap();
        assert!((l2_norm(&e32) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn word_order_changes_text_embedding() {
        let p = DualEncoderParams::<f64>::init(&ModelConfig::new(20, 8), 3);
        let ab = encode_text(&p, &[1, 2, 3]).unwrap();
        let ba = encode_text(&p, &[3, 2, 1]).unwrap();
        assert!(ab.iter().zip(&ba).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn frame_order_matters_only_with_positions() {
        let p = DualEncoderParams::<f64>::init(&ModelConfig::new(20, 8), 3);
        let f = audio(20, 8, 9);
        let r = f.reversed_frames();
        let a = encode_audio(&p, &f, false).unwrap();
        let b = encode_audio(&p, &r, false).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        let a = encode_audio(&p, &f, true).unwrap();
        let b = encode_audio(&p, &r, true).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn encoder_errors() {
        let p = DualEncoderParams::<f64>::init(&small_cfg(), 0);
        assert!(matches!(encode_text(&p, &[]), Err(Error::Empty(_))));
        assert!(encode_text(&p, &[99]).is_err());
        assert!(encode_text(&p, &[1; 9]).is_err());
        assert!(encode_audio(&p, &audio(7, 3, 0), true).is_err());
    }

    #[test]
    fn tokenizer_fuses_cues() {
        let lex = CueLexicon::default();
        assert_eq!(
            tokenize("Dog barking, followed by Rain.", &lex),
            vec!["dog", "barking", "followed_by", "rain"]
        );
        let v = Vocab::build(["a dog preceded by rain"], &lex);
        assert_eq!(v.tokens()[0], UNK);
        assert_eq!(v.encode("a cat preceded by rain", &lex, 32), vec![v.id("a"), 0, v.id("preceded_by"), v.id("rain")]);
    }

    #[test]
    fn unused_position_rows_get_zero_gradient() {
        let cfg = small_cfg();
        let p = DualEncoderParams::<f64>::init(&cfg, 4);
        let (a0, a1) = (audio(4, 3, 1), audio(4, 3, 2));
        let t0 = vec![1, 2, 3];
        let t1 = vec![3, 2, 1];
        let batch = [
            BatchItem { audio: &a0, text: &t0, contrastive: None },
            BatchItem { audio: &a1, text: &t1, contrastive: None },
        ];
        let obj = Objective { tau: 0.1, lambda: 0.0, margin: 0.2, use_positions: true };
        let (_, g) = backward(&p, &batch, &obj).unwrap();
        for r in 3..cfg.max_text_len {
            assert!(g.text_pos.row(r).iter().all(|&v| v == 0.0));
        }
        for r in 4..cfg.max_frames {
            assert!(g.audio_pos.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_value_matches_forward() {
        let cfg = small_cfg();
        let p = DualEncoderParams::<f64>::init(&cfg, 5);
        let a: Vec<_> = (0..3).map(|i| audio(5, 3, i)).collect();
        let texts = [vec![1, 2, 3], vec![4, 5], vec![6, 7, 8, 9]];
        let ct = ContrastiveTokens {
            positives: [vec![1, 3, 2], vec![2, 1, 3]],
            negatives: [vec![3, 2, 1], vec![1, 1, 2]],
        };
        let batch: Vec<_> = (0..3)
            .map(|i| BatchItem { audio: &a[i], text: &texts[i], contrastive: (i == 0).then_some(&ct) })
            .collect();
        let obj = Objective { tau: 0.07, lambda: 10.0, margin: 0.2, use_positions: true };
        let (parts, _) = backward(&p, &batch, &obj).unwrap();
        let fwd = combined_loss(&p, &batch, &obj).unwrap();
        assert!((parts.total - fwd.total).abs() <= 1e-12);
        assert_eq!(parts.n_anchors, 1);
    }

    /// Max over entries of |analytic - numeric| / max(|analytic|_inf, |numeric|_inf) per block.
    fn fd_block_errors(lambda: f64, use_positions: bool) -> Vec<(&'static str, f64)> {
        let cfg = small_cfg();
        let p = DualEncoderParams::<f64>::init(&cfg, 11);
        let a: Vec<_> = (0..4).map(|i| audio(5, 3, 20 + i)).collect();
        let texts = [vec![1, 2, 3], vec![4, 5], vec![6, 7, 8, 9], vec![2, 2]];
        let ct = ContrastiveTokens {
            positives: [vec![1, 3, 2], vec![2, 1, 3]],
            negatives: [vec![3, 2, 1], vec![1, 1, 2]],
        };
        let batch: Vec<_> = (0..4)
            .map(|i| BatchItem { audio: &a[i], text: &texts[i], contrastive: (i < 2).then_some(&ct) })
            .collect();
        let obj = Objective { tau: 0.07, lambda, margin: 0.2, use_positions };
        let (_, g) = backward(&p, &batch, &obj).unwrap();
        let h = 1e-3;
        let mut out = Vec::new();
        for (bi, name) in BLOCK_NAMES.iter().enumerate() {
            let n = p.blocks()[bi].data.len();
            let mut num = vec![0.0; n];
            for (e, slot) in num.iter_mut().enumerate() {
                let mut q = p.clone();
                q.blocks_mut()[bi].data[e] += h;
                let up = combined_loss(&q, &batch, &obj).unwrap().total;
                q.blocks_mut()[bi].data[e] -= 2.0 * h;
                let down = combined_loss(&q, &batch, &obj).unwrap().total;
                *slot = (up - down) / (2.0 * h);
            }
            let ana = &g.blocks()[bi].data;
            let scale = ana.iter().chain(&num).fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = ana.iter().zip(&num).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            out.push((*name, if scale == 0.0 { 0.0 } else { diff / scale }));
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (lambda, pos) in [(0.0, true), (10.0, true), (10.0, false)] {
            for (name, err) in fd_block_errors(lambda, pos) {
                assert!(err < 1e-4, "lambda {lambda} positions {pos}: {name} rel err {err:e}");
            }
        }
    }
}
