//! Cosine similarity, bidirectional NT-Xent and the text-text margin loss.

use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Scalar};

pub fn cosine<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of {} vs {} dims", u.len(), v.len())));
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == S::zero() || nv == S::zero() {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-S::one()).min(S::one()))
}

fn log_sum_exp<S: Scalar>(xs: impl Iterator<Item = S> + Clone) -> S {
    let m = xs.clone().fold(S::neg_infinity(), S::max);
    m + xs.map(|x| (x - m).exp()).sum::<S>().ln()
}

/// NT-Xent over a `B x B` similarity matrix (row `i` = audio `i`, column `j`
/// = text `j`, matched pairs on the diagonal), with its gradient
/// `dL/ds_ij`, row-major.
pub fn nt_xent_from_sims<S: Scalar>(sims: &[S], b: usize, tau: S) -> Result<(S, Vec<S>)> {
    if sims.len() != b * b || b == 0 {
        return Err(Error::Shape(format!("{} similarities for batch {b}", sims.len())));
    }
    if !(tau > S::zero()) {
        return Err(Error::InvalidArgument("temperature must be > 0".into()));
    }
    let at = |i: usize, j: usize| sims[i * b + j] / tau;
    let row_lse: Vec<S> = (0..b).map(|i| log_sum_exp((0..b).map(move |j| at(i, j)))).collect();
    let col_lse: Vec<S> = (0..b).map(|j| log_sum_exp((0..b).map(move |i| at(i, j)))).collect();

    let two_b = S::of(2.0 * b as f64);
    let mut loss = S::zero();
    for i in 0..b {
        loss += (row_lse[i] - at(i, i)) + (col_lse[i] - at(i, i));
    }
    loss /= two_b;

    let scale = S::one() / (two_b * tau);
    let mut grad = vec![S::zero(); b * b];
    for i in 0..b {
        for j in 0..b {
            let l = at(i, j);
            let mut g = (l - row_lse[i]).exp() + (l - col_lse[j]).exp();
            if i == j {
                g -= S::of(2.0);
            }
            grad[i * b + j] = g * scale;
        }
    }
    Ok((loss, grad))
}

/// Bidirectional NT-Xent between row-matched audio and text embeddings.
pub fn nt_xent<S: Scalar>(audio_embs: &[Vec<S>], text_embs: &[Vec<S>], tau: S) -> Result<S> {
    let b = audio_embs.len();
    if text_embs.len() != b {
        return Err(Error::Shape(format!("{b} audio vs {} text embeddings", text_embs.len())));
    }
    let mut sims = Vec::with_capacity(b * b);
    for a in audio_embs {
        for t in text_embs {
            sims.push(cosine(a, t)?);
        }
    }
    Ok(nt_xent_from_sims(&sims, b, tau)?.0)
}

/// Similarities `(s(anchor, pos_k), s(anchor, neg_k))` for one anchor.
pub type TextTextSims<S> = [(S, S); 2];

/// `1/(2N) * sum_n sum_k max(0, margin - s_pos + s_neg)`, and the gradient
/// with respect to each `(s_pos, s_neg)`. Returns 0 for `N = 0`.
pub fn text_text_from_sims<S: Scalar>(
    sims: &[TextTextSims<S>],
    margin: S,
) -> (S, Vec<TextTextSims<S>>) {
    let n = sims.len();
    if n == 0 {
        return (S::zero(), Vec::new());
    }
    let w = S::one() / S::of(2.0 * n as f64);
    let mut loss = S::zero();
    let mut grads = Vec::with_capacity(n);
    for pair in sims {
        let mut g = [(S::zero(), S::zero()); 2];
        for (k, &(sp, sn)) in pair.iter().enumerate() {
            let h = margin - sp + sn;
            if h > S::zero() {
                loss += h;
                g[k] = (-w, w);
            }
        }
        grads.push(g);
    }
    (loss * w, grads)
}

/// Text-text margin loss over anchors with two positives and two negatives each.
pub fn text_text<S: Scalar>(
    anchor_embs: &[Vec<S>],
    pos_embs: &[[Vec<S>; 2]],
    neg_embs: &[[Vec<S>; 2]],
    margin: S,
) -> Result<S> {
    let n = anchor_embs.len();
    if pos_embs.len() != n || neg_embs.len() != n {
        return Err(Error::Shape(format!(
            "{n} anchors, {} positive pairs, {} negative pairs",
            pos_embs.len(),
            neg_embs.len()
        )));
    }
    let mut sims = Vec::with_capacity(n);
    for i in 0..n {
        let a = &anchor_embs[i];
        sims.push([
            (cosine(a, &pos_embs[i][0])?, cosine(a, &neg_embs[i][0])?),
            (cosine(a, &pos_embs[i][1])?, cosine(a, &neg_embs[i][1])?),
        ]);
    }
    Ok(text_text_from_sims(&sims, margin).0)
}
