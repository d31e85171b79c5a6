//! Adam optimizer over [`DualEncoderParams`].

use serde::{Deserialize, Serialize};

use crate::model::{DualEncoderParams, Gradients};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub cfg: AdamConfig,
    m: DualEncoderParams<S>,
    v: DualEncoderParams<S>,
    step: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, params: &DualEncoderParams<S>) -> Self {
        Adam {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut DualEncoderParams<S>, grads: &Gradients<S>) {
        self.step += 1;
        let (b1, b2) = (S::of(self.cfg.beta1), S::of(self.cfg.beta2));
        let lr = S::of(self.cfg.lr);
        let eps = S::of(self.cfg.eps);
        let c1 = S::one() - b1.powi(self.step);
        let c2 = S::one() - b2.powi(self.step);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut().into_iter().zip(self.v.blocks_mut()));
        for ((p, g), (m, v)) in blocks {
            for (((p, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_gradient_sign() {
        let cfg = ModelConfig { d_tok: 2, hidden: 2, d_out: 2, max_text_len: 2, max_frames: 2, ..ModelConfig::new(3, 2) };
        let mut p = DualEncoderParams::<f64>::init(&cfg, 0);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.text.w1.data[0] = 3.0;
        g.audio.b2.data[1] = -0.5;
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(&mut p, &g);
        assert!((before.text.w1.data[0] - p.text.w1.data[0] - 1e-3).abs() < 1e-9);
        assert!((p.audio.b2.data[1] - before.audio.b2.data[1] - 1e-3).abs() < 1e-9);
        assert_eq!(p.tok_emb, before.tok_emb);
        assert_eq!(opt.steps(), 1);
    }
}
