// SPDX-License-Identifier: Apache-2.0

//! Bag-of-subwords linear classifier: the hidden vector is the mean of the
//! embeddings of every feature (word ids and hashed character n-grams),
//! followed by an affine output layer.

use super::params::{Init, ParamStore};
use super::LinearConfig;

#[derive(Debug, Clone)]
pub(crate) struct LinearLayout {
    pub cfg: LinearConfig,
    /// Word ids occupy rows `0..vocab_size`; n-gram buckets follow.
    pub vocab_size: usize,
    emb: usize,
    pub head_w: usize,
    pub head_b: usize,
}

impl LinearLayout {
    pub fn register(cfg: &LinearConfig, vocab_size: usize, outputs: usize, p: &mut ParamStore) -> Self {
        let rows = vocab_size + cfg.buckets as usize;
        let emb = p.register("emb", &[rows, cfg.dim], Init::Embedding);
        let head_w = p.register("head_w", &[cfg.dim, outputs], Init::Glorot);
        let head_b = p.register("head_b", &[outputs], Init::Zeros);
        Self {
            cfg: cfg.clone(),
            vocab_size,
            emb,
            head_w,
            head_b,
        }
    }

    pub fn rows(&self) -> usize {
        self.vocab_size + self.cfg.buckets as usize
    }

    /// Mean embedding of `features`, summed in ascending feature order so the
    /// result does not depend on how the features were produced.
    pub fn hidden(&self, p: &[f64], features: &[u32]) -> Vec<f64> {
        let d = self.cfg.dim;
        let mut h = vec![0.0; d];
        if features.is_empty() {
            return h;
        }
        debug_assert!(features.windows(2).all(|w| w[0] <= w[1]));
        for &f in features {
            let row = &p[self.emb + f as usize * d..self.emb + (f as usize + 1) * d];
            h.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let n = features.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    pub fn backward_hidden(&self, features: &[u32], d_hidden: &[f64], grad: &mut [f64]) {
        if features.is_empty() {
            return;
        }
        let d = self.cfg.dim;
        let inv = 1.0 / features.len() as f64;
        for &f in features {
            let row = &mut grad[self.emb + f as usize * d..self.emb + (f as usize + 1) * d];
            row.iter_mut().zip(d_hidden).for_each(|(g, dh)| *g += dh * inv);
        }
    }
}
