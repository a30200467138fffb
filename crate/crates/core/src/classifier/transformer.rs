// SPDX-License-Identifier: Apache-2.0

//! Post-norm transformer encoder with mean pooling and a linear head.
//!
//! Each block is masked multi-head self-attention, add & norm, a GELU
//! feed-forward layer, add & norm. Only unmasked positions are pooled.
//! Forward caches everything the hand-written backward pass needs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    affine, affine_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, masked_softmax, position_encoding,
    LnCache,
};
use super::params::{Init, ParamStore};
use super::EncoderConfig;

#[derive(Debug, Clone)]
pub(crate) struct LayerOffsets {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct TransformerLayout {
    pub cfg: EncoderConfig,
    pub vocab_size: usize,
    tok_emb: usize,
    layers: Vec<LayerOffsets>,
    pub head_w: usize,
    pub head_b: usize,
}

impl TransformerLayout {
    pub fn register(cfg: &EncoderConfig, vocab_size: usize, outputs: usize, p: &mut ParamStore) -> Self {
        let d = cfg.hidden_dim;
        let f = cfg.ff_dim;
        let tok_emb = p.register("tok_emb", &[vocab_size, d], Init::Embedding);
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut reg = |n: &str, dims: &[usize], init| p.register(format!("layer{l}.{n}"), dims, init);
                LayerOffsets {
                    wq: reg("wq", &[d, d], Init::Glorot),
                    bq: reg("bq", &[d], Init::Zeros),
                    wk: reg("wk", &[d, d], Init::Glorot),
                    bk: reg("bk", &[d], Init::Zeros),
                    wv: reg("wv", &[d, d], Init::Glorot),
                    bv: reg("bv", &[d], Init::Zeros),
                    wo: reg("wo", &[d, d], Init::Glorot),
                    bo: reg("bo", &[d], Init::Zeros),
                    ln1_g: reg("ln1_g", &[d], Init::Ones),
                    ln1_b: reg("ln1_b", &[d], Init::Zeros),
                    w1: reg("w1", &[d, f], Init::Glorot),
                    b1: reg("b1", &[f], Init::Zeros),
                    w2: reg("w2", &[f, d], Init::Glorot),
                    b2: reg("b2", &[d], Init::Zeros),
                    ln2_g: reg("ln2_g", &[d], Init::Ones),
                    ln2_b: reg("ln2_b", &[d], Init::Zeros),
                }
            })
            .collect();
        let head_w = p.register("head_w", &[d, outputs], Init::Glorot);
        let head_b = p.register("head_b", &[outputs], Init::Zeros);
        Self {
            cfg: cfg.clone(),
            vocab_size,
            tok_emb,
            layers,
            head_w,
            head_b,
        }
    }
}

struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads x T x T
    attn: Vec<f64>,
    ctx: Vec<f64>,
    drop_attn: Option<Vec<f64>>,
    ln1: LnCache,
    y1: Vec<f64>,
    pre: Vec<f64>,
    hid: Vec<f64>,
    drop_ff: Option<Vec<f64>>,
    ln2: LnCache,
}

pub(crate) struct ForwardCache {
    ids: Vec<u32>,
    key_mask: Vec<bool>,
    n_real: usize,
    layers: Vec<LayerCache>,
    pub pooled: Vec<f64>,
}

fn slice(p: &[f64], off: usize, len: usize) -> &[f64] {
    &p[off..off + len]
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

impl TransformerLayout {
    /// Encodes `ids` at positions `0..ids.len()`. Attention keys and pooling
    /// are restricted to positions where `key_mask` is true. With no unmasked
    /// position the pooled vector is zero.
    pub fn forward(
        &self,
        p: &[f64],
        ids: &[u32],
        key_mask: &[bool],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> ForwardCache {
        let d = self.cfg.hidden_dim;
        let t = ids.len();
        let n_real = key_mask.iter().filter(|&&m| m).count();
        let mut cache = ForwardCache {
            ids: ids.to_vec(),
            key_mask: key_mask.to_vec(),
            n_real,
            layers: Vec::with_capacity(self.layers.len()),
            pooled: vec![0.0; d],
        };
        if n_real == 0 {
            return cache;
        }
        let mut x = vec![0.0; t * d];
        let emb = slice(p, self.tok_emb, self.vocab_size * d);
        for (i, &id) in ids.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            position_encoding(i, d, row);
            for (o, e) in row.iter_mut().zip(&emb[id as usize * d..(id as usize + 1) * d]) {
                *o += e;
            }
        }
        for lo in &self.layers {
            let rate = self.cfg.dropout;
            let (out, lc) = self.layer_forward(p, lo, x, key_mask, dropout.as_deref_mut().filter(|_| rate > 0.0));
            cache.layers.push(lc);
            x = out;
        }
        for i in (0..t).filter(|&i| key_mask[i]) {
            for j in 0..d {
                cache.pooled[j] += x[i * d + j];
            }
        }
        cache.pooled.iter_mut().for_each(|v| *v /= n_real as f64);
        cache
    }

    fn layer_forward(
        &self,
        p: &[f64],
        lo: &LayerOffsets,
        x: Vec<f64>,
        key_mask: &[bool],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, LayerCache) {
        let d = self.cfg.hidden_dim;
        let f = self.cfg.ff_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let t = x.len() / d;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = affine(&x, slice(p, lo.wq, d * d), slice(p, lo.bq, d), t, d, d);
        let k = affine(&x, slice(p, lo.wk, d * d), slice(p, lo.bk, d), t, d, d);
        let v = affine(&x, slice(p, lo.wv, d * d), slice(p, lo.bv, d), t, d, d);

        let mut attn = vec![0.0; heads * t * t];
        let mut ctx = vec![0.0; t * d];
        let mut scores = vec![0.0; t];
        for h in 0..heads {
            let hs = h * dh;
            for i in 0..t {
                let qi = &q[i * d + hs..i * d + hs + dh];
                for j in 0..t {
                    scores[j] = if key_mask[j] {
                        let kj = &k[j * d + hs..j * d + hs + dh];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    } else {
                        0.0
                    };
                }
                let row = masked_softmax(&scores, key_mask);
                let ci = &mut ctx[i * d + hs..i * d + hs + dh];
                for (j, &a) in row.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (c, vv) in ci.iter_mut().zip(&v[j * d + hs..j * d + hs + dh]) {
                        *c += a * vv;
                    }
                }
                attn[(h * t + i) * t..(h * t + i + 1) * t].copy_from_slice(&row);
            }
        }

        let mut a = affine(&ctx, slice(p, lo.wo, d * d), slice(p, lo.bo, d), t, d, d);
        let drop_attn = dropout.as_deref_mut().map(|rng| {
            let m = dropout_mask(rng, a.len(), self.cfg.dropout);
            a.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
            m
        });
        let r1: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + a).collect();
        let (y1, ln1) = layer_norm(&r1, slice(p, lo.ln1_g, d), slice(p, lo.ln1_b, d), d);

        let pre = affine(&y1, slice(p, lo.w1, d * f), slice(p, lo.b1, f), t, d, f);
        let hid: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
        let mut ff = affine(&hid, slice(p, lo.w2, f * d), slice(p, lo.b2, d), t, f, d);
        let drop_ff = dropout.map(|rng| {
            let m = dropout_mask(rng, ff.len(), self.cfg.dropout);
            ff.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
            m
        });
        let r2: Vec<f64> = y1.iter().zip(&ff).map(|(y, f)| y + f).collect();
        let (out, ln2) = layer_norm(&r2, slice(p, lo.ln2_g, d), slice(p, lo.ln2_b, d), d);

        (
            out,
            LayerCache {
                x,
                q,
                k,
                v,
                attn,
                ctx,
                drop_attn,
                ln1,
                y1,
                pre,
                hid,
                drop_ff,
                ln2,
            },
        )
    }

    /// Attention weights of every layer, `[layer][head][query][key]`.
    pub fn attention_maps(&self, p: &[f64], ids: &[u32], key_mask: &[bool]) -> Vec<Vec<Vec<Vec<f64>>>> {
        let cache = self.forward(p, ids, key_mask, None);
        let t = ids.len();
        cache
            .layers
            .iter()
            .map(|lc| {
                (0..self.cfg.heads)
                    .map(|h| {
                        (0..t)
                            .map(|i| lc.attn[(h * t + i) * t..(h * t + i + 1) * t].to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` given `d_pooled`.
    pub fn backward(&self, p: &[f64], cache: &ForwardCache, d_pooled: &[f64], grad: &mut [f64]) {
        if cache.n_real == 0 {
            return;
        }
        let d = self.cfg.hidden_dim;
        let t = cache.ids.len();
        let mut dx = vec![0.0; t * d];
        let inv = 1.0 / cache.n_real as f64;
        for i in (0..t).filter(|&i| cache.key_mask[i]) {
            for j in 0..d {
                dx[i * d + j] = d_pooled[j] * inv;
            }
        }
        for (lo, lc) in self.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(p, lo, lc, &cache.key_mask, &dx, grad);
        }
        for (i, &id) in cache.ids.iter().enumerate() {
            let off = self.tok_emb + id as usize * d;
            for j in 0..d {
                grad[off + j] += dx[i * d + j];
            }
        }
    }

    fn layer_backward(
        &self,
        p: &[f64],
        lo: &LayerOffsets,
        lc: &LayerCache,
        key_mask: &[bool],
        d_out: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let d = self.cfg.hidden_dim;
        let f = self.cfg.ff_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let t = d_out.len() / d;
        let scale = 1.0 / (dh as f64).sqrt();

        // The offsets of one layer are disjoint, so split `grad` by copying
        // each gradient slice out and back.
        macro_rules! g {
            ($off:expr, $len:expr) => {
                grad[$off..$off + $len].to_vec()
            };
        }
        macro_rules! put {
            ($off:expr, $v:expr) => {
                grad[$off..$off + $v.len()].copy_from_slice(&$v)
            };
        }

        // second add & norm
        let (mut dg, mut db) = (g!(lo.ln2_g, d), g!(lo.ln2_b, d));
        let dr2 = layer_norm_backward(d_out, slice(p, lo.ln2_g, d), &lc.ln2, &mut dg, &mut db, d);
        put!(lo.ln2_g, dg);
        put!(lo.ln2_b, db);

        let mut dy1 = dr2.clone();
        let mut dff = dr2;
        if let Some(m) = &lc.drop_ff {
            dff.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }
        let (mut dw2, mut db2) = (g!(lo.w2, f * d), g!(lo.b2, d));
        let dhid = affine_backward(&lc.hid, slice(p, lo.w2, f * d), &dff, &mut dw2, &mut db2, t, f, d);
        put!(lo.w2, dw2);
        put!(lo.b2, db2);
        let dpre: Vec<f64> = dhid.iter().zip(&lc.pre).map(|(g, &z)| g * gelu_grad(z)).collect();
        let (mut dw1, mut db1) = (g!(lo.w1, d * f), g!(lo.b1, f));
        let dy1_ff = affine_backward(&lc.y1, slice(p, lo.w1, d * f), &dpre, &mut dw1, &mut db1, t, d, f);
        put!(lo.w1, dw1);
        put!(lo.b1, db1);
        dy1.iter_mut().zip(&dy1_ff).for_each(|(a, b)| *a += b);

        // first add & norm
        let (mut dg, mut db) = (g!(lo.ln1_g, d), g!(lo.ln1_b, d));
        let dr1 = layer_norm_backward(&dy1, slice(p, lo.ln1_g, d), &lc.ln1, &mut dg, &mut db, d);
        put!(lo.ln1_g, dg);
        put!(lo.ln1_b, db);

        let mut dx = dr1.clone();
        let mut da = dr1;
        if let Some(m) = &lc.drop_attn {
            da.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }
        let (mut dwo, mut dbo) = (g!(lo.wo, d * d), g!(lo.bo, d));
        let dctx = affine_backward(&lc.ctx, slice(p, lo.wo, d * d), &da, &mut dwo, &mut dbo, t, d, d);
        put!(lo.wo, dwo);
        put!(lo.bo, dbo);

        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut da_row = vec![0.0; t];
        for h in 0..heads {
            let hs = h * dh;
            for i in 0..t {
                let a_row = &lc.attn[(h * t + i) * t..(h * t + i + 1) * t];
                let dci = &dctx[i * d + hs..i * d + hs + dh];
                let mut dot = 0.0;
                for j in 0..t {
                    if !key_mask[j] {
                        da_row[j] = 0.0;
                        continue;
                    }
                    let vj = &lc.v[j * d + hs..j * d + hs + dh];
                    da_row[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += a_row[j] * da_row[j];
                    for (dvv, &g) in dv[j * d + hs..j * d + hs + dh].iter_mut().zip(dci) {
                        *dvv += a_row[j] * g;
                    }
                }
                for j in 0..t {
                    if !key_mask[j] {
                        continue;
                    }
                    let ds = a_row[j] * (da_row[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + hs + c] += ds * lc.k[j * d + hs + c];
                        dk[j * d + hs + c] += ds * lc.q[i * d + hs + c];
                    }
                }
            }
        }
        for (w, b, dy) in [(lo.wq, lo.bq, &dq), (lo.wk, lo.bk, &dk), (lo.wv, lo.bv, &dv)] {
            let (mut dw, mut dbb) = (g!(w, d * d), g!(b, d));
            let dxi = affine_backward(&lc.x, slice(p, w, d * d), dy, &mut dw, &mut dbb, t, d, d);
            put!(w, dw);
            put!(b, dbb);
            dx.iter_mut().zip(&dxi).for_each(|(a, b)| *a += b);
        }
        dx
    }
}
