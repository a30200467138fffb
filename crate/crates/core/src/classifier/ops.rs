// SPDX-License-Identifier: Apache-2.0

//! Dense kernels on row-major `f64` slices.

pub(crate) const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over entries where `mask` is true; masked entries get exactly 0.
/// A row with no unmasked entries is all zeros.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; scores.len()];
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `out[rows x cols] = x[rows x inner] * w[inner x cols] + b[cols]`
pub(crate) fn affine(x: &[f64], w: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        out.extend_from_slice(b);
        let row = &mut out[r * cols..(r + 1) * cols];
        for (k, &xv) in x[r * inner..(r + 1) * inner].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[k * cols..(k + 1) * cols];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Backward of [`affine`]: accumulates `dw += x^T dy`, `db += sum_rows dy`
/// and returns `dx = dy w^T`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    rows: usize,
    inner: usize,
    cols: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * inner];
    for r in 0..rows {
        let dyr = &dy[r * cols..(r + 1) * cols];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        let xr = &x[r * inner..(r + 1) * inner];
        let dxr = &mut dx[r * inner..(r + 1) * inner];
        for k in 0..inner {
            let wrow = &w[k * cols..(k + 1) * cols];
            let dwrow = &mut dw[k * cols..(k + 1) * cols];
            let xv = xr[k];
            let mut acc = 0.0;
            for c in 0..cols {
                dwrow[c] += xv * dyr[c];
                acc += dyr[c] * wrow[c];
            }
            dxr[k] = acc;
        }
    }
    dx
}

pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Row-wise layer normalisation with gain `g` and bias `b`.
pub(crate) fn layer_norm(x: &[f64], g: &[f64], b: &[f64], dim: usize) -> (Vec<f64>, LnCache) {
    let rows = x.len() / dim;
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(rows);
    for row in x.chunks_exact(dim) {
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for i in 0..dim {
            let h = (row[i] - mean) * inv;
            xhat.push(h);
            y.push(h * g[i] + b[i]);
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    g: &[f64],
    cache: &LnCache,
    dg: &mut [f64],
    db: &mut [f64],
    dim: usize,
) -> Vec<f64> {
    let mut dx = Vec::with_capacity(dy.len());
    let n = dim as f64;
    for (r, dyr) in dy.chunks_exact(dim).enumerate() {
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for i in 0..dim {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            let dxh = dyr[i] * g[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
        }
        mean_dxh /= n;
        mean_dxh_xh /= n;
        let inv = cache.inv_std[r];
        for i in 0..dim {
            let dxh = dyr[i] * g[i];
            dx.push(inv * (dxh - mean_dxh - xh[i] * mean_dxh_xh));
        }
    }
    dx
}

/// Sinusoidal position encoding for one position.
pub(crate) fn position_encoding(pos: usize, dim: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(dim) {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        *o = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}
