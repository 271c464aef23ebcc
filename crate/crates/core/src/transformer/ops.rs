//! Dense row-major kernels and their gradients.

pub const LN_EPS: f64 = 1e-5;

/// `x[n×k] · w[k×m] + b[m]`.
pub fn linear(x: &[f64], n: usize, k: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    let mut y = Vec::with_capacity(n * m);
    for r in 0..n {
        y.extend_from_slice(b);
        let row = &mut y[r * m..(r + 1) * m];
        for (i, &xv) in x[r * k..(r + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (yv, &wv) in row.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·wᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    n: usize,
    k: usize,
    w: &[f64],
    m: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * k];
    for r in 0..n {
        let dyr = &dy[r * m..(r + 1) * m];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        let xr = &x[r * k..(r + 1) * k];
        let dxr = &mut dx[r * k..(r + 1) * k];
        for i in 0..k {
            let wr = &w[i * m..(i + 1) * m];
            let dwr = &mut dw[i * m..(i + 1) * m];
            let mut acc = 0.0;
            for c in 0..m {
                dwr[c] += xr[i] * dyr[c];
                acc += dyr[c] * wr[c];
            }
            dxr[i] = acc;
        }
    }
    dx
}

pub struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-row layer normalization with affine `gamma`, `beta`.
pub fn layer_norm(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gamma[c] * h + beta[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    cache: &NormCache,
    n: usize,
    d: usize,
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let (mut sum, mut dot) = (0.0, 0.0);
        for c in 0..d {
            dgamma[c] += g[c] * xh[c];
            dbeta[c] += g[c];
            dxhat[c] = g[c] * gamma[c];
            sum += dxhat[c];
            dot += dxhat[c] * xh[c];
        }
        let scale = cache.inv_std[r] / d as f64;
        for c in 0..d {
            dx[r * d + c] = scale * (d as f64 * dxhat[c] - sum - xh[c] * dot);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// In-place softmax of each length-`m` row.
pub fn softmax_rows(s: &mut [f64], m: usize) {
    for row in s.chunks_mut(m) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a label in [0, 1], overflow-free.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
