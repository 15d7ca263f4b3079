//! Shared numeric kernels used by both forward ops and backward rules.

/// Row-major matrix product: `a` is m×k, `b` is k×n, output m×n.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `g` is m×n, `b` is k×n; returns g·bᵀ of shape m×k.
pub(crate) fn matmul_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += grow[j] * brow[j];
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `a` is m×k, `g` is m×n; returns aᵀ·g of shape k×n.
pub(crate) fn matmul_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * grow[j];
            }
        }
    }
    out
}

/// Max-shifted softmax over each contiguous row of length `last`.
pub(crate) fn softmax_rows(x: &[f64], last: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks_exact(last).zip(out.chunks_exact_mut(last)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            denom += e;
        }
        for o in orow.iter_mut() {
            *o /= denom;
        }
    }
    out
}

/// Sliding-window means with stride 1. When the sequence is shorter than the
/// window, falls back to a single window covering the whole sequence.
pub fn sliding_window_means(x: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window length must be >= 1");
    assert!(!x.is_empty(), "sequence must be non-empty");
    let g = window.min(x.len());
    let count = x.len() - g + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut sum = 0.0;
        for &v in &x[i..i + g] {
            sum += v;
        }
        out.push(sum / g as f64);
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximation GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Per-row mean and 1/sqrt(var + eps) over trailing dimension `last`.
pub(crate) fn layer_norm_stats(x: &[f64], last: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / last;
    let mut means = Vec::with_capacity(rows);
    let mut inv_stds = Vec::with_capacity(rows);
    for row in x.chunks_exact(last) {
        let mean = row.iter().sum::<f64>() / last as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
        means.push(mean);
        inv_stds.push(1.0 / (var + eps).sqrt());
    }
    (means, inv_stds)
}
