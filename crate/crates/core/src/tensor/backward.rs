//! Reverse sweep: visits nodes in exact reverse append order and applies the
//! local gradient rule of each recorded operation.

use super::kernels;
use super::{GradientStore, GraphInner, Node, Op};
use crate::error::TensorError;

pub(crate) fn run(graph: &GraphInner, loss_id: usize) -> Result<GradientStore, TensorError> {
    let nodes = &graph.nodes;
    let loss = &nodes[loss_id];
    if loss.values.len() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape.clone(),
        });
    }
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    grads[loss_id] = Some(vec![1.0]);

    for id in (0..=loss_id).rev() {
        let g = match grads[id].take() {
            Some(g) => g,
            None => continue,
        };
        apply(nodes, id, &g, &mut grads);
        grads[id] = Some(g);
    }

    // Disconnected requires-grad leaves still get a (zero) gradient.
    for (id, node) in nodes.iter().enumerate() {
        if node.is_leaf && node.requires_grad && grads[id].is_none() {
            grads[id] = Some(vec![0.0; node.values.len()]);
        }
    }
    Ok(GradientStore { grads })
}

fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], id: usize) -> Option<&'a mut [f64]> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].values.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
}

fn apply(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &nodes[id].op {
        Op::Leaf | Op::Detach => {}
        Op::Add(a, b) => {
            if let Some(da) = acc(nodes, grads, *a) {
                for (d, &gi) in da.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            if let Some(db) = acc(nodes, grads, *b) {
                for (d, &gi) in db.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = acc(nodes, grads, *a) {
                for (d, &gi) in da.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            if let Some(db) = acc(nodes, grads, *b) {
                for (d, &gi) in db.iter_mut().zip(g) {
                    *d -= gi;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].values.clone(), nodes[*b].values.clone());
            if let Some(da) = acc(nodes, grads, *a) {
                for i in 0..g.len() {
                    da[i] += g[i] * bv[i];
                }
            }
            if let Some(db) = acc(nodes, grads, *b) {
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (nodes[*a].values.clone(), nodes[*b].values.clone());
            if let Some(da) = acc(nodes, grads, *a) {
                for i in 0..g.len() {
                    da[i] += g[i] / bv[i];
                }
            }
            if let Some(db) = acc(nodes, grads, *b) {
                for i in 0..g.len() {
                    db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                }
            }
        }
        Op::Neg(x) => {
            if let Some(dx) = acc(nodes, grads, *x) {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d -= gi;
                }
            }
        }
        Op::AddScalar(x) => {
            if let Some(dx) = acc(nodes, grads, *x) {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
        Op::MulScalar(x, c) => {
            if let Some(dx) = acc(nodes, grads, *x) {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d += gi * c;
                }
            }
        }
        Op::PowScalar(x, e) => {
            let xv = nodes[*x].values.clone();
            if let Some(dx) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    // Subgradient 0 at the non-differentiable origin.
                    let d = if xv[i] == 0.0 && *e < 1.0 {
                        0.0
                    } else {
                        e * xv[i].powf(e - 1.0)
                    };
                    dx[i] += g[i] * d;
                }
            }
        }
        Op::Log(x) => {
            let xv = nodes[*x].values.clone();
            if let Some(dx) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    dx[i] += g[i] / xv[i];
                }
            }
        }
        Op::Exp(x) => {
            let out = nodes[id].values.clone();
            if let Some(dx) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    dx[i] += g[i] * out[i];
                }
            }
        }
        Op::Gelu(x) => {
            let xv = nodes[*x].values.clone();
            if let Some(dx) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    dx[i] += g[i] * kernels::gelu_grad(xv[i]);
                }
            }
        }
        Op::Matmul { a, b, m, k, n } => {
            let (av, bv) = (nodes[*a].values.clone(), nodes[*b].values.clone());
            if let Some(da) = acc(nodes, grads, *a) {
                let contrib = kernels::matmul_bt(g, &bv, *m, *k, *n);
                for (d, c) in da.iter_mut().zip(contrib) {
                    *d += c;
                }
            }
            if let Some(db) = acc(nodes, grads, *b) {
                let contrib = kernels::matmul_at(&av, g, *m, *k, *n);
                for (d, c) in db.iter_mut().zip(contrib) {
                    *d += c;
                }
            }
        }
        Op::SoftmaxRows(x) => {
            let p = nodes[id].values.clone();
            let last = *nodes[id].shape.last().unwrap();
            if let Some(dx) = acc(nodes, grads, *x) {
                for r in 0..p.len() / last {
                    let base = r * last;
                    let mut dot = 0.0;
                    for i in 0..last {
                        dot += g[base + i] * p[base + i];
                    }
                    for i in 0..last {
                        dx[base + i] += p[base + i] * (g[base + i] - dot);
                    }
                }
            }
        }
        Op::GatherTarget { probs, targets } => {
            let vocab = *nodes[*probs].shape.last().unwrap();
            if let Some(dp) = acc(nodes, grads, *probs) {
                for (row, &tgt) in targets.iter().enumerate() {
                    dp[row * vocab + tgt] += g[row];
                }
            }
        }
        Op::WindowMean { x, window } => {
            let len = nodes[*x].values.len();
            let g_eff = (*window).min(len);
            if let Some(dx) = acc(nodes, grads, *x) {
                for (i, &go) in g.iter().enumerate() {
                    let share = go / g_eff as f64;
                    for d in dx.iter_mut().skip(i).take(g_eff) {
                        *d += share;
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dx) = acc(nodes, grads, *x) {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
        Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
            let shape = &nodes[*x].shape;
            let ax = shape[*axis];
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let scale = if matches!(nodes[id].op, Op::MeanAxis { .. }) {
                1.0 / ax as f64
            } else {
                1.0
            };
            if let Some(dx) = acc(nodes, grads, *x) {
                for o in 0..outer {
                    for a in 0..ax {
                        let base = (o * ax + a) * inner;
                        for i in 0..inner {
                            dx[base + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(dx) = acc(nodes, grads, *x) {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::MeanAll(x) => {
            let n = nodes[*x].values.len() as f64;
            if let Some(dx) = acc(nodes, grads, *x) {
                for d in dx.iter_mut() {
                    *d += g[0] / n;
                }
            }
        }
        Op::MinAll { x, argmin } => {
            if let Some(dx) = acc(nodes, grads, *x) {
                dx[*argmin] += g[0];
            }
        }
        Op::MaskedSelect { x, kept } => {
            if let Some(dx) = acc(nodes, grads, *x) {
                for (k, &src) in kept.iter().enumerate() {
                    dx[src] += g[k];
                }
            }
        }
        Op::Concat { parts } => {
            let mut offset = 0;
            let part_ids = parts.clone();
            for pid in part_ids {
                let len = nodes[pid].values.len();
                if let Some(dp) = acc(nodes, grads, pid) {
                    for i in 0..len {
                        dp[i] += g[offset + i];
                    }
                }
                offset += len;
            }
        }
        Op::AddBroadcast { a, b } => {
            if let Some(da) = acc(nodes, grads, *a) {
                for (d, &gi) in da.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            let chunk = nodes[*b].values.len().max(1);
            if let Some(db) = acc(nodes, grads, *b) {
                for block in g.chunks_exact(chunk) {
                    for (d, &gi) in db.iter_mut().zip(block) {
                        *d += gi;
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let xv = nodes[*x].values.clone();
            let gv = nodes[*gain].values.clone();
            let last = *nodes[*x].shape.last().unwrap();
            let (means, inv_stds) = kernels::layer_norm_stats(&xv, last, *eps);
            let rows = xv.len() / last;
            if let Some(dgain) = acc(nodes, grads, *gain) {
                for r in 0..rows {
                    for i in 0..last {
                        let xhat = (xv[r * last + i] - means[r]) * inv_stds[r];
                        dgain[i] += g[r * last + i] * xhat;
                    }
                }
            }
            if let Some(dbias) = acc(nodes, grads, *bias) {
                for r in 0..rows {
                    for i in 0..last {
                        dbias[i] += g[r * last + i];
                    }
                }
            }
            if let Some(dx) = acc(nodes, grads, *x) {
                for r in 0..rows {
                    let base = r * last;
                    let mut mean_h = 0.0;
                    let mut mean_hx = 0.0;
                    for i in 0..last {
                        let h = g[base + i] * gv[i];
                        let xhat = (xv[base + i] - means[r]) * inv_stds[r];
                        mean_h += h;
                        mean_hx += h * xhat;
                    }
                    mean_h /= last as f64;
                    mean_hx /= last as f64;
                    for i in 0..last {
                        let h = g[base + i] * gv[i];
                        let xhat = (xv[base + i] - means[r]) * inv_stds[r];
                        dx[base + i] += (h - mean_h - xhat * mean_hx) * inv_stds[r];
                    }
                }
            }
        }
        Op::EmbeddingLookup { table, ids } => {
            let dim = nodes[*table].shape[1];
            if let Some(dt) = acc(nodes, grads, *table) {
                for (pos, &rid) in ids.iter().enumerate() {
                    for j in 0..dim {
                        dt[rid * dim + j] += g[pos * dim + j];
                    }
                }
            }
        }
        Op::CausalAttention {
            q,
            k,
            v,
            heads,
            attn,
        } => {
            let qv = nodes[*q].values.clone();
            let kv = nodes[*k].values.clone();
            let vv = nodes[*v].values.clone();
            let shape = &nodes[*q].shape;
            let (b, t, d) = (shape[0], shape[1], shape[2]);
            let hd = d / heads;
            let scale = 1.0 / (hd as f64).sqrt();
            let at = |bi: usize, ti: usize, h: usize, j: usize| (bi * t + ti) * d + h * hd + j;

            let mut dq = vec![0.0; qv.len()];
            let mut dk = vec![0.0; kv.len()];
            let mut dv = vec![0.0; vv.len()];
            for bi in 0..b {
                for h in 0..*heads {
                    for ti in 0..t {
                        let arow = &attn[((bi * heads + h) * t + ti) * t..][..t];
                        // dp[tj] = <dout_ti, v_tj>, then softmax jacobian.
                        let mut dp = vec![0.0; ti + 1];
                        let mut dot = 0.0;
                        for (tj, dpj) in dp.iter_mut().enumerate() {
                            let mut s = 0.0;
                            for j in 0..hd {
                                s += g[at(bi, ti, h, j)] * vv[at(bi, tj, h, j)];
                            }
                            *dpj = s;
                            dot += s * arow[tj];
                        }
                        for tj in 0..=ti {
                            let dscore = arow[tj] * (dp[tj] - dot) * scale;
                            for j in 0..hd {
                                dq[at(bi, ti, h, j)] += dscore * kv[at(bi, tj, h, j)];
                                dk[at(bi, tj, h, j)] += dscore * qv[at(bi, ti, h, j)];
                                dv[at(bi, tj, h, j)] += arow[tj] * g[at(bi, ti, h, j)];
                            }
                        }
                    }
                }
            }
            if let Some(dst) = acc(nodes, grads, *q) {
                for (d, c) in dst.iter_mut().zip(dq) {
                    *d += c;
                }
            }
            if let Some(dst) = acc(nodes, grads, *k) {
                for (d, c) in dst.iter_mut().zip(dk) {
                    *d += c;
                }
            }
            if let Some(dst) = acc(nodes, grads, *v) {
                for (d, c) in dst.iter_mut().zip(dv) {
                    *d += c;
                }
            }
        }
    }
}
