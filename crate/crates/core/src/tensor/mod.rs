//! Minimal reverse-mode automatic differentiation engine.
//!
//! Operations are recorded on an append-only graph owned by a [`Graph`]
//! handle; [`Graph::backward`] replays them in reverse. Tensors hold 64-bit
//! floats in row-major order. The engine supplies exactly the primitives the
//! model and training objectives need, including an explicit stop-gradient
//! ([`AutoTensor::detach`]). A graph and its tensors are confined to one
//! thread; independent graphs may run concurrently.

mod backward;
mod fd;
mod kernels;

pub use fd::central_difference;
pub use kernels::sliding_window_means;

use crate::error::TensorError;
use std::cell::RefCell;
use std::rc::Rc;

type Result<T> = std::result::Result<T, TensorError>;

/// Operation record. Inputs are node ids; auxiliary data is whatever the
/// backward rule needs beyond the stored node values.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    PowScalar(usize, f64),
    Log(usize),
    Exp(usize),
    Gelu(usize),
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    SoftmaxRows(usize),
    GatherTarget {
        probs: usize,
        targets: Rc<Vec<usize>>,
    },
    WindowMean {
        x: usize,
        window: usize,
    },
    Detach,
    Reshape(usize),
    SumAxis {
        x: usize,
        axis: usize,
    },
    MeanAxis {
        x: usize,
        axis: usize,
    },
    SumAll(usize),
    MeanAll(usize),
    MinAll {
        x: usize,
        argmin: usize,
    },
    MaskedSelect {
        x: usize,
        kept: Rc<Vec<usize>>,
    },
    Concat {
        parts: Vec<usize>,
    },
    AddBroadcast {
        a: usize,
        b: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        eps: f64,
    },
    EmbeddingLookup {
        table: usize,
        ids: Rc<Vec<usize>>,
    },
    CausalAttention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        attn: Rc<Vec<f64>>,
    },
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) values: Rc<Vec<f64>>,
    pub(crate) shape: Vec<usize>,
    pub(crate) requires_grad: bool,
    pub(crate) is_leaf: bool,
}

#[derive(Default)]
pub(crate) struct GraphInner {
    pub(crate) nodes: Vec<Node>,
}

/// Handle to a recorded computation graph. Cloning shares the graph.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

/// Differentiable multi-dimensional array: a lightweight handle into its
/// graph plus a shared copy of the forward values.
#[derive(Clone)]
pub struct AutoTensor {
    graph: Graph,
    id: usize,
    shape: Vec<usize>,
    values: Rc<Vec<f64>>,
    requires_grad: bool,
    detached: bool,
}

/// Gradients produced by one backward sweep, indexed by node id.
#[derive(Debug)]
pub struct GradientStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradientStore {
    /// Gradient of the swept loss with respect to `t`, if one was computed.
    /// Requires-grad leaves always have an entry (zeros when disconnected).
    pub fn grad(&self, t: &AutoTensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, op: Op, values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> AutoTensor {
        debug_assert_eq!(values.len(), numel(&shape));
        for v in &values {
            debug_assert!(v.is_finite(), "non-finite value produced by forward op");
        }
        let values = Rc::new(values);
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        let is_leaf = matches!(op, Op::Leaf);
        inner.nodes.push(Node {
            op,
            values: values.clone(),
            shape: shape.clone(),
            requires_grad,
            is_leaf,
        });
        AutoTensor {
            graph: self.clone(),
            id,
            shape,
            values,
            requires_grad,
            detached: false,
        }
    }

    /// Insert a leaf tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(
        &self,
        values: Vec<f64>,
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<AutoTensor> {
        if values.len() != numel(shape) {
            return Err(TensorError::ElementCount {
                count: values.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(Op::Leaf, values, shape.to_vec(), requires_grad))
    }

    /// Non-differentiable input (mask, precomputed coefficient, ...).
    pub fn constant(&self, values: Vec<f64>, shape: &[usize]) -> Result<AutoTensor> {
        self.leaf(values, shape, false)
    }

    pub fn scalar(&self, value: f64) -> AutoTensor {
        self.push(Op::Leaf, vec![value], vec![], false)
    }

    /// Reverse sweep from a scalar loss. Visits nodes in exact reverse append
    /// order; repeated sweeps over the same graph are bitwise reproducible.
    pub fn backward(&self, loss: &AutoTensor) -> Result<GradientStore> {
        if !Rc::ptr_eq(&self.inner, &loss.graph.inner) {
            return Err(TensorError::GraphMismatch);
        }
        backward::run(&self.inner.borrow(), loss.id)
    }
}

impl std::fmt::Debug for AutoTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AutoTensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("detached", &self.detached)
            .field("values", &self.values)
            .finish()
    }
}

impl AutoTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() requires a single-element tensor");
        self.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_detached(&self) -> bool {
        self.detached
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    fn same_graph(&self, other: &AutoTensor) -> Result<()> {
        if Rc::ptr_eq(&self.graph.inner, &other.graph.inner) {
            Ok(())
        } else {
            Err(TensorError::GraphMismatch)
        }
    }

    fn check_same_shape(&self, other: &AutoTensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn binary(
        &self,
        other: &AutoTensor,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize) -> Op,
    ) -> Result<AutoTensor> {
        self.same_graph(other)?;
        self.check_same_shape(other, op_name)?;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let rg = self.requires_grad || other.requires_grad;
        Ok(self
            .graph
            .push(make(self.id, other.id), values, self.shape.clone(), rg))
    }

    pub fn add(&self, other: &AutoTensor) -> Result<AutoTensor> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: &AutoTensor) -> Result<AutoTensor> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, other: &AutoTensor) -> Result<AutoTensor> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(&self, other: &AutoTensor) -> Result<AutoTensor> {
        self.same_graph(other)?;
        self.check_same_shape(other, "div")?;
        if other.values.iter().any(|&b| b == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                msg: "division by zero".into(),
            });
        }
        self.binary(other, "div", |a, b| a / b, Op::Div)
    }

    pub fn neg(&self) -> AutoTensor {
        let values = self.values.iter().map(|&v| -v).collect();
        self.graph
            .push(Op::Neg(self.id), values, self.shape.clone(), self.requires_grad)
    }

    pub fn add_scalar(&self, c: f64) -> AutoTensor {
        let values = self.values.iter().map(|&v| v + c).collect();
        self.graph.push(
            Op::AddScalar(self.id),
            values,
            self.shape.clone(),
            self.requires_grad,
        )
    }

    pub fn mul_scalar(&self, c: f64) -> AutoTensor {
        let values = self.values.iter().map(|&v| v * c).collect();
        self.graph.push(
            Op::MulScalar(self.id, c),
            values,
            self.shape.clone(),
            self.requires_grad,
        )
    }

    /// Elementwise power with a fixed exponent. Negative bases require an
    /// integral exponent.
    pub fn pow_scalar(&self, exponent: f64) -> Result<AutoTensor> {
        if exponent.fract() != 0.0 && self.values.iter().any(|&v| v < 0.0) {
            return Err(TensorError::Domain {
                op: "pow_scalar",
                msg: format!("negative base with non-integral exponent {exponent}"),
            });
        }
        let values = self.values.iter().map(|&v| v.powf(exponent)).collect();
        Ok(self.graph.push(
            Op::PowScalar(self.id, exponent),
            values,
            self.shape.clone(),
            self.requires_grad,
        ))
    }

    /// Natural log. Inputs must be strictly positive.
    pub fn log(&self) -> Result<AutoTensor> {
        if self.values.iter().any(|&v| v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                msg: "log requires strictly positive input".into(),
            });
        }
        let values = self.values.iter().map(|&v| v.ln()).collect();
        Ok(self
            .graph
            .push(Op::Log(self.id), values, self.shape.clone(), self.requires_grad))
    }

    pub fn exp(&self) -> AutoTensor {
        let values = self.values.iter().map(|&v| v.exp()).collect();
        self.graph
            .push(Op::Exp(self.id), values, self.shape.clone(), self.requires_grad)
    }

    pub fn gelu(&self) -> AutoTensor {
        let values = self.values.iter().map(|&v| kernels::gelu(v)).collect();
        self.graph
            .push(Op::Gelu(self.id), values, self.shape.clone(), self.requires_grad)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &AutoTensor) -> Result<AutoTensor> {
        self.same_graph(other)?;
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::MatmulDims {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let values = kernels::matmul(&self.values, &other.values, m, k, n);
        let rg = self.requires_grad || other.requires_grad;
        Ok(self.graph.push(
            Op::Matmul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            values,
            vec![m, n],
            rg,
        ))
    }

    /// Max-shifted softmax over the trailing dimension.
    pub fn softmax_rows(&self) -> Result<AutoTensor> {
        let last = *self.shape.last().ok_or(TensorError::Domain {
            op: "softmax_rows",
            msg: "rank must be >= 1".into(),
        })?;
        if last == 0 {
            return Err(TensorError::Domain {
                op: "softmax_rows",
                msg: "trailing dimension must be >= 1".into(),
            });
        }
        let values = kernels::softmax_rows(&self.values, last);
        Ok(self.graph.push(
            Op::SoftmaxRows(self.id),
            values,
            self.shape.clone(),
            self.requires_grad,
        ))
    }

    /// `out[row] = self[row, targets[row]]` over the trailing dimension.
    /// Backward scatters into the gathered slots only.
    pub fn gather_target(&self, targets: &[usize]) -> Result<AutoTensor> {
        if self.shape.len() < 2 {
            return Err(TensorError::Domain {
                op: "gather_target",
                msg: "rank must be >= 2".into(),
            });
        }
        let vocab = *self.shape.last().unwrap();
        let lead: Vec<usize> = self.shape[..self.shape.len() - 1].to_vec();
        let rows = numel(&lead);
        if targets.len() != rows {
            return Err(TensorError::ElementCount {
                count: targets.len(),
                shape: lead,
            });
        }
        let cols = if self.shape.len() == 3 { self.shape[1] } else { rows };
        let mut values = Vec::with_capacity(rows);
        for (row, &tgt) in targets.iter().enumerate() {
            if tgt >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    b: row / cols,
                    t: row % cols,
                    index: tgt,
                    bound: vocab,
                });
            }
            values.push(self.values[row * vocab + tgt]);
        }
        Ok(self.graph.push(
            Op::GatherTarget {
                probs: self.id,
                targets: Rc::new(targets.to_vec()),
            },
            values,
            lead,
            self.requires_grad,
        ))
    }

    /// Sliding-window mean (stride 1) over a 1-D sequence. A sequence shorter
    /// than the window yields a single window covering the whole sequence.
    pub fn window_mean(&self, window: usize) -> Result<AutoTensor> {
        if window < 1 {
            return Err(TensorError::Config(
                "window length must be >= 1".into(),
            ));
        }
        if self.shape.len() != 1 || self.values.is_empty() {
            return Err(TensorError::Domain {
                op: "window_mean",
                msg: format!("expected non-empty 1-D sequence, got shape {:?}", self.shape),
            });
        }
        let values = kernels::sliding_window_means(&self.values, window);
        let len = values.len();
        Ok(self.graph.push(
            Op::WindowMean {
                x: self.id,
                window,
            },
            values,
            vec![len],
            self.requires_grad,
        ))
    }

    /// Stop-gradient: values pass through unchanged, ancestors receive zero
    /// gradient from anything built on the result.
    pub fn detach(&self) -> AutoTensor {
        let mut t = self.graph.push(
            Op::Detach,
            self.values.as_ref().clone(),
            self.shape.clone(),
            false,
        );
        t.detached = true;
        t
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<AutoTensor> {
        if numel(shape) != self.values.len() {
            return Err(TensorError::ElementCount {
                count: self.values.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.graph.push(
            Op::Reshape(self.id),
            self.values.as_ref().clone(),
            shape.to_vec(),
            self.requires_grad,
        ))
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<AutoTensor> {
        if axis >= self.shape.len() {
            return Err(TensorError::Domain {
                op: "reduce_axis",
                msg: format!("axis {axis} out of range for shape {:?}", self.shape),
            });
        }
        let ax = self.shape[axis];
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let mut values = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..ax {
                let base = (o * ax + a) * inner;
                for i in 0..inner {
                    values[o * inner + i] += self.values[base + i];
                }
            }
        }
        if mean {
            for v in &mut values {
                *v /= ax as f64;
            }
        }
        let op = if mean {
            Op::MeanAxis { x: self.id, axis }
        } else {
            Op::SumAxis { x: self.id, axis }
        };
        Ok(self.graph.push(op, values, out_shape, self.requires_grad))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<AutoTensor> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<AutoTensor> {
        self.reduce_axis(axis, true)
    }

    pub fn sum_all(&self) -> AutoTensor {
        let total: f64 = self.values.iter().sum();
        self.graph
            .push(Op::SumAll(self.id), vec![total], vec![], self.requires_grad)
    }

    pub fn mean_all(&self) -> AutoTensor {
        let total: f64 = self.values.iter().sum();
        let mean = total / self.values.len() as f64;
        self.graph
            .push(Op::MeanAll(self.id), vec![mean], vec![], self.requires_grad)
    }

    /// Minimum over all elements. The subgradient routes to the first minimal
    /// element in row-major order.
    pub fn min_all(&self) -> Result<AutoTensor> {
        if self.values.is_empty() {
            return Err(TensorError::Domain {
                op: "min_all",
                msg: "min of empty tensor".into(),
            });
        }
        let mut argmin = 0;
        let mut min = self.values[0];
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v < min {
                min = v;
                argmin = i;
            }
        }
        Ok(self.graph.push(
            Op::MinAll {
                x: self.id,
                argmin,
            },
            vec![min],
            vec![],
            self.requires_grad,
        ))
    }

    /// Compact the elements where `keep` is true into a 1-D tensor.
    pub fn masked_select(&self, keep: &[bool]) -> Result<AutoTensor> {
        if keep.len() != self.values.len() {
            return Err(TensorError::ElementCount {
                count: keep.len(),
                shape: self.shape.clone(),
            });
        }
        let kept: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        let values: Vec<f64> = kept.iter().map(|&i| self.values[i]).collect();
        let len = values.len();
        Ok(self.graph.push(
            Op::MaskedSelect {
                x: self.id,
                kept: Rc::new(kept),
            },
            values,
            vec![len],
            self.requires_grad,
        ))
    }

    /// Rows of `self` (a 2-D table) selected by `ids`, as an `ids.len()`×d
    /// tensor. Backward scatter-adds into the selected rows.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<AutoTensor> {
        if self.shape.len() != 2 {
            return Err(TensorError::Domain {
                op: "embedding_lookup",
                msg: format!("table must be 2-D, got {:?}", self.shape),
            });
        }
        let (rows, dim) = (self.shape[0], self.shape[1]);
        let mut values = Vec::with_capacity(ids.len() * dim);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    b: 0,
                    t: pos,
                    index: id,
                    bound: rows,
                });
            }
            values.extend_from_slice(&self.values[id * dim..(id + 1) * dim]);
        }
        Ok(self.graph.push(
            Op::EmbeddingLookup {
                table: self.id,
                ids: Rc::new(ids.to_vec()),
            },
            values,
            vec![ids.len(), dim],
            self.requires_grad,
        ))
    }

    /// Add `other` broadcast over the leading dimensions of `self`:
    /// `other.shape` must be a suffix of `self.shape`.
    pub fn add_broadcast(&self, other: &AutoTensor) -> Result<AutoTensor> {
        self.same_graph(other)?;
        if other.shape.len() > self.shape.len()
            || self.shape[self.shape.len() - other.shape.len()..] != other.shape[..]
        {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let chunk = other.values.len().max(1);
        let mut values = Vec::with_capacity(self.values.len());
        for block in self.values.chunks_exact(chunk) {
            for (a, b) in block.iter().zip(other.values.iter()) {
                values.push(a + b);
            }
        }
        let rg = self.requires_grad || other.requires_grad;
        Ok(self.graph.push(
            Op::AddBroadcast {
                a: self.id,
                b: other.id,
            },
            values,
            self.shape.clone(),
            rg,
        ))
    }

    /// Layer normalization over the trailing dimension with elementwise gain
    /// and bias.
    pub fn layer_norm(&self, gain: &AutoTensor, bias: &AutoTensor, eps: f64) -> Result<AutoTensor> {
        self.same_graph(gain)?;
        self.same_graph(bias)?;
        let last = *self.shape.last().ok_or(TensorError::Domain {
            op: "layer_norm",
            msg: "rank must be >= 1".into(),
        })?;
        if gain.shape != [last] || bias.shape != [last] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: gain.shape.clone(),
                right: vec![last],
            });
        }
        let (means, inv_stds) = kernels::layer_norm_stats(&self.values, last, eps);
        let mut values = Vec::with_capacity(self.values.len());
        for (r, row) in self.values.chunks_exact(last).enumerate() {
            for (i, &v) in row.iter().enumerate() {
                let xhat = (v - means[r]) * inv_stds[r];
                values.push(xhat * gain.values[i] + bias.values[i]);
            }
        }
        let rg = self.requires_grad || gain.requires_grad || bias.requires_grad;
        Ok(self.graph.push(
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                eps,
            },
            values,
            self.shape.clone(),
            rg,
        ))
    }
}

/// Concatenate 1-D tensors end to end.
pub fn concat(parts: &[AutoTensor]) -> Result<AutoTensor> {
    let first = parts.first().ok_or(TensorError::Domain {
        op: "concat",
        msg: "concat of zero tensors".into(),
    })?;
    let mut values = Vec::new();
    let mut rg = false;
    for p in parts {
        first.same_graph(p)?;
        if p.shape.len() != 1 {
            return Err(TensorError::Domain {
                op: "concat",
                msg: format!("expected 1-D parts, got shape {:?}", p.shape),
            });
        }
        values.extend_from_slice(&p.values);
        rg |= p.requires_grad;
    }
    let len = values.len();
    Ok(first.graph.push(
        Op::Concat {
            parts: parts.iter().map(|p| p.id).collect(),
        },
        values,
        vec![len],
        rg,
    ))
}

/// Causal multi-head scaled dot-product attention over `q`, `k`, `v` of shape
/// B×T×D. Position t attends to positions <= t only.
pub fn causal_attention(
    q: &AutoTensor,
    k: &AutoTensor,
    v: &AutoTensor,
    heads: usize,
) -> Result<AutoTensor> {
    q.same_graph(k)?;
    q.same_graph(v)?;
    q.check_same_shape(k, "causal_attention")?;
    q.check_same_shape(v, "causal_attention")?;
    if q.shape.len() != 3 {
        return Err(TensorError::Domain {
            op: "causal_attention",
            msg: format!("expected B×T×D input, got {:?}", q.shape),
        });
    }
    let (b, t, d) = (q.shape[0], q.shape[1], q.shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::Config(format!(
            "head count {heads} must divide model dimension {d}"
        )));
    }
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut attn = vec![0.0; b * heads * t * t];
    let mut out = vec![0.0; b * t * d];
    let at = |bi: usize, ti: usize, h: usize, j: usize| (bi * t + ti) * d + h * hd + j;
    for bi in 0..b {
        for h in 0..heads {
            for ti in 0..t {
                let arow = &mut attn[((bi * heads + h) * t + ti) * t..][..t];
                let mut max = f64::NEG_INFINITY;
                for tj in 0..=ti {
                    let mut s = 0.0;
                    for j in 0..hd {
                        s += q.values[at(bi, ti, h, j)] * k.values[at(bi, tj, h, j)];
                    }
                    let s = s * scale;
                    arow[tj] = s;
                    max = max.max(s);
                }
                let mut denom = 0.0;
                for a in arow.iter_mut().take(ti + 1) {
                    *a = (*a - max).exp();
                    denom += *a;
                }
                for a in arow.iter_mut().take(ti + 1) {
                    *a /= denom;
                }
                for tj in 0..=ti {
                    let w = arow[tj];
                    for j in 0..hd {
                        out[at(bi, ti, h, j)] += w * v.values[at(bi, tj, h, j)];
                    }
                }
            }
        }
    }
    let rg = q.requires_grad || k.requires_grad || v.requires_grad;
    Ok(q.graph.push(
        Op::CausalAttention {
            q: q.id,
            k: k.id,
            v: v.id,
            heads,
            attn: Rc::new(attn),
        },
        out,
        q.shape.clone(),
        rg,
    ))
}
