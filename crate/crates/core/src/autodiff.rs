//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] records expressions; [`Graph::forward`] evaluates the ancestors
//! of a root against a set of named [`Bindings`] and caches every intermediate
//! value, and [`Graph::backward`] replays the graph in reverse index order to
//! produce gradients for every named input.
//!
//! Node indices are assigned in construction order, which is always a valid
//! topological order. Gradient contributions are accumulated in that order,
//! so repeated runs are bit-identical.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{gemm, strides, Tensor};

/// Variance epsilon used by batch normalization.
pub const BN_EPS: f64 = 1e-5;

/// Named tensors fed into a graph.
pub type Bindings = BTreeMap<String, Tensor>;

/// Gradient of the root with respect to each named input.
pub type Gradients = BTreeMap<String, Tensor>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(usize);

impl Expr {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum BatchNormMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics; the op is affine in its input.
    Eval {
        running_mean: Tensor,
        running_var: Tensor,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BackwardMode {
    #[default]
    Standard,
    /// ReLU passes gradient only where both the forward activation and the
    /// incoming gradient are positive.
    GuidedRelu,
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Constant(Tensor),
    MatMul(Expr, Expr),
    BatchMatMul(Expr, Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Scale(Expr, f64),
    AddScalar(Expr, f64),
    Relu(Expr),
    Exp(Expr),
    TemporalConv {
        x: Expr,
        w: Expr,
        bias: Option<Expr>,
        transposed: bool,
    },
    GraphAggregate {
        x: Expr,
        adj: Expr,
    },
    BatchNorm {
        x: Expr,
        gamma: Expr,
        beta: Expr,
        mode: BatchNormMode,
    },
    MeanPool {
        x: Expr,
        axes: Vec<usize>,
    },
    Repeat {
        x: Expr,
        shape: Vec<usize>,
    },
    Concat {
        xs: Vec<Expr>,
        axis: usize,
    },
    Slice {
        x: Expr,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape {
        x: Expr,
        shape: Vec<usize>,
    },
    Softmax(Expr),
    SoftmaxCrossEntropy {
        logits: Expr,
        labels: Vec<usize>,
    },
    SumSquares(Expr),
    Sum(Expr),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "batch_matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::TemporalConv {
                transposed: false, ..
            } => "temporal_conv",
            Op::TemporalConv { .. } => "temporal_conv_transpose",
            Op::GraphAggregate { .. } => "graph_aggregate",
            Op::BatchNorm { .. } => "batch_norm",
            Op::MeanPool { .. } => "mean_pool",
            Op::Repeat { .. } => "repeat",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
            Op::Softmax(_) => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SumSquares(_) => "sum_squares",
            Op::Sum(_) => "sum",
        }
    }

    fn inputs(&self) -> Vec<Expr> {
        match self {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::MatMul(a, b)
            | Op::BatchMatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Softmax(a)
            | Op::SumSquares(a)
            | Op::Sum(a) => vec![*a],
            Op::TemporalConv { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::GraphAggregate { x, adj } => vec![*x, *adj],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::MeanPool { x, .. }
            | Op::Repeat { x, .. }
            | Op::Slice { x, .. }
            | Op::Reshape { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Clone, Debug, Default)]
enum Cache {
    #[default]
    None,
    BatchNorm {
        xhat: Tensor,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        count: usize,
    },
    Probs(Tensor),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    cache: Cache,
}

/// Per-channel statistics of one batch-normalization node after a training
/// forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance, the form blended into running statistics.
    pub var: Vec<f64>,
}

/// A computation graph. Not `Sync`-shared: one graph per training step.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, Expr>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> Expr {
        self.nodes.push(Node {
            op,
            value: None,
            cache: Cache::None,
        });
        Expr(self.nodes.len() - 1)
    }

    /// A named free variable. Repeated calls with one name share the node.
    pub fn input(&mut self, name: &str) -> Expr {
        if let Some(&e) = self.inputs.get(name) {
            return e;
        }
        let e = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), e);
        e
    }

    pub fn constant(&mut self, value: Tensor) -> Expr {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::MatMul(a, b))
    }

    pub fn batch_matmul(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::BatchMatMul(a, b))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Expr, s: f64) -> Expr {
        self.push(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Expr, s: f64) -> Expr {
        self.push(Op::AddScalar(a, s))
    }

    pub fn relu(&mut self, a: Expr) -> Expr {
        self.push(Op::Relu(a))
    }

    pub fn exp(&mut self, a: Expr) -> Expr {
        self.push(Op::Exp(a))
    }

    /// Convolution along the time axis of `x: [N, Cin, T, V]` with
    /// `w: [Cout, Cin, K]`, zero-padded so T is preserved. `K = 1` is a 1×1
    /// channel-mixing convolution.
    pub fn temporal_conv(&mut self, x: Expr, w: Expr, bias: Option<Expr>) -> Expr {
        self.push(Op::TemporalConv {
            x,
            w,
            bias,
            transposed: false,
        })
    }

    /// Stride-1 transposed temporal convolution, `w: [Cin, Cout, K]`.
    pub fn temporal_conv_transpose(&mut self, x: Expr, w: Expr, bias: Option<Expr>) -> Expr {
        self.push(Op::TemporalConv {
            x,
            w,
            bias,
            transposed: true,
        })
    }

    /// Neighborhood aggregation over the last axis: `out[.., i] = Σ_j adj[i, j] x[.., j]`.
    pub fn graph_aggregate(&mut self, x: Expr, adj: Expr) -> Expr {
        self.push(Op::GraphAggregate { x, adj })
    }

    /// Per-channel batch normalization over every axis except axis 1.
    pub fn batch_norm(&mut self, x: Expr, gamma: Expr, beta: Expr, mode: BatchNormMode) -> Expr {
        self.push(Op::BatchNorm {
            x,
            gamma,
            beta,
            mode,
        })
    }

    /// Mean over `axes`, keeping them as size-1 dimensions.
    pub fn mean_pool(&mut self, x: Expr, axes: &[usize]) -> Expr {
        self.push(Op::MeanPool {
            x,
            axes: axes.to_vec(),
        })
    }

    /// Broadcast size-1 dimensions of `x` up to `shape`.
    pub fn repeat(&mut self, x: Expr, shape: &[usize]) -> Expr {
        self.push(Op::Repeat {
            x,
            shape: shape.to_vec(),
        })
    }

    pub fn concat(&mut self, xs: &[Expr], axis: usize) -> Expr {
        self.push(Op::Concat {
            xs: xs.to_vec(),
            axis,
        })
    }

    pub fn slice(&mut self, x: Expr, axis: usize, start: usize, len: usize) -> Expr {
        self.push(Op::Slice {
            x,
            axis,
            start,
            len,
        })
    }

    pub fn reshape(&mut self, x: Expr, shape: &[usize]) -> Expr {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Expr) -> Expr {
        self.push(Op::Softmax(x))
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Expr, labels: &[usize]) -> Expr {
        self.push(Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
        })
    }

    pub fn sum_squares(&mut self, x: Expr) -> Expr {
        self.push(Op::SumSquares(x))
    }

    pub fn sum(&mut self, x: Expr) -> Expr {
        self.push(Op::Sum(x))
    }

    /// Value cached by the last forward pass.
    pub fn value(&self, e: Expr) -> Option<&Tensor> {
        self.nodes.get(e.0).and_then(|n| n.value.as_ref())
    }

    /// Batch statistics recorded by a training-mode batch-norm node.
    pub fn batch_stats(&self, e: Expr) -> Option<BatchStats> {
        match &self.nodes.get(e.0)?.cache {
            Cache::BatchNorm {
                mean, var, count, ..
            } => {
                let c = *count as f64;
                let unbiased = if *count > 1 { c / (c - 1.0) } else { 1.0 };
                Some(BatchStats {
                    mean: mean.clone(),
                    var: var.iter().map(|v| v * unbiased).collect(),
                })
            }
            _ => None,
        }
    }

    /// Names of all inputs that `root` depends on.
    pub fn free_inputs(&self, root: Expr) -> Vec<String> {
        let needed = self.ancestors(root);
        self.inputs
            .iter()
            .filter(|(_, e)| needed[e.0])
            .map(|(n, _)| n.clone())
            .collect()
    }

    fn ancestors(&self, root: Expr) -> Vec<bool> {
        let mut needed = vec![false; root.0 + 1];
        needed[root.0] = true;
        for i in (0..=root.0).rev() {
            if needed[i] {
                for e in self.nodes[i].op.inputs() {
                    needed[e.0] = true;
                }
            }
        }
        needed
    }

    /// Evaluate `root`, caching every intermediate value for [`Graph::backward`].
    pub fn forward(&mut self, root: Expr, bindings: &Bindings) -> Result<Tensor> {
        if root.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("no node {}", root.0)));
        }
        let needed = self.ancestors(root);
        for i in 0..=root.0 {
            if !needed[i] {
                continue;
            }
            let (value, cache) = self.eval_node(i, bindings)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(self.nodes[i].op.name().to_string()));
            }
            let node = &mut self.nodes[i];
            node.value = Some(value);
            node.cache = cache;
        }
        Ok(self.nodes[root.0].value.clone().expect("root evaluated"))
    }

    fn val(&self, e: Expr) -> &Tensor {
        self.nodes[e.0]
            .value
            .as_ref()
            .expect("inputs are evaluated before their consumers")
    }

    fn eval_node(&self, i: usize, bindings: &Bindings) -> Result<(Tensor, Cache)> {
        let op = &self.nodes[i].op;
        let plain = |t: Tensor| Ok((t, Cache::None));
        match op {
            Op::Input(name) => match bindings.get(name) {
                Some(t) => plain(t.clone()),
                None => Err(Error::Unbound(name.clone())),
            },
            Op::Constant(t) => plain(t.clone()),
            Op::MatMul(a, b) => plain(matmul(self.val(*a), self.val(*b))?),
            Op::BatchMatMul(a, b) => plain(batch_matmul(self.val(*a), self.val(*b))?),
            Op::Add(a, b) => plain(self.val(*a).zip_map(self.val(*b), |x, y| x + y)?),
            Op::Sub(a, b) => plain(self.val(*a).zip_map(self.val(*b), |x, y| x - y)?),
            Op::Mul(a, b) => plain(self.val(*a).zip_map(self.val(*b), |x, y| x * y)?),
            Op::Scale(a, s) => plain(self.val(*a).map(|x| x * s)),
            Op::AddScalar(a, s) => plain(self.val(*a).map(|x| x + s)),
            Op::Relu(a) => plain(self.val(*a).map(|x| x.max(0.0))),
            Op::Exp(a) => plain(self.val(*a).map(f64::exp)),
            Op::TemporalConv {
                x,
                w,
                bias,
                transposed,
            } => {
                let geom = ConvGeom::new(
                    self.val(*x),
                    self.val(*w),
                    bias.map(|b| self.val(b)),
                    *transposed,
                )?;
                plain(geom.forward(self.val(*x), self.val(*w), bias.map(|b| self.val(b))))
            }
            Op::GraphAggregate { x, adj } => plain(graph_aggregate(self.val(*x), self.val(*adj))?),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
            } => batch_norm_forward(self.val(*x), self.val(*gamma), self.val(*beta), mode),
            Op::MeanPool { x, axes } => plain(mean_pool(self.val(*x), axes)?),
            Op::Repeat { x, shape } => plain(repeat(self.val(*x), shape)?),
            Op::Concat { xs, axis } => {
                let parts: Vec<&Tensor> = xs.iter().map(|e| self.val(*e)).collect();
                plain(concat(&parts, *axis)?)
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => plain(slice(self.val(*x), *axis, *start, *len)?),
            Op::Reshape { x, shape } => plain(self.val(*x).reshape(shape)?),
            Op::Softmax(x) => plain(softmax_last(self.val(*x))?),
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let l = self.val(*logits);
                check_logits(l, labels)?;
                let probs = softmax_last(l)?;
                let k = l.shape()[1];
                let loss = labels
                    .iter()
                    .enumerate()
                    .map(|(n, &c)| -probs.data()[n * k + c].max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>()
                    / labels.len() as f64;
                Ok((Tensor::scalar(loss), Cache::Probs(probs)))
            }
            Op::SumSquares(x) => plain(Tensor::scalar(self.val(*x).sum_squares())),
            Op::Sum(x) => plain(Tensor::scalar(self.val(*x).sum())),
        }
    }

    /// Gradients of `root` (weighted by `seed`) for every named input.
    pub fn backward(&self, root: Expr, seed: &Tensor) -> Result<Gradients> {
        self.backward_with(root, seed, BackwardMode::Standard)
    }

    pub fn backward_with(
        &self,
        root: Expr,
        seed: &Tensor,
        mode: BackwardMode,
    ) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("no node {}", root.0)));
        }
        let needed = self.ancestors(root);
        for (i, &need) in needed.iter().enumerate() {
            if need && self.nodes[i].value.is_none() {
                return Err(Error::BackwardBeforeForward);
            }
        }
        let root_val = self.val(root);
        if root_val.shape() != seed.shape() {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs root {:?}", seed.shape(), root_val.shape()),
            ));
        }
        let mut requires = vec![false; root.0 + 1];
        for i in 0..=root.0 {
            requires[i] = needed[i]
                && match &self.nodes[i].op {
                    Op::Input(_) => true,
                    Op::Constant(_) => false,
                    op => op.inputs().iter().any(|e| requires[e.0]),
                };
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed.clone());
        let mut out = Gradients::new();
        for i in (0..=root.0).rev() {
            if !needed[i] {
                continue;
            }
            let node = &self.nodes[i];
            let g = match grads[i].take() {
                Some(g) => g,
                None => {
                    if let Op::Input(name) = &node.op {
                        out.insert(name.clone(), Tensor::zeros(self.val(Expr(i)).shape()));
                    }
                    continue;
                }
            };
            if let Op::Input(name) = &node.op {
                out.insert(name.clone(), g);
                continue;
            }
            if !requires[i] {
                continue;
            }
            for (e, contrib) in self.node_backward(i, &g, mode, &requires)? {
                if !requires[e.0] {
                    continue;
                }
                match &mut grads[e.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(out)
    }

    fn node_backward(
        &self,
        i: usize,
        g: &Tensor,
        mode: BackwardMode,
        requires: &[bool],
    ) -> Result<Vec<(Expr, Tensor)>> {
        let node = &self.nodes[i];
        let out = node.value.as_ref().expect("checked");
        Ok(match &node.op {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::MatMul(a, b) => {
                let (ga, gb) = matmul_backward(self.val(*a), self.val(*b), g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::BatchMatMul(a, b) => {
                let (ga, gb) = batch_matmul_backward(self.val(*a), self.val(*b), g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(self.val(*b), |x, y| x * y)?),
                (*b, g.zip_map(self.val(*a), |x, y| x * y)?),
            ],
            Op::Scale(a, s) => vec![(*a, g.map(|v| v * s))],
            Op::AddScalar(a, _) => vec![(*a, g.clone())],
            Op::Relu(a) => {
                let x = self.val(*a);
                let gx = match mode {
                    BackwardMode::Standard => {
                        g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?
                    }
                    BackwardMode::GuidedRelu => {
                        g.zip_map(x, |gv, xv| if xv > 0.0 && gv > 0.0 { gv } else { 0.0 })?
                    }
                };
                vec![(*a, gx)]
            }
            Op::Exp(a) => vec![(*a, g.zip_map(out, |gv, ov| gv * ov)?)],
            Op::TemporalConv {
                x,
                w,
                bias,
                transposed,
            } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let geom = ConvGeom::new(xv, wv, bias.map(|b| self.val(b)), *transposed)?;
                let (gx, gw, gb) = geom.backward(xv, wv, g, requires[x.0]);
                let mut v = vec![(*w, gw)];
                if let Some(gx) = gx {
                    v.push((*x, gx));
                }
                if let Some(b) = bias {
                    v.push((*b, gb));
                }
                v
            }
            Op::GraphAggregate { x, adj } => {
                let (gx, ga) = graph_aggregate_backward(
                    self.val(*x),
                    self.val(*adj),
                    g,
                    requires[x.0],
                    requires[adj.0],
                );
                gx.map(|t| (*x, t))
                    .into_iter()
                    .chain(ga.map(|t| (*adj, t)))
                    .collect()
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode: bn_mode,
            } => {
                let (gx, gg, gb) =
                    batch_norm_backward(self.val(*x), self.val(*gamma), bn_mode, &node.cache, g);
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::MeanPool { x, .. } => {
                let xv = self.val(*x);
                let map = broadcast_map(xv.shape(), out.shape());
                let count = (xv.len() / out.len().max(1)) as f64;
                let gd = g.data();
                let data = map.iter().map(|&j| gd[j] / count).collect();
                vec![(*x, Tensor::new(xv.shape().to_vec(), data)?)]
            }
            Op::Repeat { x, .. } => {
                let xv = self.val(*x);
                let map = broadcast_map(out.shape(), xv.shape());
                let mut gx = Tensor::zeros(xv.shape());
                let gxd = gx.data_mut();
                for (&j, &gv) in map.iter().zip(g.data()) {
                    gxd[j] += gv;
                }
                vec![(*x, gx)]
            }
            Op::Concat { xs, axis } => {
                let mut start = 0;
                let mut v = Vec::with_capacity(xs.len());
                for e in xs {
                    let len = self.val(*e).shape()[*axis];
                    v.push((*e, slice(g, *axis, start, len)?));
                    start += len;
                }
                v
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => {
                let xv = self.val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let (outer, inner) = outer_inner(xv.shape(), *axis);
                let dim = xv.shape()[*axis];
                let block = len * inner;
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    gx.data_mut()[dst..dst + block]
                        .copy_from_slice(&g.data()[o * block..(o + 1) * block]);
                }
                vec![(*x, gx)]
            }
            Op::Reshape { x, .. } => vec![(*x, g.reshape(self.val(*x).shape())?)],
            Op::Softmax(x) => {
                let k = *out.shape().last().unwrap_or(&1);
                let mut gx = out.clone();
                for (row, (p, gr)) in gx
                    .data_mut()
                    .chunks_mut(k)
                    .zip(out.data().chunks(k).zip(g.data().chunks(k)))
                {
                    let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((r, &pv), &gv) in row.iter_mut().zip(p).zip(gr) {
                        *r = pv * (gv - dot);
                    }
                }
                vec![(*x, gx)]
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let Cache::Probs(probs) = &node.cache else {
                    return Err(Error::BackwardBeforeForward);
                };
                let k = probs.shape()[1];
                let scale = g.item() / labels.len() as f64;
                let mut gx = probs.clone();
                for (n, &c) in labels.iter().enumerate() {
                    gx.data_mut()[n * k + c] -= 1.0;
                }
                vec![(*logits, gx.map(|v| v * scale))]
            }
            Op::SumSquares(x) => {
                let s = 2.0 * g.item();
                vec![(*x, self.val(*x).map(|v| v * s))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.val(*x).shape(), g.item()))],
        })
    }
}

/// Central-difference gradient of `sum(root)` with respect to every input of
/// `root`, one coordinate at a time. This is the test oracle for
/// [`Graph::backward`].
pub fn finite_difference_grad(
    graph: &mut Graph,
    root: Expr,
    bindings: &Bindings,
    eps: f64,
) -> Result<Gradients> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let mut out = Gradients::new();
    for name in graph.free_inputs(root) {
        let len = bindings
            .get(&name)
            .ok_or_else(|| Error::Unbound(name.clone()))?
            .len();
        let coords: Vec<usize> = (0..len).collect();
        let g = finite_difference_coords(graph, root, bindings, eps, &name, &coords)?;
        let shape = bindings[&name].shape().to_vec();
        out.insert(name, Tensor::new(shape, g)?);
    }
    Ok(out)
}

/// Central-difference derivatives of `sum(root)` for selected coordinates of
/// one input.
pub fn finite_difference_coords(
    graph: &mut Graph,
    root: Expr,
    bindings: &Bindings,
    eps: f64,
    name: &str,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let mut b = bindings.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &c in coords {
        let orig = b
            .get(name)
            .ok_or_else(|| Error::Unbound(name.to_string()))?
            .data()[c];
        b.get_mut(name).unwrap().data_mut()[c] = orig + eps;
        let plus = graph.forward(root, &b)?.sum();
        b.get_mut(name).unwrap().data_mut()[c] = orig - eps;
        let minus = graph.forward(root, &b)?.sum();
        b.get_mut(name).unwrap().data_mut()[c] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// kernels

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = Tensor::zeros(&[m, n]);
    gemm(
        m,
        k,
        n,
        1.0,
        (a.data(), 0, k, 1),
        (b.data(), 0, n, 1),
        0.0,
        (c.data_mut(), 0, n, 1),
    );
    Ok(c)
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut ga = Tensor::zeros(&[m, k]);
    let mut gb = Tensor::zeros(&[k, n]);
    // ga = g · bᵀ, gb = aᵀ · g
    gemm(
        m,
        n,
        k,
        1.0,
        (g.data(), 0, n, 1),
        (b.data(), 0, 1, n),
        0.0,
        (ga.data_mut(), 0, k, 1),
    );
    gemm(
        k,
        m,
        n,
        1.0,
        (a.data(), 0, 1, k),
        (g.data(), 0, n, 1),
        0.0,
        (gb.data_mut(), 0, n, 1),
    );
    (ga, gb)
}

fn batch_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 3
        || b.rank() != 3
        || a.shape()[0] != b.shape()[0]
        || a.shape()[2] != b.shape()[1]
    {
        return Err(Error::shape(
            "batch_matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut c = Tensor::zeros(&[bs, m, n]);
    for i in 0..bs {
        gemm(
            m,
            k,
            n,
            1.0,
            (a.data(), i * m * k, k, 1),
            (b.data(), i * k * n, n, 1),
            0.0,
            (c.data_mut(), i * m * n, n, 1),
        );
    }
    Ok(c)
}

fn batch_matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for i in 0..bs {
        let (ao, bo, go) = (i * m * k, i * k * n, i * m * n);
        gemm(
            m,
            n,
            k,
            1.0,
            (g.data(), go, n, 1),
            (b.data(), bo, 1, n),
            0.0,
            (ga.data_mut(), ao, k, 1),
        );
        gemm(
            k,
            m,
            n,
            1.0,
            (a.data(), ao, 1, k),
            (g.data(), go, n, 1),
            0.0,
            (gb.data_mut(), bo, n, 1),
        );
    }
    (ga, gb)
}

/// Geometry of a (possibly transposed) temporal convolution.
struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    t: usize,
    v: usize,
    k: usize,
    pad: usize,
    transposed: bool,
}

impl ConvGeom {
    fn new(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, transposed: bool) -> Result<Self> {
        let op = if transposed {
            "temporal_conv_transpose"
        } else {
            "temporal_conv"
        };
        if x.rank() != 4 || w.rank() != 3 {
            return Err(Error::shape(
                op,
                format!("x {:?}, w {:?}", x.shape(), w.shape()),
            ));
        }
        let (n, cin, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (w_in, cout) = if transposed {
            (w.shape()[0], w.shape()[1])
        } else {
            (w.shape()[1], w.shape()[0])
        };
        let k = w.shape()[2];
        if w_in != cin {
            return Err(Error::shape(
                op,
                format!("x has {} channels, weight expects {}", cin, w_in),
            ));
        }
        if k.is_multiple_of(2) {
            return Err(Error::shape(op, format!("kernel size {} must be odd", k)));
        }
        if k > 2 * t {
            return Err(Error::shape(
                op,
                format!("kernel size {} exceeds twice the sequence length {}", k, t),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape(
                    op,
                    format!("bias {:?}, expected [{}]", b.shape(), cout),
                ));
            }
        }
        Ok(ConvGeom {
            n,
            cin,
            cout,
            t,
            v,
            k,
            pad: (k - 1) / 2,
            transposed,
        })
    }

    /// Offset, row stride and column stride of the `cout × cin` tap matrix `k`.
    fn tap(&self, k: usize) -> (usize, usize, usize) {
        if self.transposed {
            (k, self.k, self.cout * self.k)
        } else {
            (k, self.cin * self.k, self.k)
        }
    }

    /// Time shift of tap `k`: output frame `t` reads input frame `t + shift`.
    fn shift(&self, k: usize) -> isize {
        if self.transposed {
            self.pad as isize - k as isize
        } else {
            k as isize - self.pad as isize
        }
    }

    /// Output frame range `[start, end)` for which tap `k` reads inside the input.
    fn range(&self, k: usize) -> Option<(usize, usize, usize)> {
        let d = self.shift(k);
        let t = self.t as isize;
        let start = (-d).max(0);
        let end = (t - d).min(t);
        if end <= start {
            return None;
        }
        Some((start as usize, end as usize, (start + d) as usize))
    }

    fn forward(&self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
        let tv = self.t * self.v;
        let mut out = Tensor::zeros(&[self.n, self.cout, self.t, self.v]);
        if let Some(b) = bias {
            for (c, chunk) in out.data_mut().chunks_mut(tv).enumerate() {
                chunk.fill(b.data()[c % self.cout]);
            }
        }
        for n in 0..self.n {
            let xo = n * self.cin * tv;
            let oo = n * self.cout * tv;
            for k in 0..self.k {
                let Some((start, end, src)) = self.range(k) else {
                    continue;
                };
                let (w_off, rs, cs) = self.tap(k);
                gemm(
                    self.cout,
                    self.cin,
                    (end - start) * self.v,
                    1.0,
                    (w.data(), w_off, rs, cs),
                    (x.data(), xo + src * self.v, tv, 1),
                    1.0,
                    (out.data_mut(), oo + start * self.v, tv, 1),
                );
            }
        }
        out
    }

    fn backward(
        &self,
        x: &Tensor,
        w: &Tensor,
        g: &Tensor,
        want_x: bool,
    ) -> (Option<Tensor>, Tensor, Tensor) {
        let tv = self.t * self.v;
        let mut gx = if want_x {
            Some(Tensor::zeros(x.shape()))
        } else {
            None
        };
        let mut gw = Tensor::zeros(w.shape());
        let mut gb = Tensor::zeros(&[self.cout]);
        for (c, chunk) in g.data().chunks(tv).enumerate() {
            gb.data_mut()[c % self.cout] += chunk.iter().sum::<f64>();
        }
        for n in 0..self.n {
            let xo = n * self.cin * tv;
            let go = n * self.cout * tv;
            for k in 0..self.k {
                let Some((start, end, src)) = self.range(k) else {
                    continue;
                };
                let len = (end - start) * self.v;
                let (w_off, rs, cs) = self.tap(k);
                // gx[cin, src..] += tapᵀ · g[cout, start..]
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        self.cin,
                        self.cout,
                        len,
                        1.0,
                        (w.data(), w_off, cs, rs),
                        (g.data(), go + start * self.v, tv, 1),
                        1.0,
                        (gx.data_mut(), xo + src * self.v, tv, 1),
                    );
                }
                // tap += g[cout, start..] · x[cin, src..]ᵀ
                gemm(
                    self.cout,
                    len,
                    self.cin,
                    1.0,
                    (g.data(), go + start * self.v, tv, 1),
                    (x.data(), xo + src * self.v, 1, tv),
                    1.0,
                    (gw.data_mut(), w_off, rs, cs),
                );
            }
        }
        (gx, gw, gb)
    }
}

fn graph_aggregate(x: &Tensor, adj: &Tensor) -> Result<Tensor> {
    let v = *x.shape().last().unwrap_or(&0);
    if adj.shape() != [v, v] {
        return Err(Error::shape(
            "graph_aggregate",
            format!("x {:?}, adjacency {:?}", x.shape(), adj.shape()),
        ));
    }
    let rows = x.len() / v.max(1);
    let mut out = Tensor::zeros(x.shape());
    gemm(
        rows,
        v,
        v,
        1.0,
        (x.data(), 0, v, 1),
        (adj.data(), 0, 1, v),
        0.0,
        (out.data_mut(), 0, v, 1),
    );
    Ok(out)
}

fn graph_aggregate_backward(
    x: &Tensor,
    adj: &Tensor,
    g: &Tensor,
    want_x: bool,
    want_adj: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let v = adj.shape()[0];
    let rows = x.len() / v.max(1);
    let gx = want_x.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        gemm(
            rows,
            v,
            v,
            1.0,
            (g.data(), 0, v, 1),
            (adj.data(), 0, v, 1),
            0.0,
            (gx.data_mut(), 0, v, 1),
        );
        gx
    });
    let ga = want_adj.then(|| {
        let mut ga = Tensor::zeros(adj.shape());
        gemm(
            v,
            rows,
            v,
            1.0,
            (g.data(), 0, 1, v),
            (x.data(), 0, v, 1),
            0.0,
            (ga.data_mut(), 0, v, 1),
        );
        ga
    });
    (gx, ga)
}

/// (channels, inner) layout of a `[N, C, ...]` tensor.
fn bn_layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(Error::shape("batch_norm", format!("input {:?}", x.shape())));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let inner = x.len() / (n * c).max(1);
    Ok((n, c, inner))
}

fn batch_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: &BatchNormMode,
) -> Result<(Tensor, Cache)> {
    let (n, c, inner) = bn_layout(x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "{} channels, gamma {:?}, beta {:?}",
                c,
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    let xd = x.data();
    let mut out = Tensor::zeros(x.shape());
    match mode {
        BatchNormMode::Train => {
            let count = n * inner;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    mean[ch] += xd[base..base + inner].iter().sum::<f64>();
                }
            }
            for m in &mut mean {
                *m /= count as f64;
            }
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    var[ch] += xd[base..base + inner]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            for v in &mut var {
                *v /= count as f64;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = Tensor::zeros(x.shape());
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    for j in base..base + inner {
                        let h = (xd[j] - mean[ch]) * inv_std[ch];
                        xhat.data_mut()[j] = h;
                        out.data_mut()[j] = gamma.data()[ch] * h + beta.data()[ch];
                    }
                }
            }
            Ok((
                out,
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    mean,
                    var,
                    count,
                },
            ))
        }
        BatchNormMode::Eval {
            running_mean,
            running_var,
        } => {
            if running_mean.shape() != [c] || running_var.shape() != [c] {
                return Err(Error::shape("batch_norm", "running statistics shape"));
            }
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    let inv = 1.0 / (running_var.data()[ch] + BN_EPS).sqrt();
                    let (g, b, m) = (gamma.data()[ch], beta.data()[ch], running_mean.data()[ch]);
                    for j in base..base + inner {
                        out.data_mut()[j] = g * (xd[j] - m) * inv + b;
                    }
                }
            }
            Ok((out, Cache::None))
        }
    }
}

fn batch_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    mode: &BatchNormMode,
    cache: &Cache,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, inner) = bn_layout(x).expect("validated in forward");
    let gd = g.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut gg = Tensor::zeros(&[c]);
    let mut gb = Tensor::zeros(&[c]);
    match (mode, cache) {
        (
            BatchNormMode::Train,
            Cache::BatchNorm {
                xhat,
                inv_std,
                count,
                ..
            },
        ) => {
            let hd = xhat.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gh = vec![0.0; c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    for j in base..base + inner {
                        sum_g[ch] += gd[j];
                        sum_gh[ch] += gd[j] * hd[j];
                    }
                }
            }
            let m = *count as f64;
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    let scale = gamma.data()[ch] * inv_std[ch] / m;
                    for j in base..base + inner {
                        gx.data_mut()[j] = scale * (m * gd[j] - sum_g[ch] - hd[j] * sum_gh[ch]);
                    }
                }
            }
            gg.data_mut().copy_from_slice(&sum_gh);
            gb.data_mut().copy_from_slice(&sum_g);
        }
        (
            BatchNormMode::Eval {
                running_mean,
                running_var,
            },
            _,
        ) => {
            let xd = x.data();
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * inner;
                    let inv = 1.0 / (running_var.data()[ch] + BN_EPS).sqrt();
                    let m = running_mean.data()[ch];
                    for j in base..base + inner {
                        gx.data_mut()[j] = gd[j] * gamma.data()[ch] * inv;
                        gg.data_mut()[ch] += gd[j] * (xd[j] - m) * inv;
                        gb.data_mut()[ch] += gd[j];
                    }
                }
            }
        }
        (BatchNormMode::Train, _) => unreachable!("training batch norm always caches"),
    }
    (gx, gg, gb)
}

/// For every linear index of `full`, the linear index of the corresponding
/// element of `small` (whose dims are 1 or equal to `full`'s).
fn broadcast_map(full: &[usize], small: &[usize]) -> Vec<usize> {
    let small_strides = strides(small);
    let eff: Vec<usize> = small
        .iter()
        .zip(&small_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let total: usize = full.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; full.len()];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for d in (0..full.len()).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < full[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn mean_pool(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let mut shape = x.shape().to_vec();
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::shape(
                "mean_pool",
                format!("axis {} of {:?}", a, x.shape()),
            ));
        }
        shape[a] = 1;
    }
    let mut out = Tensor::zeros(&shape);
    let count = (x.len() / out.len().max(1)) as f64;
    let map = broadcast_map(x.shape(), &shape);
    for (&j, &v) in map.iter().zip(x.data()) {
        out.data_mut()[j] += v;
    }
    for v in out.data_mut() {
        *v /= count;
    }
    Ok(out)
}

fn repeat(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.len() != x.rank() || x.shape().iter().zip(shape).any(|(&a, &b)| a != b && a != 1) {
        return Err(Error::shape(
            "repeat",
            format!("{:?} -> {:?}", x.shape(), shape),
        ));
    }
    let map = broadcast_map(shape, x.shape());
    let data = map.iter().map(|&j| x.data()[j]).collect();
    Tensor::new(shape.to_vec(), data)
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::shape(
            "concat",
            format!("axis {} of {:?}", axis, first.shape()),
        ));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?} along axis {}", p.shape(), first.shape(), axis),
            ));
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let (outer, inner) = outer_inner(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(shape, data)
}

fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.rank() || start + len > x.shape()[axis] {
        return Err(Error::shape(
            "slice",
            format!(
                "[{}, {}) on axis {} of {:?}",
                start,
                start + len,
                axis,
                x.shape()
            ),
        ));
    }
    let dim = x.shape()[axis];
    let (outer, inner) = outer_inner(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = o * dim * inner + start * inner;
        data.extend_from_slice(&x.data()[src..src + len * inner]);
    }
    Tensor::new(shape, data)
}

fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let k = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

fn check_logits(l: &Tensor, labels: &[usize]) -> Result<()> {
    if l.rank() != 2 || l.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits {:?} with {} labels", l.shape(), labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= l.shape()[1]) {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("label {} with {} classes", bad, l.shape()[1]),
        ));
    }
    Ok(())
}

/// Softmax of a plain vector.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    softmax_last(&Tensor::vector(values))
        .map(Tensor::into_data)
        .unwrap_or_default()
}
