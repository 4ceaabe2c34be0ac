//! Named parameter storage shared by both networks.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::autodiff::{BatchNormMode, Bindings, Expr, Graph};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Learned parameters plus non-learned buffers (batch-norm running
/// statistics, feature normalization constants).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Unbound(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Unbound(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Unbound(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::Unbound(name.to_string()))
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .values()
            .chain(self.buffers.values())
            .all(Tensor::is_finite)
    }

    /// All learned parameters as graph bindings.
    pub fn bindings(&self) -> Bindings {
        self.params.clone()
    }

    /// Set every learned parameter to zero.
    pub fn zero_params(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().fill(0.0);
        }
    }
}

/// Uniform `[−√(1/fan_in), √(1/fan_in)]` initialization.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Builds a network graph whose parameters are named inputs bound from a
/// [`ParamStore`].
pub struct NetBuilder<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    mode: Mode,
    bn_nodes: Vec<(String, Expr)>,
}

impl<'a> NetBuilder<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        NetBuilder {
            graph: Graph::new(),
            store,
            mode,
            bn_nodes: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Expr {
        self.graph.input(name)
    }

    /// Batch norm with parameters `{prefix}.gamma` / `{prefix}.beta` and
    /// running statistics `{prefix}.running_mean` / `{prefix}.running_var`.
    pub fn batch_norm(&mut self, x: Expr, prefix: &str) -> Result<Expr> {
        let gamma = self.param(&format!("{prefix}.gamma"));
        let beta = self.param(&format!("{prefix}.beta"));
        let mode = match self.mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval {
                running_mean: self
                    .store
                    .buffer(&format!("{prefix}.running_mean"))?
                    .clone(),
                running_var: self.store.buffer(&format!("{prefix}.running_var"))?.clone(),
            },
        };
        let e = self.graph.batch_norm(x, gamma, beta, mode);
        self.bn_nodes.push((prefix.to_string(), e));
        Ok(e)
    }

    /// `x · W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Expr, prefix: &str, batch: usize) -> Result<Expr> {
        let w = self.param(&format!("{prefix}.w"));
        let out = self.store.param(&format!("{prefix}.b"))?.len();
        let b = self.param(&format!("{prefix}.b"));
        let y = self.graph.matmul(x, w);
        let b2 = self.graph.reshape(b, &[1, out]);
        let bb = self.graph.repeat(b2, &[batch, out]);
        Ok(self.graph.add(y, bb))
    }

    pub fn into_parts(self) -> (Graph, Vec<(String, Expr)>) {
        (self.graph, self.bn_nodes)
    }
}

/// Register the parameters and buffers for one batch-norm layer.
pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.insert_param(format!("{prefix}.gamma"), Tensor::ones(&[channels]));
    store.insert_param(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
    store.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
    store.insert_buffer(format!("{prefix}.running_var"), Tensor::ones(&[channels]));
}

pub fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    output: usize,
    rng: &mut Rng,
) {
    store.insert_param(
        format!("{prefix}.w"),
        uniform_init(&[input, output], input, rng),
    );
    store.insert_param(format!("{prefix}.b"), Tensor::zeros(&[output]));
}

/// Blend training-mode batch statistics into the running statistics.
pub fn update_running_stats(
    store: &mut ParamStore,
    graph: &Graph,
    bn_nodes: &[(String, Expr)],
) -> Result<()> {
    for (prefix, e) in bn_nodes {
        let Some(stats) = graph.batch_stats(*e) else {
            continue;
        };
        let mean = store.buffer_mut(&format!("{prefix}.running_mean"))?;
        for (r, m) in mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let var = store.buffer_mut(&format!("{prefix}.running_var"))?;
        for (r, v) in var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
    Ok(())
}
