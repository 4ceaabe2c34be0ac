//! Spatial-temporal graph convolution (ST-GCN) and deconvolution (ST-GDCN)
//! blocks.
//!
//! Feature tensors are laid out `[N, C, T, V]`. A block aggregates each
//! joint's neighborhood with the normalized adjacency, mixes channels, then
//! convolves along time with zero padding so that `T` and `V` are preserved.

use crate::autodiff::{Bindings, Expr, Graph};
use crate::error::{Error, Result};
use crate::params::{init_batch_norm, uniform_init, NetBuilder, ParamStore};
use crate::rng::Rng;
use crate::skeleton::AdjacencyMatrix;
use crate::tensor::Tensor;

pub const DEFAULT_TEMPORAL_KERNEL: usize = 9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StgcnLayerConfig {
    pub in_channels: usize,
    /// Number of kernels, i.e. output channels.
    pub out_channels: usize,
    pub temporal_kernel: usize,
    pub stride: usize,
    pub batch_norm: bool,
    pub relu: bool,
}

impl StgcnLayerConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        StgcnLayerConfig {
            in_channels,
            out_channels,
            temporal_kernel: DEFAULT_TEMPORAL_KERNEL,
            stride: 1,
            batch_norm: true,
            relu: true,
        }
    }

    pub fn kernel(mut self, k: usize) -> Self {
        self.temporal_kernel = k;
        self
    }

    /// Final linear layer: no batch norm, no activation.
    pub fn linear_output(mut self) -> Self {
        self.batch_norm = false;
        self.relu = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "temporal kernel {} must be odd",
                self.temporal_kernel
            )));
        }
        if self.stride != 1 {
            return Err(Error::Config("only stride 1 is supported".into()));
        }
        Ok(())
    }
}

/// Register the parameters of one block under `prefix`.
///
/// `{prefix}.spatial: [out, in, 1]`, `{prefix}.temporal: [out, out, K]`,
/// `{prefix}.bias: [out]`, and `{prefix}.bn.*` when batch norm is enabled.
pub fn init_block(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &StgcnLayerConfig,
    rng: &mut Rng,
) -> Result<()> {
    cfg.validate()?;
    let (cin, cout, k) = (cfg.in_channels, cfg.out_channels, cfg.temporal_kernel);
    store.insert_param(
        format!("{prefix}.spatial"),
        uniform_init(&[cout, cin, 1], cin, rng),
    );
    store.insert_param(
        format!("{prefix}.temporal"),
        uniform_init(&[cout, cout, k], cout * k, rng),
    );
    store.insert_param(format!("{prefix}.bias"), Tensor::zeros(&[cout]));
    if cfg.batch_norm {
        init_batch_norm(store, &format!("{prefix}.bn"), cout);
    }
    Ok(())
}

fn block(
    b: &mut NetBuilder<'_>,
    x: Expr,
    adj: Expr,
    prefix: &str,
    cfg: &StgcnLayerConfig,
    transposed: bool,
) -> Result<Expr> {
    cfg.validate()?;
    let ws = b.param(&format!("{prefix}.spatial"));
    let wt = b.param(&format!("{prefix}.temporal"));
    let bias = b.param(&format!("{prefix}.bias"));
    let agg = b.graph.graph_aggregate(x, adj);
    let mixed = b.graph.temporal_conv(agg, ws, None);
    let mut y = if transposed {
        b.graph.temporal_conv_transpose(mixed, wt, Some(bias))
    } else {
        b.graph.temporal_conv(mixed, wt, Some(bias))
    };
    if cfg.batch_norm {
        y = b.batch_norm(y, &format!("{prefix}.bn"))?;
    }
    if cfg.relu {
        y = b.graph.relu(y);
    }
    Ok(y)
}

/// Spatial aggregation → channel mixing → temporal convolution → BN → ReLU.
pub fn stgcn_block(
    b: &mut NetBuilder<'_>,
    x: Expr,
    adj: Expr,
    prefix: &str,
    cfg: &StgcnLayerConfig,
) -> Result<Expr> {
    block(b, x, adj, prefix, cfg, false)
}

/// As [`stgcn_block`] with a stride-1 transposed temporal convolution.
pub fn stgdcn_block(
    b: &mut NetBuilder<'_>,
    x: Expr,
    adj: Expr,
    prefix: &str,
    cfg: &StgcnLayerConfig,
) -> Result<Expr> {
    block(b, x, adj, prefix, cfg, true)
}

fn batched(x: &Tensor) -> Result<(Tensor, bool)> {
    match x.rank() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            Ok((x.reshape(&s)?, true))
        }
        4 => Ok((x.clone(), false)),
        _ => Err(Error::shape(
            "stgcn",
            format!("expected C×T×V or N×C×T×V, got {:?}", x.shape()),
        )),
    }
}

fn unbatched(t: Tensor, squeeze: bool) -> Result<Tensor> {
    if squeeze {
        let s = t.shape()[1..].to_vec();
        t.into_reshape(&s)
    } else {
        Ok(t)
    }
}

fn eval1(build: impl FnOnce(&mut Graph) -> Expr, bindings: Bindings) -> Result<Tensor> {
    let mut g = Graph::new();
    let root = build(&mut g);
    g.forward(root, &bindings)
}

/// `out[c', t, i] = Σ_c W[c', c] Σ_j Â[i, j] X[c, t, j]` for `X: C×T×V`
/// (or batched), `W: C'×C`. No activation.
pub fn spatial_graph_conv(x: &Tensor, adj: &AdjacencyMatrix, w: &Tensor) -> Result<Tensor> {
    let (xb, squeeze) = batched(x)?;
    if w.rank() != 2 || w.shape()[1] != xb.shape()[1] {
        return Err(Error::shape(
            "spatial_graph_conv",
            format!(
                "weight {:?} for {} input channels",
                w.shape(),
                xb.shape()[1]
            ),
        ));
    }
    let w3 = w.reshape(&[w.shape()[0], w.shape()[1], 1])?;
    let bindings = Bindings::from([
        ("x".to_string(), xb),
        ("adj".to_string(), adj.tensor().clone()),
        ("w".to_string(), w3),
    ]);
    let out = eval1(
        |g| {
            let (x, a, w) = (g.input("x"), g.input("adj"), g.input("w"));
            let agg = g.graph_aggregate(x, a);
            g.temporal_conv(agg, w, None)
        },
        bindings,
    )?;
    unbatched(out, squeeze)
}

/// Zero-padded convolution along time, independently per joint.
/// `w: [C', C, K]` with `K` odd.
pub fn temporal_conv(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (xb, squeeze) = batched(x)?;
    let mut bindings = Bindings::from([("x".to_string(), xb), ("w".to_string(), w.clone())]);
    if let Some(b) = bias {
        bindings.insert("b".to_string(), b.clone());
    }
    let has_bias = bias.is_some();
    let out = eval1(
        |g| {
            let (x, w) = (g.input("x"), g.input("w"));
            let b = has_bias.then(|| g.input("b"));
            g.temporal_conv(x, w, b)
        },
        bindings,
    )?;
    unbatched(out, squeeze)
}

/// Mean over time and joints: `C×T×V → C×1×1` (or batched).
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (xb, squeeze) = batched(x)?;
    let out = eval1(
        |g| {
            let x = g.input("x");
            g.mean_pool(x, &[2, 3])
        },
        Bindings::from([("x".to_string(), xb)]),
    )?;
    unbatched(out, squeeze)
}

/// Broadcast `C×1×1 → C×T×V` (or batched).
pub fn repeat_unpool(x: &Tensor, frames: usize, joints: usize) -> Result<Tensor> {
    let (xb, squeeze) = batched(x)?;
    let (n, c) = (xb.shape()[0], xb.shape()[1]);
    let out = eval1(
        |g| {
            let x = g.input("x");
            g.repeat(x, &[n, c, frames, joints])
        },
        Bindings::from([("x".to_string(), xb)]),
    )?;
    unbatched(out, squeeze)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Mode;
    use crate::rng::{stream, Stream};
    use crate::skeleton::{build_adjacency, default_topology, SkeletonTopology};

    #[test]
    fn identity_propagation() {
        let x = Tensor::new(vec![2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        let adj = AdjacencyMatrix::from_tensor(Tensor::identity(4)).unwrap();
        assert_eq!(
            spatial_graph_conv(&x, &adj, &Tensor::identity(2)).unwrap(),
            x
        );
    }

    #[test]
    fn constant_features_unchanged_by_aggregation() {
        let adj = build_adjacency(&default_topology()).unwrap();
        let x = Tensor::full(&[1, 5, 16], 2.5);
        let y = spatial_graph_conv(&x, &adj, &Tensor::identity(1)).unwrap();
        assert!(y.data().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn two_node_hand_example() {
        let topo =
            SkeletonTopology::new(vec!["a".into(), "b".into()], &[(0, 1)], vec![[0.0; 3]; 2])
                .unwrap();
        let adj = build_adjacency(&topo).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let y = spatial_graph_conv(&x, &adj, &Tensor::identity(1)).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::new(vec![1, 6, 2], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let w = Tensor::ones(&[1, 1, 1]);
        assert_eq!(temporal_conv(&x, &w, None).unwrap(), x);
    }

    #[test]
    fn averaging_kernel_keeps_constant_interior() {
        let x = Tensor::full(&[1, 10, 3], 4.0);
        let w = Tensor::full(&[1, 1, 3], 1.0 / 3.0);
        let y = temporal_conv(&x, &w, None).unwrap();
        for t in 1..9 {
            for v in 0..3 {
                assert!((y.get(&[0, t, v]) - 4.0).abs() < 1e-12);
            }
        }
        // zero padding shows at the ends
        assert!((y.get(&[0, 0, 0]) - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn difference_kernel_gives_central_velocity() {
        // weights [-1, 0, 1] read frames t-1, t, t+1: out = x[t+1] - x[t-1]
        let t = 8;
        let x = Tensor::new(vec![1, t, 1], (0..t).map(|i| (i * i) as f64).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 3], vec![-1.0, 0.0, 1.0]).unwrap();
        let y = temporal_conv(&x, &w, None).unwrap();
        for i in 1..t - 1 {
            // vel^{t+1} + vel^t for vel^t = x^t - x^{t-1}
            let vel = |k: usize| x.data()[k] - x.data()[k - 1];
            assert!((y.data()[i] - (vel(i + 1) + vel(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_validation() {
        let x = Tensor::zeros(&[1, 3, 2]);
        assert!(temporal_conv(&x, &Tensor::zeros(&[1, 1, 2]), None).is_err());
        assert!(temporal_conv(&x, &Tensor::zeros(&[1, 1, 7]), None).is_err());
        assert!(temporal_conv(&x, &Tensor::zeros(&[1, 1, 5]), None).is_ok());
    }

    #[test]
    fn pooling_and_unpooling() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::new(vec![3, 1, 1], vec![1.0, -2.0, 0.5]).unwrap();
        let up = repeat_unpool(&c, 75, 16).unwrap();
        assert_eq!(up.shape(), &[3, 75, 16]);
        assert_eq!(global_avg_pool(&up).unwrap(), c);
        let big = Tensor::full(&[32, 75, 16], 1.5);
        let p = global_avg_pool(&big).unwrap();
        assert_eq!(p.shape(), &[32, 1, 1]);
        assert!(p.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn block_output_shape_and_zero_input() {
        let adj = build_adjacency(&default_topology()).unwrap();
        let cfg = StgcnLayerConfig::new(3, 64);
        let mut store = ParamStore::new();
        init_block(&mut store, "b0", &cfg, &mut stream(1, Stream::Init)).unwrap();
        for transposed in [false, true] {
            let mut b = NetBuilder::new(&store, Mode::Eval);
            let x = b.graph.input("x");
            let a = b.graph.constant(adj.tensor().clone());
            let y = if transposed {
                stgdcn_block(&mut b, x, a, "b0", &cfg.clone().linear_output()).unwrap()
            } else {
                stgcn_block(&mut b, x, a, "b0", &cfg).unwrap()
            };
            let mut bind = store.bindings();
            bind.insert("x".into(), Tensor::zeros(&[1, 3, 75, 16]));
            let (mut g, _) = b.into_parts();
            let out = g.forward(y, &bind).unwrap();
            assert_eq!(out.shape(), &[1, 64, 75, 16]);
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }
}
