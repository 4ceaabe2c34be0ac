//! Finite-difference gradient checks for every primitive and network block,
//! on random `2 × 3 × 8 × 16` inputs.

use crate::autodiff::{finite_difference_coords, BatchNormMode, Bindings, Expr, Graph};
use crate::classifier::{Classifier, ClassifierConfig, Head};
use crate::error::Result;
use crate::gait::Emotion;
use crate::params::{Mode, NetBuilder, ParamStore};
use crate::rng::{normal_vec, stream, Rng, Stream};
use crate::skeleton::{build_adjacency, default_topology};
use crate::stepgen::{
    kl_graph, reconstruction_loss_graph, Generator, GeneratorConfig, LossWeights, LATENT_DIM,
};
use crate::stgcn::{init_block, stgcn_block, stgdcn_block, StgcnLayerConfig};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Absolute floor for gradients that vanish exactly, such as a bias feeding
/// a training-mode batch norm.
pub const ABS_TOL: f64 = 1e-5;

const N: usize = 2;
const C: usize = 3;
const T: usize = 8;
const V: usize = 16;

/// Outcome for one input of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: String,
    pub input: String,
    pub rel_error: f64,
    pub abs_error: f64,
    /// Larger of the analytic and numeric gradient norms.
    pub grad_norm: f64,
    pub passed: bool,
}

fn rng(seed: u64) -> Rng {
    stream(seed, Stream::Noise)
}

fn randn(shape: &[usize], r: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal_vec(r, n)).expect("length matches shape")
}

fn sample_coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max)
        .map(|i| i * len / max + (i * 7) % (len / max).max(1))
        .collect()
}

/// Reduce `e` to a scalar through a fixed random projection and compare the
/// analytic gradient of every free input against central differences on up
/// to `max_coords` coordinates.
pub fn check_expr(
    case: &str,
    g: &mut Graph,
    e: Expr,
    b: &Bindings,
    max_coords: usize,
    seed: u64,
) -> Result<Vec<CaseResult>> {
    let out = g.forward(e, b)?;
    let pc = g.constant(randn(out.shape(), &mut rng(seed ^ 0xabc)));
    let m = g.mul(e, pc);
    let root = g.sum(m);
    g.forward(root, b)?;
    let grads = g.backward(root, &Tensor::full(&[], 1.0))?;
    let mut results = Vec::new();
    for name in g.free_inputs(root) {
        let an = &grads[&name];
        let coords = sample_coords(an.len(), max_coords);
        let fd = finite_difference_coords(g, root, b, EPS, &name, &coords)?;
        let a: Vec<f64> = coords.iter().map(|&c| an.data()[c]).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: f64 = a
            .iter()
            .zip(&fd)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = norm(&a).max(norm(&fd));
        results.push(CaseResult {
            case: case.to_string(),
            input: name,
            rel_error: if scale > 0.0 { diff / scale } else { 0.0 },
            abs_error: diff,
            grad_norm: scale,
            passed: diff <= REL_TOL * scale + ABS_TOL,
        });
    }
    Ok(results)
}

fn bind(pairs: Vec<(&str, Tensor)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

type Binary = fn(&mut Graph, Expr, Expr) -> Expr;
type Unary = fn(&mut Graph, Expr) -> Expr;

pub fn elementwise() -> Result<Vec<CaseResult>> {
    let mut r = rng(1);
    let b = bind(vec![
        ("x", randn(&[N, C, T, V], &mut r)),
        ("y", randn(&[N, C, T, V], &mut r)),
    ]);
    let ops: [(&str, Binary); 7] = [
        ("add", |g, x, y| g.add(x, y)),
        ("sub", |g, x, y| g.sub(x, y)),
        ("mul", |g, x, y| g.mul(x, y)),
        ("scale", |g, x, _| g.scale(x, -2.5)),
        ("add_scalar", |g, x, _| g.add_scalar(x, 3.0)),
        ("relu", |g, x, y| {
            let s = g.add(x, y);
            g.relu(s)
        }),
        ("exp", |g, x, _| {
            let s = g.scale(x, 0.5);
            g.exp(s)
        }),
    ];
    let mut out = Vec::new();
    for (i, (name, op)) in ops.iter().enumerate() {
        let mut g = Graph::new();
        let (x, y) = (g.input("x"), g.input("y"));
        let e = op(&mut g, x, y);
        let z = g.scale(y, 0.0);
        let e = g.add(e, z);
        out.extend(check_expr(name, &mut g, e, &b, 40, i as u64)?);
    }
    Ok(out)
}

pub fn matrix_products() -> Result<Vec<CaseResult>> {
    let mut r = rng(2);
    let mut out = Vec::new();
    let b = bind(vec![
        ("a", randn(&[4, 5], &mut r)),
        ("b", randn(&[5, 3], &mut r)),
    ]);
    let mut g = Graph::new();
    let (a, w) = (g.input("a"), g.input("b"));
    let e = g.matmul(a, w);
    out.extend(check_expr("matmul", &mut g, e, &b, 100, 1)?);

    let b = bind(vec![
        ("a", randn(&[3, 4, 5], &mut r)),
        ("b", randn(&[3, 5, 2], &mut r)),
    ]);
    let mut g = Graph::new();
    let (a, w) = (g.input("a"), g.input("b"));
    let e = g.batch_matmul(a, w);
    out.extend(check_expr("batch_matmul", &mut g, e, &b, 100, 2)?);
    Ok(out)
}

pub fn temporal_convolutions() -> Result<Vec<CaseResult>> {
    let mut r = rng(3);
    let mut out = Vec::new();
    for (k, transposed) in [(1, false), (3, false), (9, false), (3, true), (9, true)] {
        let w_shape = if transposed { [C, 4, k] } else { [4, C, k] };
        let b = bind(vec![
            ("x", randn(&[N, C, T, V], &mut r)),
            ("w", randn(&w_shape, &mut r)),
            ("bias", randn(&[4], &mut r)),
        ]);
        let mut g = Graph::new();
        let (x, w, bias) = (g.input("x"), g.input("w"), g.input("bias"));
        let (name, e) = if transposed {
            (
                format!("conv_transpose_k{}", k),
                g.temporal_conv_transpose(x, w, Some(bias)),
            )
        } else {
            (format!("conv_k{}", k), g.temporal_conv(x, w, Some(bias)))
        };
        out.extend(check_expr(&name, &mut g, e, &b, 60, k as u64)?);
    }
    Ok(out)
}

pub fn aggregation_and_shape_ops() -> Result<Vec<CaseResult>> {
    let mut r = rng(4);
    let mut out = Vec::new();
    let adj = build_adjacency(&default_topology())?.tensor().clone();
    let b = bind(vec![("x", randn(&[N, C, T, V], &mut r)), ("adj", adj)]);
    let mut g = Graph::new();
    let (x, a) = (g.input("x"), g.input("adj"));
    let e = g.graph_aggregate(x, a);
    out.extend(check_expr("graph_aggregate", &mut g, e, &b, 60, 1)?);

    let b = bind(vec![
        ("x", randn(&[N, C, T, V], &mut r)),
        ("y", randn(&[N, 2, T, V], &mut r)),
    ]);
    let mut g = Graph::new();
    let (x, y) = (g.input("x"), g.input("y"));
    let cat = g.concat(&[x, y], 1);
    let sl = g.slice(cat, 2, 2, 5);
    let pooled = g.mean_pool(sl, &[2, 3]);
    let flat = g.reshape(pooled, &[N, C + 2]);
    let back = g.reshape(flat, &[N, C + 2, 1, 1]);
    let e = g.repeat(back, &[N, C + 2, 3, 4]);
    out.extend(check_expr(
        "concat_slice_pool_reshape_repeat",
        &mut g,
        e,
        &b,
        60,
        2,
    )?);
    Ok(out)
}

pub fn batch_norm() -> Result<Vec<CaseResult>> {
    let mut r = rng(5);
    let b = bind(vec![
        ("x", randn(&[N, C, T, V], &mut r)),
        ("gamma", randn(&[C], &mut r)),
        ("beta", randn(&[C], &mut r)),
    ]);
    let modes = [
        ("batch_norm_train", BatchNormMode::Train),
        (
            "batch_norm_eval",
            BatchNormMode::Eval {
                running_mean: Tensor::new(vec![C], vec![0.1, -0.2, 0.3])?,
                running_var: Tensor::new(vec![C], vec![0.5, 1.5, 2.0])?,
            },
        ),
    ];
    let mut out = Vec::new();
    for (i, (name, mode)) in modes.into_iter().enumerate() {
        let mut g = Graph::new();
        let (x, ga, be) = (g.input("x"), g.input("gamma"), g.input("beta"));
        let e = g.batch_norm(x, ga, be, mode);
        out.extend(check_expr(name, &mut g, e, &b, 60, i as u64)?);
    }
    Ok(out)
}

pub fn reductions_and_softmax() -> Result<Vec<CaseResult>> {
    let mut r = rng(6);
    let b = bind(vec![("x", randn(&[4, 5], &mut r))]);
    let ops: [(&str, Unary); 4] = [
        ("softmax", |g, x| g.softmax(x)),
        ("softmax_cross_entropy", |g, x| {
            g.softmax_cross_entropy(x, &[0, 3, 4, 1])
        }),
        ("sum_squares", |g, x| g.sum_squares(x)),
        ("sum", |g, x| g.sum(x)),
    ];
    let mut out = Vec::new();
    for (i, (name, op)) in ops.iter().enumerate() {
        let mut g = Graph::new();
        let x = g.input("x");
        let e = op(&mut g, x);
        out.extend(check_expr(name, &mut g, e, &b, 40, i as u64)?);
    }
    Ok(out)
}

/// ST-GCN and ST-GDCN blocks, with and without batch norm and activation.
pub fn blocks() -> Result<Vec<CaseResult>> {
    let adj = build_adjacency(&default_topology())?.tensor().clone();
    let cfgs = [
        StgcnLayerConfig::new(C, 4),
        StgcnLayerConfig::new(C, 4).kernel(3).linear_output(),
    ];
    let mut out = Vec::new();
    for (i, cfg) in cfgs.iter().enumerate() {
        for transposed in [false, true] {
            let mut r = rng(7 + i as u64);
            let mut store = ParamStore::new();
            init_block(&mut store, "blk", cfg, &mut r)?;
            for (_, t) in store.params_mut() {
                let noise = randn(t.shape(), &mut r);
                for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
                    *v += 0.1 * n;
                }
            }
            let mut bindings = store.bindings();
            bindings.insert("x".into(), randn(&[N, C, T, V], &mut r));
            let mut nb = NetBuilder::new(&store, Mode::Train);
            let x = nb.graph.input("x");
            let a = nb.graph.constant(adj.clone());
            let e = if transposed {
                stgdcn_block(&mut nb, x, a, "blk", cfg)?
            } else {
                stgcn_block(&mut nb, x, a, "blk", cfg)?
            };
            let (mut g, _) = nb.into_parts();
            let name = format!("{}_{}", if transposed { "stgdcn" } else { "stgcn" }, i);
            out.extend(check_expr(&name, &mut g, e, &bindings, 40, i as u64)?);
        }
    }
    Ok(out)
}

fn small_generator(seed: u64) -> Result<Generator> {
    let cfg = GeneratorConfig {
        frames: T,
        ..GeneratorConfig::default()
    };
    Generator::new(cfg, &default_topology(), seed)
}

const LABELS: [Emotion; N] = [Emotion::Happy, Emotion::Sad];

pub fn encoder_and_decoder() -> Result<Vec<CaseResult>> {
    let gen = small_generator(11)?;
    let mut r = rng(11);
    let mut bindings = gen.store().bindings();
    bindings.insert("x".into(), randn(&[N, C, T, V], &mut r));
    bindings.insert("z".into(), randn(&[N, LATENT_DIM], &mut r));
    let mut out = Vec::new();

    let mut nb = NetBuilder::new(gen.store(), Mode::Train);
    let x = nb.graph.input("x");
    let (mu, lv) = gen.encoder_graph(&mut nb, x, &LABELS)?;
    let both = nb.graph.concat(&[mu, lv], 1);
    let (mut g, _) = nb.into_parts();
    out.extend(check_expr("encoder", &mut g, both, &bindings, 8, 1)?);

    let mut nb = NetBuilder::new(gen.store(), Mode::Train);
    let z = nb.graph.input("z");
    let dec = gen.decoder_graph(&mut nb, z, &LABELS)?;
    let (mut g, _) = nb.into_parts();
    out.extend(check_expr("decoder", &mut g, dec, &bindings, 8, 2)?);
    Ok(out)
}

/// Full generator objective, reconstruction plus KL, through the
/// reparameterized sample.
pub fn generator_objective() -> Result<Vec<CaseResult>> {
    let gen = small_generator(12)?;
    let mut r = rng(12);
    let x = randn(&[N, C, T, V], &mut r);
    let noise = randn(&[N, LATENT_DIM], &mut r);
    let w = LossWeights {
        lambda_c: 0.7,
        lambda_d: 1.3,
        beta_kl: 0.5,
    };
    let mut gg = gen.training_graph(&x, &LABELS, &noise, &w, Mode::Train)?;
    check_expr(
        "generator_total",
        &mut gg.graph,
        gg.total,
        &gen.store().bindings(),
        5,
        3,
    )
}

pub fn losses() -> Result<Vec<CaseResult>> {
    let mut r = rng(13);
    let b = bind(vec![
        ("real", randn(&[N, C, T, V], &mut r)),
        ("synth", randn(&[N, C, T, V], &mut r)),
        ("mu", randn(&[N, LATENT_DIM], &mut r)),
        ("lv", randn(&[N, LATENT_DIM], &mut r)),
    ]);
    let w = LossWeights {
        lambda_c: 0.5,
        lambda_d: 2.0,
        beta_kl: 1.0,
    };
    let mut out = Vec::new();
    for (which, name) in [
        "loss_original",
        "loss_push",
        "loss_pull",
        "loss_reconstruction",
    ]
    .iter()
    .enumerate()
    {
        let mut g = Graph::new();
        let (real, synth) = (g.input("real"), g.input("synth"));
        let l = reconstruction_loss_graph(&mut g, real, synth, [N, C, T, V], &w);
        let e = [l.original, l.push, l.pull, l.reconstruction][which];
        out.extend(check_expr(name, &mut g, e, &b, 60, which as u64)?);
    }
    let mut g = Graph::new();
    let (mu, lv) = (g.input("mu"), g.input("lv"));
    let e = kl_graph(&mut g, mu, lv, N);
    out.extend(check_expr("kl", &mut g, e, &b, 64, 9)?);
    Ok(out)
}

/// Cross-entropy of both classifier heads, including the input gradient.
pub fn classifier_heads() -> Result<Vec<CaseResult>> {
    let mut r = rng(14);
    let x = randn(&[N, C, T, V], &mut r);
    let affect = randn(&[N, 29], &mut r);
    let mut out = Vec::new();
    for head in [Head::Baseline, Head::Hybrid] {
        let cfg = ClassifierConfig {
            head,
            ..ClassifierConfig::default()
        };
        let clf = Classifier::new(cfg, &default_topology(), 14)?;
        let mut bindings = clf.store().bindings();
        bindings.insert("x".into(), x.clone());
        let mut cg = clf.graph(
            &x,
            Some(&affect),
            Some(&[1, 2]),
            head,
            Mode::Train,
            Some("x"),
        )?;
        let loss = cg.loss.expect("labels were given");
        let name = format!("classifier_{:?}", head).to_lowercase();
        out.extend(check_expr(&name, &mut cg.graph, loss, &bindings, 5, 4)?);
    }
    Ok(out)
}

/// Every group above.
pub fn full_suite() -> Result<Vec<CaseResult>> {
    let groups: [fn() -> Result<Vec<CaseResult>>; 11] = [
        elementwise,
        matrix_products,
        temporal_convolutions,
        aggregation_and_shape_ops,
        batch_norm,
        reductions_and_softmax,
        blocks,
        encoder_and_decoder,
        generator_objective,
        losses,
        classifier_heads,
    ];
    let mut out = Vec::new();
    for g in groups {
        out.extend(g()?);
    }
    Ok(out)
}
