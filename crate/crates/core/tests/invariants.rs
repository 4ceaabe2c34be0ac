use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

use stepgait_core::affective::extract_affective;
use stepgait_core::autodiff::BatchNormMode;
use stepgait_core::classifier::predict;
use stepgait_core::eval::fid;
use stepgait_core::params::ParamStore;
use stepgait_core::rng::{normal_vec, stream, substream, Stream};
use stepgait_core::skeleton::{
    build_adjacency, default_topology, umeyama_align, view_normalize, AdjacencyMatrix,
    SkeletonTopology,
};
use stepgait_core::stepgen::{loss_pull, loss_push, loss_total, LatentCode, LossWeights};
use stepgait_core::stgcn::spatial_graph_conv;
use stepgait_core::synth::{default_styles, synth_walk};
use stepgait_core::training::{adam_step, lr_at_epoch, AdamParams, AdamState, TrainConfig};
use stepgait_core::{Bindings, Emotion, GaitSequence, Graph, Tensor};

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        normal_vec(&mut stream(seed, Stream::Noise), n),
    )
    .unwrap()
}

fn emotion() -> impl Strategy<Value = Emotion> {
    (0usize..4).prop_map(|i| Emotion::from_index(i).unwrap())
}

fn walk(label: Emotion, seed: u64) -> GaitSequence {
    synth_walk(&default_styles()[&label], Some(label), 20, seed).unwrap()
}

fn transform(g: &GaitSequence, s: f64, yaw: f64, t: [f64; 3]) -> GaitSequence {
    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    g.map_points(|p| {
        let q = r * Vector3::from(p) * s + Vector3::from(t);
        [q.x, q.y, q.z]
    })
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn umeyama_recovers_similarity(
        seed in any::<u64>(),
        s in 0.2f64..5.0,
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let ax = Vector3::from(axis);
        prop_assume!(ax.norm() > 0.1);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(ax), angle);
        let pts = randn(&[8, 3], seed);
        let src: Vec<[f64; 3]> = pts.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let dst: Vec<[f64; 3]> = src
            .iter()
            .map(|&p| {
                let q = r * Vector3::from(p) * s + Vector3::from(t);
                [q.x, q.y, q.z]
            })
            .collect();
        let sim = umeyama_align(&src, &dst).unwrap();
        prop_assert!((sim.scale - s).abs() < 1e-9 * s);
        prop_assert!((sim.rotation - r.matrix()).abs().max() < 1e-9);
        prop_assert!((sim.translation - Vector3::from(t)).abs().max() < 1e-8);
    }

    #[test]
    fn view_normalize_is_idempotent(
        label in emotion(),
        seed in any::<u64>(),
        s in 0.8f64..1.2,
        yaw in -3.1f64..3.1,
        t in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let topo = default_topology();
        let g = transform(&walk(label, seed), s, yaw, t);
        let once = view_normalize(&g, &topo).unwrap();
        let twice = view_normalize(&once, &topo).unwrap();
        prop_assert!(max_diff(once.positions(), twice.positions()) < 1e-9);
    }

    #[test]
    fn adjacency_ignores_edge_order(seed in any::<u64>()) {
        let topo = default_topology();
        let mut edges: Vec<(usize, usize)> = topo.edges().to_vec();
        let mut rng = stream(seed, Stream::Data);
        use rand::seq::SliceRandom;
        edges.shuffle(&mut rng);
        let flipped: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (b, a)).collect();
        let other = SkeletonTopology::new(topo.names().to_vec(), &flipped, topo.rest_pose().to_vec()).unwrap();
        prop_assert_eq!(build_adjacency(&topo).unwrap(), build_adjacency(&other).unwrap());
    }

    #[test]
    fn spatial_conv_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let adj = build_adjacency(&default_topology()).unwrap();
        let (x1, x2) = (randn(&[3, 5, 16], seed), randn(&[3, 5, 16], seed ^ 1));
        let (w1, w2) = (randn(&[4, 3], seed ^ 2), randn(&[4, 3], seed ^ 3));
        let combo = |p: &Tensor, q: &Tensor| {
            let d = p.data().iter().zip(q.data()).map(|(u, v)| a * u + b * v).collect();
            Tensor::new(p.shape().to_vec(), d).unwrap()
        };
        let lhs = spatial_graph_conv(&combo(&x1, &x2), &adj, &w1).unwrap();
        let rhs = combo(&spatial_graph_conv(&x1, &adj, &w1).unwrap(), &spatial_graph_conv(&x2, &adj, &w1).unwrap());
        prop_assert!(max_diff(&lhs, &rhs) < 1e-10);
        let lhs = spatial_graph_conv(&x1, &adj, &combo(&w1, &w2)).unwrap();
        let rhs = combo(&spatial_graph_conv(&x1, &adj, &w1).unwrap(), &spatial_graph_conv(&x1, &adj, &w2).unwrap());
        prop_assert!(max_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn spatial_conv_is_permutation_equivariant(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let adj = build_adjacency(&default_topology()).unwrap();
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut stream(seed, Stream::Data));
        let x = randn(&[3, 4, 16], seed);
        let w = randn(&[2, 3], seed ^ 9);
        let permute_last = |t: &Tensor| {
            let v = 16;
            let d: Vec<f64> = t
                .data()
                .chunks(v)
                .flat_map(|row| perm.iter().map(move |&p| row[p]))
                .collect();
            Tensor::new(t.shape().to_vec(), d).unwrap()
        };
        let a = adj.tensor();
        let pa: Vec<f64> = (0..16).flat_map(|i| (0..16).map(move |j| (i, j))).map(|(i, j)| a.get(&[perm[i], perm[j]])).collect();
        let padj = AdjacencyMatrix::from_tensor(Tensor::new(vec![16, 16], pa).unwrap()).unwrap();
        let lhs = spatial_graph_conv(&permute_last(&x), &padj, &w).unwrap();
        let rhs = permute_last(&spatial_graph_conv(&x, &adj, &w).unwrap());
        prop_assert!(max_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn push_and_pull_ignore_offsets(seed in any::<u64>(), off in prop::array::uniform3(-5.0f64..5.0)) {
        let real = randn(&[3, 9, 16], seed);
        let synth = randn(&[3, 9, 16], seed ^ 5);
        let mut shifted = synth.clone();
        for (i, v) in shifted.data_mut().iter_mut().enumerate() {
            *v += off[i / (9 * 16)];
        }
        let (p0, p1) = (loss_push(&real, &synth).unwrap(), loss_push(&real, &shifted).unwrap());
        let (q0, q1) = (loss_pull(&real, &synth).unwrap(), loss_pull(&real, &shifted).unwrap());
        prop_assert!((p0 - p1).abs() <= 1e-9 * p0.max(1.0));
        prop_assert!((q0 - q1).abs() <= 1e-9 * q0.max(1.0));
        prop_assert!(loss_push(&real, &real).unwrap() == 0.0 && loss_pull(&real, &real).unwrap() == 0.0);
    }

    #[test]
    fn total_loss_is_non_negative(seed in any::<u64>()) {
        let real = randn(&[3, 6, 16], seed);
        let synth = randn(&[3, 6, 16], seed ^ 7);
        let code = LatentCode::new(normal_vec(&mut stream(seed, Stream::Init), 32), normal_vec(&mut stream(seed, Stream::Data), 32)).unwrap();
        let w = LossWeights::default();
        prop_assert!(loss_total(&real, &synth, &code, &w).unwrap() >= 0.0);
        let prior = LatentCode::new(vec![0.0; 32], vec![0.0; 32]).unwrap();
        prop_assert_eq!(loss_total(&real, &real, &prior, &w).unwrap(), 0.0);
    }

    #[test]
    fn affective_features_ignore_translation(
        label in emotion(),
        seed in any::<u64>(),
        t in prop::array::uniform3(-20.0f64..20.0),
    ) {
        let topo = default_topology();
        let g = walk(label, seed);
        let a = extract_affective(&g, &topo).unwrap();
        let b = extract_affective(&transform(&g, 1.0, 0.0, t), &topo).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn predict_ignores_logit_shift(logits in prop::array::uniform4(-10.0f64..10.0), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        prop_assert_eq!(predict(&logits).unwrap(), predict(&shifted).unwrap());
    }

    #[test]
    fn lr_schedule_is_non_increasing(epochs in 2usize..300) {
        let mut cfg = TrainConfig::generator_default();
        cfg.epochs = epochs;
        cfg.decay_epochs = [epochs / 4, epochs / 2, 3 * epochs / 4].into_iter().filter(|&d| d > 0).collect();
        cfg.decay_epochs.dedup();
        let mut prev = f64::INFINITY;
        for e in 1..=epochs {
            let lr = lr_at_epoch(&cfg, e).unwrap();
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut store = ParamStore::new();
    store.insert_param("w", randn(&[3, 4], 1));
    let before = store.clone();
    let grads: Bindings = [("w".to_string(), Tensor::zeros(&[3, 4]))].into();
    let mut state = AdamState::new();
    let hp = AdamParams {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        weight_decay: 0.0,
    };
    for _ in 0..3 {
        adam_step(&mut store, &grads, &mut state, hp).unwrap();
    }
    assert_eq!(store, before);
}

#[test]
fn fan_out_doubles_gradient() {
    let b: Bindings = [("x".to_string(), randn(&[5], 2))].into();
    let mut g = Graph::new();
    let x = g.input("x");
    let sq = g.sum_squares(x);
    g.forward(sq, &b).unwrap();
    let single = g.backward(sq, &Tensor::full(&[], 1.0)).unwrap();
    let xx = g.add(x, x);
    let sq2 = g.sum_squares(xx);
    g.forward(sq2, &b).unwrap();
    let double = g.backward(sq2, &Tensor::full(&[], 1.0)).unwrap();
    for (s, d) in single["x"].data().iter().zip(double["x"].data()) {
        assert!((4.0 * s - d).abs() < 1e-12);
    }
}

#[test]
fn eval_batch_norm_is_affine() {
    let mode = BatchNormMode::Eval {
        running_mean: Tensor::new(vec![2], vec![0.3, -1.0]).unwrap(),
        running_var: Tensor::new(vec![2], vec![2.0, 0.5]).unwrap(),
    };
    let run = |x: Tensor| {
        let mut g = Graph::new();
        let xi = g.input("x");
        let ga = g.constant(Tensor::new(vec![2], vec![1.5, -0.7]).unwrap());
        let be = g.constant(Tensor::new(vec![2], vec![0.2, 0.1]).unwrap());
        let e = g.batch_norm(xi, ga, be, mode.clone());
        g.forward(e, &[("x".to_string(), x)].into()).unwrap()
    };
    let (x1, x2) = (randn(&[2, 2, 3, 4], 3), randn(&[2, 2, 3, 4], 4));
    let mid = Tensor::new(
        x1.shape().to_vec(),
        x1.data()
            .iter()
            .zip(x2.data())
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    )
    .unwrap();
    let (y1, y2, ym) = (run(x1), run(x2), run(mid));
    for ((a, b), m) in y1.data().iter().zip(y2.data()).zip(ym.data()) {
        assert!((0.5 * (a + b) - m).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic() {
    let b: Bindings = [
        ("x".to_string(), randn(&[2, 3, 6, 16], 5)),
        ("w".to_string(), randn(&[4, 3, 3], 6)),
    ]
    .into();
    let run = || {
        let mut g = Graph::new();
        let (x, w) = (g.input("x"), g.input("w"));
        let c = g.temporal_conv(x, w, None);
        let r = g.relu(c);
        g.forward(r, &b).unwrap()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn fid_grows_with_noise() {
    for seed in 0..3u64 {
        let real: Vec<Vec<f64>> = (0..200)
            .map(|i| normal_vec(&mut substream(seed, Stream::Data, i), 4))
            .collect();
        let mut prev = -1.0;
        for (k, sigma) in [0.01, 0.1, 1.0].into_iter().enumerate() {
            let mut rng = stream(seed * 10 + k as u64, Stream::Noise);
            let noisy: Vec<Vec<f64>> = real
                .iter()
                .map(|r| {
                    r.iter()
                        .zip(normal_vec(&mut rng, 4))
                        .map(|(x, n)| x + sigma * n)
                        .collect()
                })
                .collect();
            let d = fid(&real, &noisy).unwrap();
            assert!(d >= prev, "seed {} sigma {}: {} < {}", seed, sigma, d, prev);
            prev = d;
        }
    }
}
