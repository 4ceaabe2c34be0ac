use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stepgait_bench::random_tensor;
use stepgait_core::skeleton::{build_adjacency, default_topology};
use stepgait_core::{Bindings, Graph, Tensor};

fn bind(pairs: &[(&str, &Tensor)]) -> Bindings {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), (*v).clone()))
        .collect()
}

fn temporal_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("temporal_conv");
    let x = random_tensor(&[8, 64, 75, 16], 1);
    for k in [1, 9] {
        let w = random_tensor(&[64, 64, k], 2);
        let b = bind(&[("x", &x), ("w", &w)]);
        let mut g = Graph::new();
        let (xi, wi) = (g.input("x"), g.input("w"));
        let y = g.temporal_conv(xi, wi, None);
        let root = g.sum_squares(y);
        group.bench_with_input(BenchmarkId::new("forward", k), &k, |bench, _| {
            bench.iter(|| black_box(g.forward(root, &b).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", k), &k, |bench, _| {
            bench.iter(|| {
                g.forward(root, &b).unwrap();
                black_box(g.backward(root, &Tensor::full(&[], 1.0)).unwrap())
            })
        });
    }
    group.finish();
}

fn graph_aggregate(c: &mut Criterion) {
    let x = random_tensor(&[8, 64, 75, 16], 3);
    let adj = build_adjacency(&default_topology())
        .unwrap()
        .tensor()
        .clone();
    let b = bind(&[("x", &x), ("adj", &adj)]);
    let mut g = Graph::new();
    let (xi, ai) = (g.input("x"), g.input("adj"));
    let y = g.graph_aggregate(xi, ai);
    let root = g.sum_squares(y);
    c.bench_function("graph_aggregate/forward_backward", |bench| {
        bench.iter(|| {
            g.forward(root, &b).unwrap();
            black_box(g.backward(root, &Tensor::full(&[], 1.0)).unwrap())
        })
    });
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let a = random_tensor(&[n, n], 4);
        let w = random_tensor(&[n, n], 5);
        let b = bind(&[("a", &a), ("b", &w)]);
        let mut g = Graph::new();
        let (ai, bi) = (g.input("a"), g.input("b"));
        let y = g.matmul(ai, bi);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(g.forward(y, &b).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, temporal_conv, graph_aggregate, matmul);
criterion_main!(benches);
