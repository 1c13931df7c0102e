use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fracwos_core::rng::Stream;
use fracwos_core::{OptimizerState, Surrogate};
use ndarray::{Array1, Array2};

fn batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let p = fracwos_core::problems::make_problem(&fracwos_core::BenchmarkId::ball_poly(d, 1.0)).unwrap();
    p.domain().sample_interior(n, &mut Stream::new(seed).rng()).unwrap()
}

fn forward(c: &mut Criterion) {
    let net = Surrogate::init(10, 128, 2, 1).unwrap();
    let x = batch(512, 10, 2);
    c.bench_function("forward_w128_d2_b512", |b| b.iter(|| net.forward(black_box(x.view())).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let mut net = Surrogate::init(10, 128, 2, 1).unwrap();
    let mut opt = OptimizerState::new(&net, 1e-3, 1_000_000).unwrap();
    let xi = batch(461, 10, 3);
    let yi = Array1::from_elem(461, 0.5);
    let xb = batch(51, 10, 4);
    let gb = Array1::zeros(51);
    c.bench_function("loss_grad_adam_w128_d2_b512", |b| {
        b.iter(|| {
            let (_, g) = net.loss_and_grad(xi.view(), yi.view(), xb.view(), gb.view(), 10.0).unwrap();
            net.adam_step(&mut opt, &g).unwrap();
        })
    });
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
