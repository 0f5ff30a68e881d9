use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ngc_bench::{batch, edge_model, path_outputs};
use ngc_core::graph::{consensus_median, unsupervised_loss};
use ngc_core::learner::LossKind;
use ngc_core::sim::{simulate_ensemble, EnsembleSimConfig};
use ngc_core::world::{generate_scene, WorldConfig};

fn learner(c: &mut Criterion) {
    let model = edge_model(27, 3);
    let x = batch(1024, 27);
    let t = batch(1024, 3);
    c.bench_function("forward 1024x27", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    c.bench_function("backward 1024x27", |b| {
        b.iter(|| model.backward(black_box(&x), black_box(&t), LossKind::L2).unwrap())
    });
}

fn consensus(c: &mut Criterion) {
    let outs = path_outputs(5);
    c.bench_function("median of 5 paths 32x32", |b| b.iter(|| consensus_median(black_box(&outs)).unwrap()));
    let label = consensus_median(&outs).unwrap().pseudo_label;
    c.bench_function("unsupervised loss 5 paths", |b| {
        b.iter(|| unsupervised_loss(black_box(&outs), black_box(&label)).unwrap())
    });
}

fn simulator(c: &mut Criterion) {
    let cfg = EnsembleSimConfig::new(0.6, 100, 15, 10_000, 0);
    c.bench_function("simulate 1e4 trials N=15 C=100", |b| b.iter(|| simulate_ensemble(black_box(&cfg)).unwrap()));
}

fn world(c: &mut Criterion) {
    let cfg = WorldConfig::default();
    c.bench_function("generate 32x32 scene", |b| b.iter(|| generate_scene(&cfg, black_box(17)).unwrap()));
}

criterion_group!(benches, learner, consensus, simulator, world);
criterion_main!(benches);
