use std::hint::black_box;
use std::sync::Arc;

use cnl_core::ingest::{generate_synthetic, SyntheticSpec};
use cnl_core::model::{forward, ForwardOptions, GraphArrays, ModelParams};
use cnl_core::tensor::{Matrix, Tape};
use cnl_core::Rng;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn segment_ops(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let g = &data.train;
    let n = g.num_nodes();
    let dst: Arc<[usize]> = g.edges().iter().map(|e| e.1).collect();
    let logits: Vec<f64> = (0..g.num_edges()).map(|i| (i % 17) as f64 * 0.1).collect();
    let messages = Matrix::from_vec(g.num_edges(), 64, (0..g.num_edges() * 64).map(|i| (i % 13) as f64).collect());

    c.bench_function("segment_softmax", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let l = tape.constant(Matrix::column(&logits));
            black_box(tape.segment_softmax(l, dst.clone(), n).unwrap())
        })
    });
    c.bench_function("scatter_sum_h64", |b| {
        b.iter_batched(
            || messages.clone(),
            |m| {
                let mut tape = Tape::new();
                let v = tape.constant(m);
                black_box(tape.scatter_sum(v, dst.clone(), n).unwrap())
            },
            BatchSize::LargeInput,
        )
    });
}

fn forward_backward(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let g = &data.train;
    let arrays = GraphArrays::new(g);
    let params = ModelParams::init(g.feature_dim(), 64, g.class_count(), &mut Rng::new(0));
    let opts = ForwardOptions {
        train: true,
        ..ForwardOptions::default()
    };
    c.bench_function("forward_backward_1000_nodes", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let pv = params.register(&mut tape);
            let x = tape.constant(g.features().clone());
            let f = forward(&mut tape, &pv, &arrays, x, &opts, &mut Rng::new(1)).unwrap();
            let loss = tape.reduce_mean(f.logits);
            tape.backward(loss).unwrap();
            black_box(tape.grad(pv.enc1_w).is_some())
        })
    });
}

criterion_group!(benches, segment_ops, forward_backward);
criterion_main!(benches);
