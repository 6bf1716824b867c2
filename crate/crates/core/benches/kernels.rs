use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use wae_core::ops::{conv2d, conv2d_grad, ConvSpec};
use wae_core::training::seeded_rng;
use wae_core::{par, Pipeline, PipelineKind, Tensor};

fn filled(shape: [usize; 4]) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n).map(|i| ((i % 97) as f32) / 97.0 - 0.5).collect();
    Tensor::from_vec(shape, data).unwrap()
}

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn conv(c: &mut Criterion) {
    let spec = ConvSpec::conv(48, 48, 3, 1, 1);
    let x = filled([16, 48, 32, 32]);
    let w = filled(spec.weight_shape());
    let b = filled([48, 1, 1, 1]);
    let y = conv2d(&x, &w, Some(&b), &spec).unwrap();
    let mut g = c.benchmark_group("conv3x3_48x48_32px_batch16");
    g.sample_size(10);
    for (name, seq) in MODES {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::new("forward", name), |bench| {
            bench.iter(|| conv2d(black_box(&x), &w, Some(&b), &spec).unwrap())
        });
        g.bench_function(BenchmarkId::new("backward", name), |bench| {
            bench.iter(|| conv2d_grad(black_box(&y), &x, &w, &spec).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn pipelines(c: &mut Criterion) {
    let x = filled([16, 3, 32, 32]);
    let mut g = c.benchmark_group("pipeline_scores_32px_batch16");
    g.sample_size(10);
    for kind in [PipelineKind::Wae, PipelineKind::Fullres] {
        let p = Pipeline::<f32>::new(kind, 3, 10, &mut seeded_rng(0));
        for (name, seq) in MODES {
            par::set_sequential(seq);
            g.bench_function(BenchmarkId::new(kind.name(), name), |bench| {
                bench.iter(|| p.scores(black_box(&x)).unwrap())
            });
        }
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, conv, pipelines);
criterion_main!(benches);
