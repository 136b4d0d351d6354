use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use padnet_core::image::StereoSample;
use padnet_core::io::procedural_reference;
use padnet_core::model::PadNet;
use padnet_core::pipeline::{patch_scores, PatchGrid};
use padnet_core::tensor::{exec, init};
use padnet_core::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn conv(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let x: Tensor<f32> = init::normal(&[8, 3, 64, 64], 1.0, &mut r);
    let w: Tensor<f32> = init::normal(&[128, 3, 5, 5], 0.1, &mut r);
    let mut group = c.benchmark_group("conv2d_5x5_s2");
    for (label, parallel) in MODES {
        exec::set_parallel(parallel);
        group.bench_function(BenchmarkId::new("forward", label), |b| {
            b.iter(|| {
                let tape = Tape::new();
                tape.constant(x.clone())
                    .conv2d(tape.constant(w.clone()), None, 2, 2)
                    .unwrap()
                    .value()
            })
        });
        group.bench_function(BenchmarkId::new("forward_backward", label), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let xv = tape.input(x.clone().with_requires_grad(true));
                let wv = tape.input(w.clone().with_requires_grad(true));
                let loss = xv.conv2d(wv, None, 2, 2).unwrap().square().unwrap().sum().unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
    exec::set_parallel(true);
}

fn patches(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let (l, rr) = procedural_reference(128, 160, 3, &mut r);
    let sample = StereoSample::new(l, rr, 0.0).unwrap();
    let grid = PatchGrid::new(128, 160, 64, 26, 48).unwrap();
    let net = PadNet::default();
    let store = net.init_store(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut group = c.benchmark_group("patch_prediction");
    group.sample_size(10);
    for (label, parallel) in MODES {
        exec::set_parallel(parallel);
        group.bench_function(label, |b| {
            b.iter(|| patch_scores(&net, &store, &sample, &grid).unwrap())
        });
    }
    group.finish();
    exec::set_parallel(true);
}

criterion_group!(benches, conv, patches);
criterion_main!(benches);
