use criterion::{criterion_group, criterion_main, Criterion};
use spikegrad::attacks::{run_attack, AttackConfig, AttackKind};
use spikegrad::backprop::{bptt_backward, cross_entropy};
use spikegrad::overlap::overlap;
use spikegrad::rng::Rng;
use spikegrad_bench::{batch, mlp};
use std::hint::black_box;

fn bench_forward(c: &mut Criterion) {
    let mut model = mlp(784, 256, 10, 4);
    let (x, _) = batch(&model, 32);
    c.bench_function("forward_784x256x10_t4_b32", |b| {
        b.iter(|| black_box(model.forward(&x, true, None).unwrap()))
    });
}

fn bench_bptt(c: &mut Criterion) {
    let mut model = mlp(784, 256, 10, 4);
    let (x, y) = batch(&model, 32);
    let trace = model.forward(&x, true, None).unwrap();
    let (_, dlogits) = cross_entropy(&trace.logits_mean, &y).unwrap();
    c.bench_function("bptt_784x256x10_t4_b32", |b| {
        b.iter(|| black_box(bptt_backward(&model, &trace, &dlogits, None).unwrap()))
    });
}

fn bench_overlap_grid(c: &mut Criterion) {
    c.bench_function("overlap_grid_255", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for mi in 0..17 {
                let mu = -2.0 + 0.25 * mi as f64;
                for &sigma in &[0.2, 0.5, 1.0, 2.0, 3.0] {
                    for &gamma in &[0.5, 1.0, 2.0] {
                        acc += overlap(mu, sigma, gamma).unwrap().omega;
                    }
                }
            }
            black_box(acc)
        })
    });
}

fn bench_fgsm(c: &mut Criterion) {
    let mut model = mlp(784, 256, 10, 4);
    let (x, y) = batch(&model, 32);
    model.forward(&x, true, None).unwrap();
    let cfg = AttackConfig::new(AttackKind::Fgsm);
    c.bench_function("fgsm_784x256x10_t4_b32", |b| {
        b.iter(|| black_box(run_attack(&mut model, &x, &y, &cfg, &mut Rng::new(3)).unwrap()))
    });
}

criterion_group!(benches, bench_forward, bench_bptt, bench_overlap_grid, bench_fgsm);
criterion_main!(benches);
