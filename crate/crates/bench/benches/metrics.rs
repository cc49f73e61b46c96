use criterion::{criterion_group, criterion_main, Criterion};
use promptmine_core::metrics::{adaptive_fmeasure, mae, mean_emeasure, smeasure, BETA2, S_ALPHA};
use promptmine_core::{BinaryMask, SoftMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(side: usize) -> (SoftMask, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pred = (0..side * side).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let gt = (0..side * side).map(|_| rng.gen_bool(0.3)).collect();
    (
        SoftMask::new(side, side, pred).unwrap(),
        BinaryMask::new(side, side, gt).unwrap(),
    )
}

fn metrics(c: &mut Criterion) {
    let (pred, gt) = inputs(256);
    let mut group = c.benchmark_group("metrics_256");
    group.bench_function("mae", |b| b.iter(|| mae(&pred, &gt).unwrap()));
    group.bench_function("f_beta", |b| b.iter(|| adaptive_fmeasure(&pred, &gt, BETA2).unwrap()));
    group.bench_function("e_phi", |b| b.iter(|| mean_emeasure(&pred, &gt).unwrap()));
    group.bench_function("s_alpha", |b| b.iter(|| smeasure(&pred, &gt, S_ALPHA).unwrap()));
    group.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
