use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlsa2c_core::kfacnpg::default_alpha_schedule;
use rlsa2c_core::{KfacActorState, Mat, RlsLayerState, RmspropState};

const BATCH: usize = 160;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn fc_updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("fc_64x64");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(BATCH, 64, &mut rng);
    let g = random(64, 64, &mut rng);
    let mut w = random(64, 64, &mut rng);

    let mut rms = RmspropState::new(64 * 64, 1e-3, 0.99, 1e-5);
    group.bench_function("rmsprop", |b| {
        b.iter(|| rms.step(w.data_mut(), g.data()).unwrap())
    });

    let mut rls = RlsLayerState::new(64, 64, 64, 0.5, 1.0);
    group.bench_function("rls_fc", |b| {
        b.iter(|| rls.fc_hidden_step(&mut w, &g, &x, 0.01, 1.0).unwrap())
    });
    group.finish();
}

fn critic_output(c: &mut Criterion) {
    let mut group = c.benchmark_group("critic_output");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [32, 64, 128] {
        let x = random(BATCH, n, &mut rng);
        let g = random(n, 1, &mut rng);
        let mut w = random(n, 1, &mut rng);
        let mut rls = RlsLayerState::new(n, n, 1, 0.5, 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| rls.critic_output_step(&mut w, &g, &x, 0.01).unwrap())
        });
    }
    group.finish();
}

fn conv_update(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // 8 input channels, 3x3 kernel, 16 output channels, 5x5 output map.
    let cols = random(72, 25, &mut rng);
    let g = random(72, 16, &mut rng);
    let mut w = random(72, 16, &mut rng);
    let mut rls = RlsLayerState::new(72, 72, 16, 0.5, 1.0);
    c.bench_function("rls_conv_8x3x3_16", |b| {
        b.iter(|| rls.conv_step(&mut w, &g, &cols, 0.01, 1.0).unwrap())
    });
}

fn kfac_update(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(BATCH, 64, &mut rng);
    let gz = random(BATCH, 4, &mut rng);
    let adv: Vec<f64> = (0..BATCH).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut state = KfacActorState::new(64, 4, default_alpha_schedule(), 1.0);
    c.bench_function("kfac_w_update_64x4", |b| {
        b.iter(|| state.w_update(&x, &gz, &adv, 0.01).unwrap())
    });
}

criterion_group!(benches, fc_updates, critic_output, conv_update, kfac_update);
criterion_main!(benches);
