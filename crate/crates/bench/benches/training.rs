use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use rlsa2c_core::envsim::EnvId;
use rlsa2c_core::{Algorithm, TrainConfig, Trainer};

fn iterations(c: &mut Criterion) {
    for env in [EnvId::PixelGrid, EnvId::CartPoleLite] {
        let mut group = c.benchmark_group(format!("train_iteration_{env}"));
        for algorithm in Algorithm::ALL {
            let config = TrainConfig::new(algorithm, env);
            group.throughput(Throughput::Elements(config.batch_size()));
            let mut trainer = Trainer::new(config).unwrap();
            group.bench_function(algorithm.name(), |b| {
                b.iter(|| trainer.train_iteration().unwrap())
            });
        }
        group.finish();
    }
}

criterion_group!(benches, iterations);
criterion_main!(benches);
