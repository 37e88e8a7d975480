use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use caal_core::acquisition::{self, kcenter_greedy, kmeans, select_lcmd};
use caal_core::ensemble::train_ensemble;
use caal_core::seed::splitmix64;
use caal_core::{
    mixing_state_index, Ensemble, EnsembleConfig, HeadParam, HeteroNet, NetConfig, ObjectiveKind,
    ParticlePopulation, PoolStats, Samples, StrategyKind, TrainSchedule,
};

/// Uniform draws in [0, 1) from a splitmix64 stream.
fn uniforms(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = splitmix64(s);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

fn points(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    uniforms(seed, n * d).chunks(d).map(|c| c.to_vec()).collect()
}

fn sine(seed: u64, n: usize) -> Samples {
    let mut out = Samples::default();
    for (u, e) in uniforms(seed, n).into_iter().zip(uniforms(seed ^ 1, n)) {
        let x = 6.0 * u - 3.0;
        out.push(vec![x], x.sin() + 0.3 * (e - 0.5));
    }
    out
}

fn small_ensemble() -> Ensemble {
    let config = EnsembleConfig {
        members: 5,
        net: NetConfig {
            hidden: 32,
            ..NetConfig::default()
        },
        schedule: TrainSchedule {
            max_epochs: 5,
            batch_size: 16,
            lr0: 3e-3,
            ..TrainSchedule::default()
        },
    };
    train_ensemble(&sine(1, 64), &sine(2, 32), &config, &ObjectiveKind::Nll, 7).unwrap()
}

fn net(c: &mut Criterion) {
    let config = NetConfig::default();
    let net = HeteroNet::new(&config, HeadParam::MeanVariance, 3).unwrap();
    let data = sine(4, 128);
    let batch: Vec<(&[f64], f64)> = data.x.iter().map(|x| x.as_slice()).zip(data.y.iter().copied()).collect();

    c.bench_function("net/forward", |b| b.iter(|| net.predict(black_box(&[0.5])).unwrap()));

    let mut group = c.benchmark_group("net/backward_128");
    for objective in [
        ObjectiveKind::Nll,
        ObjectiveKind::Decoupled { lambda: 0.1 },
        ObjectiveKind::BetaNll { beta_nll: 0.5 },
        ObjectiveKind::Faithful,
        ObjectiveKind::Natural,
    ] {
        let net = HeteroNet::new(&config, objective.head_param(), 3).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(objective.name()), &objective, |b, o| {
            b.iter(|| net.backward(black_box(&batch), o).unwrap())
        });
    }
    group.finish();
}

fn ensemble(c: &mut Criterion) {
    let ens = small_ensemble();
    let pool = points(5, 1000, 1).into_iter().map(|p| vec![6.0 * p[0] - 3.0]).collect::<Vec<_>>();
    c.bench_function("ensemble/predict_1000", |b| b.iter(|| ens.predict_many(black_box(&pool)).unwrap()));
    c.bench_function("ensemble/embed_1000", |b| {
        b.iter(|| pool.iter().map(|x| ens.embed(x).unwrap()).collect::<Vec<_>>())
    });
}

fn acquisition(c: &mut Criterion) {
    let ens = small_ensemble();
    let pool = points(6, 1000, 1).into_iter().map(|p| vec![6.0 * p[0] - 3.0]).collect::<Vec<_>>();
    let summaries = ens.predict_many(&pool).unwrap();
    let embeddings = pool.iter().map(|x| ens.embed(x).unwrap()).collect::<Vec<_>>();
    let stats = PoolStats::new(summaries, embeddings).unwrap();

    let mut group = c.benchmark_group("acquisition/score_1000");
    for strategy in [StrategyKind::Caal { beta: 1.0 }, StrategyKind::Qbc, StrategyKind::Bald] {
        group.bench_with_input(BenchmarkId::from_parameter(strategy.name()), &strategy, |b, s| {
            b.iter(|| acquisition::score(s, black_box(&stats), 0))
        });
    }
    group.finish();

    let cloud = points(8, 1000, 32);
    let labelled = points(9, 50, 32);
    c.bench_function("acquisition/kcenter_1000x32_b20", |b| {
        b.iter(|| kcenter_greedy(black_box(&cloud), &labelled, 20).unwrap())
    });
    c.bench_function("acquisition/kmeans_1000x32_k20", |b| b.iter(|| kmeans(black_box(&cloud), 20, 0).unwrap()));
    c.bench_function("acquisition/lcmd_1000x32_b20", |b| {
        b.iter(|| select_lcmd(black_box(&cloud), 20, 0).unwrap())
    });
}

fn aerosol(c: &mut Criterion) {
    let pop = ParticlePopulation::new(points(10, 10_000, 4)).unwrap();
    c.bench_function("aerosol/chi_10000x4", |b| b.iter(|| mixing_state_index(black_box(&pop))));
}

criterion_group!(benches, net, ensemble, acquisition, aerosol);
criterion_main!(benches);
