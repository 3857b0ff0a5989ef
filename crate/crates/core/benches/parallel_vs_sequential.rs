use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mobunc::evalkit::{all_agents, build_index, fit_model, score_events, FittedModel, ScoreOptions};
use mobunc::scoring::TrainIndex;
use mobunc::seqmodel::{ModelConfig, TrainConfig};
use mobunc::synthgen::{generate_population, LabeledDataset};
use mobunc::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn setup() -> (LabeledDataset, ModelConfig, TrainConfig) {
    let ds = generate_population(24, 14, 3).unwrap();
    let model = ModelConfig {
        d_model: 16,
        n_head: 2,
        event_blocks: 2,
        knn_k: 20,
        n_poi: ds.n_poi as usize,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 1,
        batch_size: 32,
        ..TrainConfig::default()
    };
    (ds, model, train)
}

fn fitted(ds: &LabeledDataset, model: &ModelConfig, train: &TrainConfig) -> (FittedModel, TrainIndex) {
    let f = fit_model(ds, ds.split.train(), model, train, Exec::Parallel).unwrap();
    let index = build_index(&f, ds, ds.split.train(), Exec::Parallel).unwrap();
    (f, index)
}

fn training(c: &mut Criterion) {
    let (ds, model, train) = setup();
    let mut g = c.benchmark_group("train_one_epoch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_model(black_box(&ds), ds.split.train(), &model, &train, exec).unwrap())
        });
    }
    g.finish();
}

fn mc_scoring(c: &mut Criterion) {
    let (ds, model, train) = setup();
    let (f, index) = fitted(&ds, &model, &train);
    let agents = all_agents(&ds);
    let opts = ScoreOptions {
        passes: 10,
        seed: 1,
        knn: true,
    };
    let mut g = c.benchmark_group("mc_scoring");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| score_events(&f, black_box(&ds), &agents, ds.split.test(), Some(&index), opts, exec).unwrap())
        });
    }
    g.finish();
}

fn embedding_index(c: &mut Criterion) {
    let (ds, model, train) = setup();
    let (f, _) = fitted(&ds, &model, &train);
    let mut g = c.benchmark_group("build_index");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_index(&f, black_box(&ds), ds.split.train(), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, training, mc_scoring, embedding_index);
criterion_main!(benches);
