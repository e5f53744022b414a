use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dexgraph_bench::{blobs, rss, softmax};
use dexgraph_core::data::{CountVector, ThresholdVector, TrustMatrix};
use dexgraph_core::diversity::{score_g, DistanceMetric};
use dexgraph_core::exchange::{sup_round, DeliveryMode};
use dexgraph_core::fl::{local_step, run_training, Loss, Targets, TrainConfig};
use dexgraph_core::harness::{run_pipeline, scenario};
use dexgraph_core::net::{compute_drop_matrix, RadioModel};
use dexgraph_core::partition::kmeans;
use dexgraph_core::rl::toy::{random_sup_env, ToySpec};
use dexgraph_core::rl::{train_graph, CommitCost, PolicyHyper};
use dexgraph_core::rng::stream;

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("drop_matrix");
    for n in [10, 40, 160] {
        let w = rss(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| {
            b.iter(|| compute_drop_matrix(black_box(w), 0.8, 0.02).unwrap())
        });
    }
    g.finish();
}

fn exchange(c: &mut Criterion) {
    let n = 25;
    let l = 10;
    let counts: Vec<CountVector> = (0..n)
        .map(|i| CountVector::new((0..l).map(|k| ((i * 7 + k * 13) % 40) as u64).collect()))
        .collect();
    let b = vec![ThresholdVector::uniform(l, 15); n];
    let trust = vec![TrustMatrix::full(n, l); n];
    let sel: Vec<Option<usize>> = (0..n).map(|i| Some((i + 1) % n)).collect();
    let drop = compute_drop_matrix(&rss(n, 2), 0.8, 0.02).unwrap();
    c.bench_function("sup_round_25x10", |bch| {
        bch.iter(|| {
            sup_round(
                &counts,
                &b,
                &trust,
                &sel,
                &drop,
                DeliveryMode::Sampled,
                &mut stream(0, &[]),
            )
            .unwrap()
        })
    });
    let pre = CountVector::new(vec![20, 0, 0, 0, 20]);
    let post = CountVector::new(vec![20, 0, 5, 10, 20]);
    let t = ThresholdVector::uniform(5, 10);
    c.bench_function("score_g", |bch| {
        bch.iter(|| {
            score_g(
                black_box(&pre),
                black_box(&post),
                &t,
                2,
                DistanceMetric::Wasserstein,
            )
            .unwrap()
        })
    });
}

fn learning(c: &mut Criterion) {
    let radio = RadioModel::default();
    let cost = CommitCost {
        radio: &radio,
        point_bits: 256,
    };
    let hyper = PolicyHyper {
        t_rl: 200,
        ..PolicyHyper::default()
    };
    c.bench_function("train_graph_toy_200_steps", |b| {
        b.iter(|| {
            let mut env = random_sup_env(&ToySpec::default(), 3).unwrap();
            train_graph(&mut env, &hyper, 1, DeliveryMode::Sampled, &cost, 0).unwrap()
        })
    });

    let data = blobs(10, 8, 30, 1);
    let model = softmax(8, 10, 1);
    let labels = match &data.targets {
        Targets::Classes(l) => l[..32].to_vec(),
        _ => unreachable!(),
    };
    let x = data.features[..32].to_vec();
    c.bench_function("softmax_sgd_step_b32", |b| {
        b.iter(|| local_step(&model, &x, &Loss::CrossEntropy { labels: &labels }, 0.05).unwrap())
    });

    let devices: Vec<_> = (0..10).map(|s| blobs(10, 8, 10, s)).collect();
    let test = blobs(10, 8, 20, 99);
    let cfg = TrainConfig {
        rounds: 10,
        ..TrainConfig::default()
    };
    c.bench_function("fedavg_10dev_10rounds", |b| {
        b.iter(|| run_training(&devices, &test, &model, &cfg).unwrap())
    });

    let pts = blobs(4, 3, 250, 5).features;
    c.bench_function("kmeans_1000x3_k4", |b| {
        b.iter(|| kmeans(black_box(&pts), 4, 0).unwrap())
    });
}

fn end_to_end(c: &mut Criterion) {
    let mut cfg = scenario("smoke").unwrap();
    cfg.fl.rounds = 5;
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("smoke_all_methods", |b| {
        b.iter(|| run_pipeline(&cfg, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, network, exchange, learning, end_to_end);
criterion_main!(benches);
