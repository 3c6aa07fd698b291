//! Sequential versus rayon execution of the three data-parallel hot spots:
//! episode generation, candidate scoring and a training step.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gqnloc_core::data::ContextBatch;
use gqnloc_core::generative::GenerativeModel;
use gqnloc_core::trainer::{TaskSource, Trainer};
use gqnloc_core::{ModelConfig, ModelKind, TrainConfig};
use gqnloc_nn::Parallelism;
use gqnloc_world::{generate_episodes, sample_task, GenerationPlan};
use rand::SeedableRng;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn plan() -> GenerationPlan {
    let mut p = GenerationPlan::new(3, 2);
    p.render.resolution = 16;
    p
}

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_episodes");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_episodes(&plan(), mode.is_parallel()).unwrap())
        });
    }
    g.finish();

    let big = {
        let mut p = GenerationPlan::new(3, 1);
        p.render.resolution = 32;
        generate_episodes(&p, false).expect("episode").0
    };
    let cfg = ModelConfig::lite(false);
    let model = GenerativeModel::<f32>::new(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
    let task = sample_task(&big[0], 20, 1).unwrap();
    let ctx = ContextBatch::<f32>::from_tasks(&[&task], &cfg);
    let candidates: Vec<_> = (0..64).map(|i| gqnloc_world::CameraPose { yaw: i as f64 * 5.0, ..task.target.pose }).collect();
    let mut g = c.benchmark_group("score_poses_64");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| model.score_poses(&task.target.image, &ctx, &candidates, 0.3, 1, 0, 16, mode).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("train_step_lite");
    g.sample_size(10);
    let source = TaskSource::Episodes { episodes: &big, context_size: 20 };
    for (name, mode) in MODES {
        Parallelism::set_global(mode);
        let mut t = Trainer::new(ModelKind::Generative, &cfg, TrainConfig::lite()).unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| t.step(&source).unwrap()));
    }
    Parallelism::set_global(Parallelism::Rayon);
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
