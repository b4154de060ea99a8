use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rankr1::grpo::{grpo_objective, normalize_advantages, surrogate_objective_and_grad, GrpoConfig, RolloutGroup};
use rankr1::toy_env::{make_tasks, policy_group_rollout, train_toy};
use rankr1::{ObjectiveMode, ToyPolicy, ToyTrainConfig};

fn bench_math(c: &mut Criterion) {
    let rewards = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    c.bench_function("normalize_advantages_g8", |b| {
        b.iter(|| normalize_advantages(black_box(&rewards), 1e-8).unwrap())
    });

    let set = make_tasks(0, 64, 20, 8);
    let reference = ToyPolicy::uniform(8);
    let policy = ToyPolicy {
        weights: vec![0.2, -0.1, 0.4, 0.0, 0.3, -0.2, 0.1, 0.05],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let groups: Vec<_> = set
        .tasks
        .iter()
        .map(|task| {
            let mut group = RolloutGroup {
                task,
                rollouts: policy_group_rollout(&reference, &reference, task, 8, &mut rng),
            };
            group.normalize(1e-8).unwrap();
            group
        })
        .collect();
    for mode in [ObjectiveMode::Simplified, ObjectiveMode::Full] {
        let config = GrpoConfig {
            objective_mode: mode,
            ..GrpoConfig::default()
        };
        let samples: Vec<_> = groups[0].rollouts.iter().map(|r| r.sample.clone()).collect();
        c.bench_function(&format!("grpo_objective_{mode:?}_g8"), |b| {
            b.iter(|| grpo_objective(black_box(&samples), &config).unwrap())
        });
        c.bench_function(&format!("objective_and_grad_{mode:?}_64x8"), |b| {
            b.iter(|| surrogate_objective_and_grad(black_box(&policy), &groups, &config).unwrap())
        });
    }
}

fn bench_training(c: &mut Criterion) {
    let config = ToyTrainConfig {
        steps: 50,
        ..ToyTrainConfig::default()
    };
    let mut group = c.benchmark_group("toy_training");
    group.sample_size(10);
    group.bench_function("train_toy_50_steps", |b| {
        b.iter(|| train_toy(black_box(&config), |_| {}).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_math, bench_training);
criterion_main!(benches);
