//! Training loop behaviour: annealing, determinism, resumption and failure
//! handling.

mod common;

use gqnloc_core::trainer::{
    evaluation_tasks, load_discriminative, load_generative, sigma_schedule, train_on_dataset, Learner, TaskSource,
    Trainer,
};
use gqnloc_core::{CoreError, ModelConfig, ModelKind, TrainConfig};
use gqnloc_nn::Checkpoint;
use gqnloc_world::Episode;
use proptest::prelude::*;

fn small_config(iterations: u64, eval_interval: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        iterations,
        context_size: 3,
        sigma_end_step: iterations / 2,
        eval_interval,
        eval_tasks: 2,
        seed: 11,
        ..TrainConfig::smoke()
    }
}

fn split() -> (Vec<Episode>, Vec<Episode>) {
    ((0..3).map(|s| common::episode(8, s)).collect(), (10..12).map(|s| common::episode(8, s)).collect())
}

#[test]
fn schedule_examples() {
    let c = TrainConfig::paper();
    assert_eq!(sigma_schedule(0, &c), 1.5);
    assert!((sigma_schedule(150_000, &c) - 0.9).abs() < 1e-12);
    assert_eq!(sigma_schedule(300_001, &c), 0.3);
    assert_eq!(sigma_schedule(4_000_000, &c), 0.3);
}

proptest! {
    #[test]
    fn schedule_is_monotone_and_bounded(a in 0u64..400_000, b in 0u64..400_000) {
        let c = TrainConfig::paper();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(sigma_schedule(lo, &c) >= sigma_schedule(hi, &c));
        prop_assert!((0.3..=1.5).contains(&sigma_schedule(a, &c)));
    }
}

#[test]
fn initial_discriminative_loss_is_near_uniform_entropy() {
    let cfg = ModelConfig::lite(false);
    let learner = Learner::new(ModelKind::Discriminative, &cfg, 3).unwrap();
    let episodes: Vec<Episode> = (0..4).map(|s| common::episode(32, 100 + s)).collect();
    let tasks = evaluation_tasks(&episodes, 4, 20, 9).unwrap();
    let (loss, _) = learner.evaluate(&tasks, 1.0, 0, 4).unwrap();
    assert!((loss - 23.6136).abs() < 1.0, "initial NLL {loss}");
}

fn run(kind: ModelKind, attention: bool, dir: &std::path::Path) -> (Vec<u8>, String) {
    let (train, test) = split();
    let path = dir.join("model.ckpt");
    let t = train_on_dataset(kind, &ModelConfig::tiny(attention), &small_config(6, 3), &train, &test, Some(&path), &mut |_| {})
        .unwrap();
    (std::fs::read(&path).unwrap(), t.log.without_wall_time().to_csv())
}

#[test]
fn full_runs_are_reproducible() {
    for (kind, attention) in [(ModelKind::Generative, true), (ModelKind::Discriminative, false)] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (ca, la) = run(kind, attention, a.path());
        let (cb, lb) = run(kind, attention, b.path());
        assert_eq!(ca, cb, "{kind:?} checkpoint bytes differ");
        assert_eq!(la, lb);
        assert_eq!(la.lines().count(), 3, "header plus two evaluations");
    }
}

#[test]
fn resume_continues_the_same_trajectory() {
    let (train, test) = split();
    let cfg = small_config(6, 2);
    let source = TaskSource::Episodes { episodes: &train, context_size: 3 };
    let eval = evaluation_tasks(&test, 2, 3, 5).unwrap();
    let mut straight = Trainer::new(ModelKind::Generative, &ModelConfig::tiny(false), cfg.clone()).unwrap();
    straight.run(&source, &eval, 2, None, &mut |_| {}).unwrap();
    let bytes = straight.checkpoint().to_bytes().unwrap();
    let next = straight.step(&source).unwrap();

    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.iteration, 2);
    assert_eq!(resumed.step(&source).unwrap(), next, "identical next-step loss");
    straight.run(&source, &eval, 6, None, &mut |_| {}).unwrap();
    resumed.run(&source, &eval, 6, None, &mut |_| {}).unwrap();
    assert_eq!(straight.checkpoint().to_bytes().unwrap(), resumed.checkpoint().to_bytes().unwrap());
}

#[test]
fn non_finite_loss_keeps_the_last_good_checkpoint() {
    let (train, test) = split();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let source = TaskSource::Episodes { episodes: &train, context_size: 3 };
    let eval = evaluation_tasks(&test, 2, 3, 5).unwrap();
    let mut t = Trainer::new(ModelKind::Discriminative, &ModelConfig::tiny(true), small_config(10, 2)).unwrap();
    t.run(&source, &eval, 2, Some(&path), &mut |_| {}).unwrap();
    let good = std::fs::read(&path).unwrap();
    let store = t.learner.store_mut();
    let id = store.ids().last().unwrap();
    store.get_mut(id).data_mut()[0] = f32::NAN;
    let err = t.run(&source, &eval, 10, Some(&path), &mut |_| {}).unwrap_err();
    assert!(matches!(err, CoreError::NonFiniteLoss { iteration: 2 }), "{err}");
    assert_eq!(std::fs::read(&path).unwrap(), good);
    assert!(load_discriminative(&path).unwrap().trained);
}

#[test]
fn overlapping_split_is_rejected() {
    let (train, _) = split();
    let test = vec![train[1].clone()];
    let err = train_on_dataset(ModelKind::Generative, &ModelConfig::tiny(false), &small_config(2, 1), &train, &test, None, &mut |_| {});
    assert!(err.is_err());
}

#[test]
fn wrong_direction_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ckpt");
    let (train, test) = split();
    train_on_dataset(ModelKind::Discriminative, &ModelConfig::tiny(false), &small_config(1, 1), &train, &test, Some(&path), &mut |_| {})
        .unwrap();
    assert!(matches!(load_generative(&path), Err(CoreError::WrongModel { .. })));
    assert!(load_discriminative(&path).is_ok());
    assert!(load_generative(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn overfitting_a_fixed_pool_lowers_the_loss() {
    let tasks: Vec<_> = (0..2).map(|s| common::task(3, 8, s)).collect();
    let cfg = TrainConfig { learning_rate: 3e-3, ..small_config(60, 60) };
    let mut t = Trainer::new(ModelKind::Discriminative, &ModelConfig::tiny(false), cfg).unwrap();
    let (before, _) = t.evaluate(&tasks).unwrap();
    t.run(&TaskSource::Fixed(&tasks), &tasks, 60, None, &mut |_| {}).unwrap();
    let (after, _) = t.evaluate(&tasks).unwrap();
    assert!(after < before - 5.0, "{before} -> {after}");
}
