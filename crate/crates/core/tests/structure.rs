//! Structural invariants of the models and their inputs.

mod common;

use gqnloc_core::bins::Head;
use gqnloc_core::data::{targets, ContextBatch};
use gqnloc_core::discriminative::DiscriminativeModel;
use gqnloc_core::generative::{layer_noise, GenerativeModel, RolloutOptions};
use gqnloc_core::nets::build_patch_dictionary;
use gqnloc_core::pose::{encode_pose, pose_tensor};
use gqnloc_core::ModelConfig;
use gqnloc_core::generative::GenerativeContext;
use gqnloc_core::discriminative::DiscriminativeContext;
use gqnloc_nn::Graph;
use gqnloc_world::{CameraPose, Frame, Task};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn patch_counts() {
    let cfg = ModelConfig::lite(true);
    assert_eq!(cfg.patches_per_image(), 49);
    let task = common::task(20, 32, 1);
    let ctx = ContextBatch::<f64>::from_tasks(&[&task], &cfg);
    assert_eq!(ctx.patch_values.shape(), &[1, 980, 201]);

    let model = GenerativeModel::<f64>::new(&cfg, &mut rng(2)).unwrap();
    let GenerativeContext::Attention { keys, .. } = &model.net.context else { panic!("attention variant") };
    let mut g = Graph::new(&model.store);
    let dict = build_patch_dictionary(&mut g, keys, &ctx, &cfg).unwrap();
    assert_eq!(dict.entries, 980);
    assert_eq!(g.shape(dict.values), &[1, 980, 265]);
}

#[test]
fn generative_attention_weights_are_distributions() {
    let cfg = ModelConfig::lite(true);
    let model = GenerativeModel::<f64>::new(&cfg, &mut rng(3)).unwrap();
    let tasks: Vec<Task> = (0..2).map(|k| common::task(20, 32, 10 + k)).collect();
    let refs: Vec<&Task> = tasks.iter().collect();
    let ctx = ContextBatch::<f64>::from_tasks(&refs, &cfg);
    let (x, poses) = targets::<f64>(&refs);
    let mut g = Graph::new(&model.store);
    let enc = model.net.encode_context(&mut g, &ctx).unwrap();
    let q = g.constant(pose_tensor(poses.iter()));
    let xt = g.constant(x);
    let tf = model.net.target_features(&mut g, xt).unwrap();
    let noise = layer_noise(&cfg, 2, 4, false);
    let r = model.net.rollout(&mut g, &enc, q, Some(tf), &noise, RolloutOptions::train()).unwrap();
    assert_eq!(r.attention.len(), cfg.layers);
    for &w in &r.attention {
        assert_eq!(g.shape(w), &[2, 980]);
        for row in g.value(w).data().chunks(980) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row sums to {s}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn discriminative_maps_and_weights_are_distributions() {
    for attention in [false, true] {
        let cfg = ModelConfig::lite(attention);
        let model = DiscriminativeModel::<f64>::new(&cfg, &mut rng(5)).unwrap();
        let task = common::task(20, 32, 6);
        let ctx = ContextBatch::<f64>::from_tasks(&[&task], &cfg);
        let (maps, att) = model.pose_maps(&task.target.image, &ctx).unwrap();
        for h in Head::ALL {
            let p = maps.head(h);
            assert_eq!(p.len(), h.size());
            let s: f64 = p.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-5, "{} head sums to {s}", h.name());
        }
        if attention {
            assert_eq!(att.len(), cfg.disc_attention_layers);
            for w in &att {
                assert_eq!(w.len(), 980);
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        } else {
            assert!(att.is_empty());
        }
    }
}

#[test]
fn representation_is_permutation_invariant() {
    let cfg = ModelConfig::lite(false);
    let model = GenerativeModel::<f64>::new(&cfg, &mut rng(7)).unwrap();
    let GenerativeContext::Parametric { repr, .. } = &model.net.context else { panic!("parametric variant") };
    let frames = common::frames(20, 32, 8);
    let mut shuffled: Vec<Frame> = frames.clone();
    shuffled.reverse();
    shuffled.swap(3, 11);
    let rep = |f: &[Frame]| {
        let ctx = ContextBatch::<f64>::new(&[f], &cfg);
        let mut g = Graph::new(&model.store);
        let r = repr.represent(&mut g, &ctx).unwrap();
        g.value(r).to_f64_vec()
    };
    let (a, b) = (rep(&frames), rep(&shuffled));
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "representation moved by {worst:e}");

    // Same check for the discriminative parametric context path.
    let d = DiscriminativeModel::<f64>::new(&cfg, &mut rng(9)).unwrap();
    let DiscriminativeContext::Parametric { .. } = &d.net.context else { panic!("parametric variant") };
    let target = &common::frames(1, 32, 10)[0].image;
    let maps = |f: &[Frame]| d.pose_maps(target, &ContextBatch::new(&[f], &cfg)).unwrap().0;
    let (m1, m2) = (maps(&frames), maps(&shuffled));
    let worst = m1.xy.iter().zip(&m2.xy).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6);
}

#[test]
fn attention_flag_changes_parameter_count() {
    for profile in ["lite", "desk"] {
        let count = |att: bool, gen: bool| {
            let cfg = ModelConfig::by_profile(profile, att).unwrap();
            if gen {
                GenerativeModel::<f32>::new(&cfg, &mut rng(0)).unwrap().store.num_scalars()
            } else {
                DiscriminativeModel::<f32>::new(&cfg, &mut rng(0)).unwrap().store.num_scalars()
            }
        };
        assert_ne!(count(true, true), count(false, true));
        assert_ne!(count(true, false), count(false, false));
    }
}

#[test]
fn empty_context_is_rejected() {
    for attention in [false, true] {
        let cfg = ModelConfig::tiny(attention);
        let model = GenerativeModel::<f64>::new(&cfg, &mut rng(1)).unwrap();
        let ctx = ContextBatch::<f64>::new(&[&[]], &cfg);
        assert!(model.sample(&ctx, &[CameraPose::default()], 0).is_err());
    }
}

#[test]
fn sample_shapes_and_range() {
    let cfg = ModelConfig::tiny(true);
    let model = GenerativeModel::<f32>::new(&cfg, &mut rng(1)).unwrap();
    let frames = common::frames(3, 8, 2);
    let ctx = ContextBatch::<f32>::new(&[&frames], &cfg);
    let poses: Vec<CameraPose> = frames.iter().map(|f| f.pose).collect();
    let imgs = model.sample(&ctx, &poses, 5).unwrap();
    assert_eq!(imgs.len(), 3);
    assert!(imgs.iter().all(|i| i.size == 8 && i.data.iter().all(|v| (0.0..=1.0).contains(v))));
    assert_eq!(imgs, model.sample(&ctx, &poses, 5).unwrap(), "fixed seed gives identical samples");
}

proptest! {
    #[test]
    fn pose_encoding_is_on_the_unit_circles(x in -1.0f64..1.0, yaw in -1000.0f64..1000.0, pitch in -20.0f64..30.0) {
        let e = encode_pose(&CameraPose { x, y: -x, z: 0.1, yaw, pitch });
        prop_assert!((e[3] * e[3] + e[4] * e[4] - 1.0).abs() < 1e-6);
        prop_assert!((e[5] * e[5] + e[6] * e[6] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn yaw_encoding_is_periodic(yaw in -180.0f64..180.0, turns in -3i32..3) {
        let a = encode_pose(&CameraPose { yaw, ..CameraPose::default() });
        let b = encode_pose(&CameraPose { yaw: yaw + 360.0 * turns as f64, ..CameraPose::default() });
        prop_assert!((a[3] - b[3]).abs() < 1e-9 && (a[4] - b[4]).abs() < 1e-9);
    }
}
