//! Closed-form oracles for binning, localization and the evaluation metrics.

mod common;

use gqnloc_core::bins::{bin_center, bin_index, xy_flat, xy_unflat, Head, PITCH_AXIS, XY_AXIS, YAW_AXIS, Z_AXIS};
use gqnloc_core::data::ContextBatch;
use gqnloc_core::discriminative::PoseProbMaps;
use gqnloc_core::generative::GenerativeModel;
use gqnloc_core::localizer::{
    argmax_discriminative, context_vicinity_mass, grid_search_generative, localize_from_scores, metric_logprob_gt,
    metric_mse, vicinity_cells, ScoreMap, SearchDim, SearchSettings,
};
use gqnloc_core::ModelConfig;
use gqnloc_nn::Parallelism;
use gqnloc_world::CameraPose;
use proptest::prelude::*;
use rand::SeedableRng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-6
}

#[test]
fn uniform_values() {
    let u = PoseProbMaps::uniform();
    // ln(100 * 100), computed independently of the head sizes.
    let xy = -(10_000f64).ln();
    assert!(close(xy, -9.210340371976184));
    assert!(close(metric_logprob_gt(&u.xy, SearchDim::Xy, &CameraPose::default()), xy));
    let total = (100.0f64 * 100.0 * 100.0 * 360.0 * 50.0).ln();
    assert!(close(total, 23.6136375948));
    assert!(close(u.nll(&CameraPose::new(0.3, -0.2, 0.1, 45.0, 10.0)), total));
    let sizes: Vec<usize> = Head::ALL.iter().map(|h| h.size()).collect();
    assert_eq!(sizes, vec![10_000, 100, 360, 50]);
}

#[test]
fn bin_examples() {
    assert_eq!(XY_AXIS.index(-1.0), 0);
    assert_eq!(XY_AXIS.index(1.0), 99, "upper edge clamps into the last cell");
    assert_eq!(XY_AXIS.index(0.0), 50);
    assert!(close(XY_AXIS.center(0), -0.99));
    assert_eq!(YAW_AXIS.index(-180.0), 0);
    assert_eq!(YAW_AXIS.index(179.5), 359);
    assert!(close(YAW_AXIS.center(180), 0.5));
    assert_eq!(PITCH_AXIS.index(-20.0), 0);
    assert_eq!(PITCH_AXIS.index(29.9), 49);
    assert_eq!(Z_AXIS.index(5.0), 99);
    assert_eq!(xy_flat(3, 7), 307);
    assert_eq!(xy_unflat(307), (3, 7));
}

#[test]
fn wrapped_yaw_errors() {
    let gt = CameraPose { yaw: -179.0, ..CameraPose::default() };
    let est = CameraPose { yaw: 179.0, ..CameraPose::default() };
    assert!(close(SearchDim::Yaw.squared_error(&est, &gt), (2.0f64 / 180.0).powi(2)));
    let opposite = CameraPose { yaw: 0.0, ..CameraPose::default() };
    let gt = CameraPose { yaw: 180.0, ..CameraPose::default() };
    assert!(close(SearchDim::Yaw.squared_error(&opposite, &gt), 1.0));
    let gt = CameraPose { yaw: 10.0, ..CameraPose::default() };
    let est = CameraPose { yaw: 370.0, ..CameraPose::default() };
    assert!(close(SearchDim::Yaw.squared_error(&est, &gt), 0.0));
}

#[test]
fn xy_error_and_mse() {
    let gt = CameraPose { x: 0.1, y: -0.2, ..CameraPose::default() };
    let r = localize_from_scores(SearchDim::Xy, &{
        let mut s = vec![0.0; 10_000];
        s[xy_flat(60, 40)] = 1.0;
        s
    }, &gt);
    assert!(close(r.estimate.x, 0.21) && close(r.estimate.y, -0.19));
    assert!(close(r.squared_error, 0.11f64.powi(2) + 0.01f64.powi(2)));
    assert!(close(metric_mse(&[r.clone(), r.clone()]), r.squared_error));
    assert!(metric_mse(&[]).is_nan());
}

#[test]
fn ties_resolve_to_lowest_index() {
    let gt = CameraPose::default();
    let r = localize_from_scores(SearchDim::Yaw, &vec![-3.0; 360], &gt);
    assert_eq!(r.index, 0);
    assert!(close(r.estimate.yaw, -179.5));
}

#[test]
fn one_cell_grid() {
    let r = localize_from_scores(SearchDim::Xy, &[4.2], &CameraPose::default());
    assert_eq!(r.index, 0);
}

#[test]
fn vicinity_mass_oracles() {
    let interior = CameraPose { x: 0.005, y: 0.005, ..CameraPose::default() };
    let u = PoseProbMaps::uniform();
    assert!(close(context_vicinity_mass(&u.xy, &[interior]), (9.0f64 / 10_000.0).ln()));
    // Two overlapping neighbourhoods: cells (50,50) and (51,50) share six cells.
    let next = CameraPose { x: 0.025, ..interior };
    assert_eq!(vicinity_cells(&[interior, next]).len(), 12);
    assert!(close(context_vicinity_mass(&u.xy, &[interior, next]), (12.0f64 / 10_000.0).ln()));
    // All mass on one cell inside the neighbourhood.
    let mut delta = vec![f64::NEG_INFINITY; 10_000];
    delta[xy_flat(51, 51)] = 0.0;
    assert!(close(context_vicinity_mass(&delta, &[interior]), 0.0));
    assert_eq!(context_vicinity_mass(&delta, &[CameraPose { x: -0.9, ..interior }]), f64::NEG_INFINITY);
}

#[test]
fn score_map_normalization() {
    let map = ScoreMap { dim: SearchDim::Yaw, scores: (0..360).map(|i| -(i as f64)).collect(), fixed: CameraPose::default() };
    let lp = map.log_probs();
    let s: f64 = lp.iter().map(|v| v.exp()).sum();
    assert!(close(s, 1.0));
    // Geometric series: p0 = 1 - e^-1 up to a negligible tail.
    assert!(close(lp[0], (1.0 - (-1.0f64).exp()).ln()));
    let shifted = ScoreMap { scores: map.scores.iter().map(|v| v + 1e4).collect(), ..map.clone() };
    assert!(shifted.log_probs().iter().zip(&lp).all(|(a, b)| close(*a, *b)));
}

#[test]
fn argmax_readout_uses_cell_centers() {
    let mut maps = PoseProbMaps::uniform();
    maps.xy[xy_flat(10, 90)] = 0.0;
    maps.z[42] = 0.0;
    maps.yaw[300] = 0.0;
    maps.pitch[7] = 0.0;
    let p = argmax_discriminative(&maps);
    assert!(close(p.x, XY_AXIS.center(10)) && close(p.y, XY_AXIS.center(90)));
    assert!(close(p.z, Z_AXIS.center(42)) && close(p.yaw, 120.5) && close(p.pitch, -12.5));
}

#[test]
fn grid_search_covers_the_grid_and_flags_untrained_models() {
    let cfg = ModelConfig::tiny(false);
    let model = GenerativeModel::<f32>::new(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
    let task = common::task(3, 8, 4);
    let ctx = ContextBatch::<f32>::from_tasks(&[&task], &cfg);
    let s = SearchSettings { chunk: 90, parallelism: Parallelism::Sequential, ..SearchSettings::default() };
    let (res, map) = grid_search_generative(&model, &task.target.image, &ctx, SearchDim::Yaw, &task.target.pose, &s).unwrap();
    assert_eq!(map.scores.len(), 360);
    assert!(map.scores.iter().all(|v| v.is_finite()));
    assert_eq!(res.index, gqnloc_core::localizer::argmax_lowest(&map.scores));
    assert!(!res.warnings.is_empty());
    // Non-searched dimensions stay at the ground truth.
    assert!(close(res.estimate.x, task.target.pose.x) && close(res.estimate.pitch, task.target.pose.pitch));
    let par = SearchSettings { parallelism: Parallelism::Rayon, ..s };
    let (_, map2) = grid_search_generative(&model, &task.target.image, &ctx, SearchDim::Yaw, &task.target.pose, &par).unwrap();
    assert_eq!(map.scores, map2.scores, "score maps do not depend on the execution mode");
}

proptest! {
    #[test]
    fn binning_round_trip(ix in 0usize..100, iy in 0usize..100, z in 0usize..100, yaw in 0usize..360, pitch in 0usize..50) {
        let b = gqnloc_core::bins::BinIndex { ix, iy, z, yaw, pitch };
        prop_assert_eq!(bin_index(&bin_center(&b)), b);
        prop_assert_eq!(xy_unflat(xy_flat(ix, iy)), (ix, iy));
    }

    #[test]
    fn center_lies_in_its_cell(v in -1.0f64..1.0) {
        let i = XY_AXIS.index(v);
        prop_assert!((XY_AXIS.center(i) - v).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn yaw_error_is_bounded_and_symmetric(a in -720.0f64..720.0, b in -720.0f64..720.0) {
        let p = |yaw| CameraPose { yaw, ..CameraPose::default() };
        let e = SearchDim::Yaw.squared_error(&p(a), &p(b));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&e));
        prop_assert!((e - SearchDim::Yaw.squared_error(&p(b), &p(a))).abs() < 1e-12);
    }

    #[test]
    fn vicinity_mass_is_a_log_probability(xs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..20)) {
        let ctx: Vec<CameraPose> = xs.iter().map(|&(x, y)| CameraPose { x, y, ..CameraPose::default() }).collect();
        let m = context_vicinity_mass(&PoseProbMaps::uniform().xy, &ctx);
        prop_assert!(m <= 1e-12);
        let cells = vicinity_cells(&ctx).len() as f64;
        prop_assert!((m - (cells / 10_000.0).ln()).abs() < 1e-9);
    }
}
