use gqnloc_world::dataset::{decode_dataset, encode_dataset, generate_episodes, DatasetHeader, FORMAT_VERSION};
use gqnloc_world::*;
use proptest::prelude::*;
use std::path::Path;

fn toy_episode(seed: u64, res: usize) -> Episode {
    let frames = (0..FRAMES_PER_EPISODE)
        .map(|i| {
            let mut image = Image::new(res);
            for (k, v) in image.data.iter_mut().enumerate() {
                *v = ((seed as usize * 31 + i * 7 + k) % 256) as f32 / 255.0;
            }
            let t = i as f64 + seed as f64;
            Frame { image, pose: CameraPose::new(0.01 * t, -0.02 * t, 0.3, t * 3.7, (t % 50.0) - 20.0) }
        })
        .collect();
    Episode { frames, world_seed: seed, walk_seed: seed + 1000, valid: true, stats: WalkStats::default(), normalization: None }
}

#[test]
fn round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.bin");
    let eps: Vec<Episode> = (0..3).map(|s| toy_episode(s, 8)).collect();
    write_dataset(&eps, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in eps.iter().zip(&back) {
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.image.to_bytes(), fb.image.to_bytes());
            for (x, y) in fa.pose.to_array().iter().zip(fb.pose.to_array()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }
    let len = std::fs::metadata(&path).unwrap().len();
    assert_eq!(len, 28 + 3 * 100 * (5 * 4 + 8 * 8 * 3));
}

#[test]
fn header_layout_is_fixed() {
    let buf = encode_dataset(&[toy_episode(1, 8)]).unwrap();
    assert_eq!(&buf[..8], b"GQNLEPIS");
    let word = |i: usize| u32::from_le_bytes(buf[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    assert_eq!([word(0), word(1), word(2), word(3), word(4)], [FORMAT_VERSION, 8, 100, 1, 5]);
    let x = f32::from_le_bytes(buf[28..32].try_into().unwrap());
    assert_eq!(x, 0.01f32);
    assert_eq!(buf[48], toy_episode(1, 8).frames[0].image.to_bytes()[0]);
}

#[test]
fn truncated_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.bin");
    write_dataset(&[toy_episode(0, 8)], &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.pop();
    std::fs::write(&path, &bytes).unwrap();
    let err = read_dataset(&path).unwrap_err();
    assert!(matches!(err, WorldError::Truncated { .. }), "{err}");
    assert!(err.to_string().contains("truncated"));
}

#[test]
fn empty_dataset_reads_back_empty() {
    let buf = encode_dataset(&[]).unwrap();
    let h = DatasetHeader { version: FORMAT_VERSION, resolution: 0, frames_per_episode: 100, episode_count: 0, pose_dim: 5 };
    assert_eq!(buf.len() as u64, h.file_len());
    assert!(decode_dataset(&buf, Path::new("empty")).unwrap().is_empty());
}

#[test]
fn version_and_magic_are_checked() {
    let mut buf = encode_dataset(&[toy_episode(0, 8)]).unwrap();
    buf[8] = 9;
    assert!(matches!(decode_dataset(&buf, Path::new("v")), Err(WorldError::VersionMismatch { found: 9, .. })));
    buf[0] = b'X';
    assert!(matches!(decode_dataset(&buf, Path::new("m")), Err(WorldError::BadMagic { .. })));
}

#[test]
fn mixed_resolutions_are_rejected() {
    let err = encode_dataset(&[toy_episode(0, 8), toy_episode(1, 16)]).unwrap_err();
    assert!(matches!(err, WorldError::ResolutionMismatch { expected: 8, found: 16 }));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.bin");
    write_dataset(&[toy_episode(0, 8)], &path).unwrap();
    assert!(matches!(
        dataset::read_dataset_expecting(&path, 32),
        Err(WorldError::ResolutionMismatch { expected: 32, found: 8 })
    ));
}

#[test]
fn task_has_distinct_frames() {
    let ep = toy_episode(0, 8);
    let t = sample_task(&ep, 20, 42).unwrap();
    assert_eq!(t.context.len(), 20);
    let mut all = t.context_indices.clone();
    all.push(t.target_index);
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 21);
    assert!(!t.context_indices.contains(&t.target_index));
    assert_eq!(t.target, ep.frames[t.target_index]);
}

#[test]
fn task_boundaries() {
    let ep = toy_episode(0, 8);
    let t = sample_task(&ep, 99, 1).unwrap();
    assert_eq!(t.context.len(), 99);
    assert!(!t.context_indices.contains(&t.target_index));
    assert!(matches!(sample_task(&ep, 100, 1), Err(WorldError::InvalidTask(_))));
    assert_eq!(sample_task(&ep, 20, 5).unwrap(), sample_task(&ep, 20, 5).unwrap());
}

#[test]
fn targets_are_uniform_over_frames() {
    let ep = toy_episode(0, 8);
    let draws = 20_000;
    let mut counts = [0usize; FRAMES_PER_EPISODE];
    for s in 0..draws {
        counts[sample_task(&ep, 20, s).unwrap().target_index] += 1;
    }
    let p = 1.0 / FRAMES_PER_EPISODE as f64;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 4.0 * sd, "frame {i} drawn {c} times");
    }
}

#[test]
fn split_manifest_round_trip_and_disjointness() {
    let train = vec![toy_episode(1, 8), toy_episode(2, 8)];
    let test = vec![toy_episode(3, 8)];
    let m = SplitManifest::new(&train, &test).unwrap();
    assert_eq!(SplitManifest::parse(&m.to_text()).unwrap(), m);
    assert!(matches!(SplitManifest::new(&train, &[toy_episode(2, 8)]), Err(WorldError::SplitOverlap(2))));
    assert!(SplitManifest::parse("train 1 2\ntest 1 5\n").is_err());
    assert!(SplitManifest::parse("validate 1 2\n").is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::new(vec![toy_episode(1, 8), toy_episode(2, 8)], vec![toy_episode(3, 8)]).unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.train.len(), 2);
    assert_eq!(back.test[0].world_seed, 3);
    assert_eq!(back.test[0].walk_seed, 1003);
}

#[test]
fn generation_is_thread_independent_and_byte_stable() {
    let mut plan = GenerationPlan::new(21, 3);
    plan.render.resolution = 8;
    let (a, ra) = generate_episodes(&plan, true).unwrap();
    let (b, rb) = generate_episodes(&plan, false).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
    let seeds: std::collections::HashSet<u64> = a.iter().map(|e| e.world_seed).collect();
    assert_eq!(seeds.len(), 3);
}

#[test]
fn impossible_quota_fails() {
    let mut plan = GenerationPlan::new(1, 2);
    plan.render.resolution = 8;
    plan.thresholds.min_displacement = 1e9;
    plan.attempts_per_episode = 2;
    assert!(matches!(generate_episodes(&plan, false), Err(WorldError::QuotaUnreachable { wanted: 2, valid: 0, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_task_is_well_formed(k in 1usize..99, seed in any::<u64>()) {
        let ep = toy_episode(0, 8);
        let t = sample_task(&ep, k, seed).unwrap();
        let mut all = t.context_indices.clone();
        all.push(t.target_index);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), k + 1);
        prop_assert!(all.iter().all(|&i| i < FRAMES_PER_EPISODE));
    }

    #[test]
    fn quantization_is_idempotent(bytes in proptest::collection::vec(any::<u8>(), 8 * 8 * 3)) {
        let img = Image::from_bytes(8, &bytes);
        prop_assert_eq!(img.to_bytes(), bytes);
        prop_assert_eq!(img.quantized(), img);
    }
}
