//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1, 2, 3 and 7 are checked live. Criteria 4 to 6 need the long
//! training runs of `scripts/acceptance_runs.sh` and are judged from the
//! artifacts it collects into `acceptance/`; without them they report NOT RUN.
//! The process fails when a live criterion fails, or when any criterion fails
//! and `GQNLOC_ACCEPTANCE_STRICT` is set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gqnloc_cli::cmd::eval::{mostly_non_increasing, parse_report, Row};
use gqnloc_cli::cmd::overfit::{OverfitReport, CELL_TOLERANCE};
use gqnloc_core::bins::{bin_center, bin_index, xy_flat, xy_unflat, Head, XY_AXIS, YAW_AXIS};
use gqnloc_core::data::ContextBatch;
use gqnloc_core::discriminative::{DiscriminativeContext, DiscriminativeModel, PoseProbMaps};
use gqnloc_core::generative::{layer_noise, GenerativeContext, GenerativeModel, RolloutOptions};
use gqnloc_core::gradcheck::{elbo_check, pose_nll_check, random_frames, random_task, LOSS_TOL};
use gqnloc_core::localizer::{metric_logprob_gt, SearchDim};
use gqnloc_core::nets::build_patch_dictionary;
use gqnloc_core::pose::{encode_pose, pose_tensor};
use gqnloc_core::trainer::LOG_HEADER;
use gqnloc_core::ModelConfig;
use gqnloc_nn::gradcheck::{primitive_suite, PRIMITIVE_TOL};
use gqnloc_nn::Graph;
use gqnloc_world::{CameraPose, Frame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

use Verdict::{Fail, NotRun, Pass};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn artifacts() -> PathBuf {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../acceptance");
    p.canonicalize().unwrap_or(p)
}

fn gradients() -> Verdict {
    let mut worst = (0.0, String::new());
    let mut failed = Vec::new();
    for (name, e) in primitive_suite() {
        if !(e < PRIMITIVE_TOL) {
            failed.push(format!("{name} {e:.1e}"));
        }
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let mut losses = Vec::new();
    for att in [false, true] {
        for (label, (e, at)) in [("elbo", elbo_check(att)), ("pose-nll", pose_nll_check(att))] {
            let label = format!("{label}{}", if att { "/att" } else { "/par" });
            if !(e < LOSS_TOL) {
                failed.push(format!("{label} {e:.1e} at {at}"));
            }
            losses.push(format!("{label} {e:.1e}"));
        }
    }
    verdict(
        failed.is_empty(),
        format!(
            "worst primitive {} {:.1e}; {}{}",
            worst.1,
            worst.0,
            losses.join(", "),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn structure() -> Verdict {
    let mut problems = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            problems.push(what);
        }
    };
    let cfg = ModelConfig::lite(true);
    check(cfg.patches_per_image() == 49, format!("{} patches per image", cfg.patches_per_image()));
    let task = random_task(20, 32, 1);
    let ctx = ContextBatch::<f64>::from_tasks(&[&task], &cfg);

    let gen = GenerativeModel::<f64>::new(&cfg, &mut rng(2)).expect("lite config");
    let GenerativeContext::Attention { keys, .. } = &gen.net.context else { unreachable!("attention variant") };
    {
        let mut g = Graph::new(&gen.store);
        let dict = build_patch_dictionary(&mut g, keys, &ctx, &cfg).expect("dictionary");
        check(dict.entries == 980, format!("{} dictionary entries for 20 images", dict.entries));
    }
    let mut g = Graph::new(&gen.store);
    let enc = gen.net.encode_context(&mut g, &ctx).expect("encode");
    let q = g.constant(pose_tensor([&task.target.pose]));
    let xt = g.constant(gqnloc_core::data::targets::<f64>(&[&task]).0);
    let tf = gen.net.target_features(&mut g, xt).expect("features");
    let noise = layer_noise(&cfg, 1, 4, false);
    let r = gen.net.rollout(&mut g, &enc, q, Some(tf), &noise, RolloutOptions::train()).expect("rollout");
    let mut worst_att: f64 = 0.0;
    for &w in &r.attention {
        worst_att = worst_att.max((g.value(w).data().iter().sum::<f64>() - 1.0).abs());
    }
    for att in [false, true] {
        let cfg = ModelConfig::lite(att);
        let disc = DiscriminativeModel::<f64>::new(&cfg, &mut rng(5)).expect("lite config");
        let (maps, weights) = disc.pose_maps(&task.target.image, &ctx).expect("maps");
        for h in Head::ALL {
            let s: f64 = maps.head(h).iter().map(|v| v.exp()).sum();
            check((s - 1.0).abs() < 1e-5, format!("{} head sums to {s}", h.name()));
        }
        for w in &weights {
            worst_att = worst_att.max((w.iter().sum::<f64>() - 1.0).abs());
        }
    }
    check(worst_att < 1e-6, format!("attention weights off by {worst_att:.1e}"));

    let mut r = rng(3);
    let mut worst_circle: f64 = 0.0;
    for _ in 0..1000 {
        let p = CameraPose::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1000.0..1000.0),
            r.random_range(-20.0..30.0),
        );
        let e = encode_pose(&p);
        worst_circle = worst_circle.max((e[3] * e[3] + e[4] * e[4] - 1.0).abs()).max((e[5] * e[5] + e[6] * e[6] - 1.0).abs());
    }
    check(worst_circle < 1e-6, format!("pose encoding off the unit circle by {worst_circle:.1e}"));

    let cfg = ModelConfig::lite(false);
    let frames = random_frames(20, 32, 8);
    let mut shuffled: Vec<Frame> = frames.clone();
    shuffled.reverse();
    shuffled.swap(3, 11);
    let gen = GenerativeModel::<f64>::new(&cfg, &mut rng(7)).expect("lite config");
    let GenerativeContext::Parametric { repr, .. } = &gen.net.context else { unreachable!("parametric variant") };
    let rep = |f: &[Frame]| {
        let mut g = Graph::new(&gen.store);
        let r = repr.represent(&mut g, &ContextBatch::<f64>::new(&[f], &cfg)).expect("represent");
        g.value(r).to_f64_vec()
    };
    let mut worst_perm = rep(&frames).iter().zip(&rep(&shuffled)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let disc = DiscriminativeModel::<f64>::new(&cfg, &mut rng(9)).expect("lite config");
    assert!(matches!(disc.net.context, DiscriminativeContext::Parametric { .. }));
    let target = &random_frames(1, 32, 10)[0].image;
    let maps = |f: &[Frame]| disc.pose_maps(target, &ContextBatch::new(&[f], &cfg)).expect("maps").0;
    let (m1, m2) = (maps(&frames), maps(&shuffled));
    worst_perm = m1.xy.iter().zip(&m2.xy).map(|(a, b)| (a - b).abs()).fold(worst_perm, f64::max);
    check(worst_perm < 1e-6, format!("context order moved outputs by {worst_perm:.1e}"));

    let ok = problems.is_empty();
    verdict(
        ok,
        if ok {
            format!("49/980 patches, attention {worst_att:.1e}, circle {worst_circle:.1e}, permutation {worst_perm:.1e}")
        } else {
            problems.join("; ")
        },
    )
}

fn run_cli(args: &[&str]) -> i32 {
    gqnloc_cli::run(std::iter::once("gqnloc").chain(args.iter().copied()))
}

fn determinism() -> Verdict {
    let tmp = tempfile::TempDir::new().expect("temp dir");
    let root = tmp.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    for run in ["a", "b"] {
        let data = p(&format!("{run}/data"));
        if run_cli(&["gen-data", "--out", &data, "--episodes", "36", "--resolution", "8", "--seed", "5"]) != 0 {
            return Fail(format!("gen-data failed in run {run}"));
        }
        for dir in ["gen", "disc"] {
            let out = p(&format!("{run}/{dir}"));
            let code = run_cli(&[
                "train", "--data", &data, "--direction", dir, "--attention", "--profile", "smoke", "--context", "5",
                "--seed", "2", "--out", &out,
            ]);
            if code != 0 {
                return Fail(format!("train {dir} failed in run {run} with exit {code}"));
            }
        }
        let code = run_cli(&[
            "eval",
            "--data",
            &data,
            "--gen-att",
            &p(&format!("{run}/gen/model.ckpt")),
            "--disc-att",
            &p(&format!("{run}/disc/model.ckpt")),
            "--contexts",
            "2,5",
            "--tasks",
            "2",
            "--maps",
            "1",
            "--chunk",
            "400",
            "--out",
            &p(&format!("{run}/eval")),
        ]);
        if code != 0 {
            return Fail(format!("eval failed in run {run} with exit {code}"));
        }
    }
    let files = [
        "data/train.gqnep",
        "data/test.gqnep",
        "data/split.txt",
        "gen/model.ckpt",
        "gen/log.csv",
        "disc/model.ckpt",
        "disc/log.csv",
        "eval/report.csv",
        "eval/tasks.csv",
        "eval/summary.txt",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(root.join("a").join(f)).ok() != std::fs::read(root.join("b").join(f)).ok())
        .collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs", files.len())
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn overfit() -> Verdict {
    let path = artifacts().join("overfit.json");
    let Ok(text) = std::fs::read_to_string(&path) else {
        return NotRun(format!("{} missing; run scripts/acceptance_runs.sh overfit", path.display()));
    };
    let r: OverfitReport = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => return Fail(format!("{}: {e}", path.display())),
    };
    let (g, d) = (&r.generative, &r.discriminative);
    let n = g.targets.len();
    let need = 6 * n.div_ceil(8).max(1);
    let mse = g.mean_pixel_mse();
    let ok = n == 8
        && d.targets.len() == 8
        && r.context == 20
        && g.iterations <= 20_000
        && mse < 0.02
        && g.xy_hits() >= need
        && g.yaw_hits() >= need
        && d.xy_hits() >= need
        && d.yaw_hits() >= need;
    verdict(
        ok,
        format!(
            "gen ({} steps): pixel mse {mse:.4} (< 0.02), xy {}/{n}, yaw {}/{n}; disc ({} steps): xy {}/{n}, yaw {}/{n} (need {need}, within {CELL_TOLERANCE} cells)",
            g.iterations,
            g.xy_hits(),
            g.yaw_hits(),
            d.iterations,
            d.xy_hits(),
            d.yaw_hits()
        ),
    )
}

/// Last (iteration, test loss) in a training log.
fn final_test_loss(path: &Path) -> Option<(u64, f64)> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    if lines.next()? != LOG_HEADER {
        return None;
    }
    let last = lines.rfind(|l| !l.is_empty())?;
    let f: Vec<&str> = last.split(',').collect();
    Some((f.first()?.parse().ok()?, f.get(2)?.parse().ok()?))
}

fn attention_lowers_loss() -> Verdict {
    let mut detail = Vec::new();
    let mut ok = true;
    for dir in ["gen", "disc"] {
        let get = |m: &str| final_test_loss(&artifacts().join(format!("train_{dir}-{m}.csv")));
        let (Some((ia, a)), Some((ip, p))) = (get("att"), get("par")) else {
            return NotRun(format!("train_{dir}-att.csv / train_{dir}-par.csv missing; run scripts/acceptance_runs.sh train"));
        };
        let matched = ia == ip && ia >= 30_000;
        ok &= matched && a < p;
        detail.push(format!("{dir}: att {a:.4} vs par {p:.4} at {ia}/{ip} steps"));
    }
    verdict(ok, detail.join("; "))
}

fn context_and_vicinity() -> Verdict {
    let path = artifacts().join("eval_report.csv");
    let Ok(text) = std::fs::read_to_string(&path) else {
        return NotRun(format!("{} missing; run scripts/acceptance_runs.sh eval", path.display()));
    };
    let Some(rows) = parse_report(&text) else {
        return Fail(format!("{} does not parse", path.display()));
    };
    let ok_rows: Vec<&Row> = rows.iter().filter(|r| r.status.starts_with("ok")).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for m in ["gen-att", "gen-par", "disc-att", "disc-par"] {
        for d in ["xy", "yaw"] {
            let seq: Vec<f64> = [5, 10, 20]
                .iter()
                .filter_map(|&c| {
                    ok_rows
                        .iter()
                        .find(|r| r.model == m && gqnloc_cli::cmd::eval::dim_name(r.dim) == d && r.context_size == c)
                })
                .map(|r| r.mse)
                .collect();
            let good = seq.len() == 3 && mostly_non_increasing(&seq);
            ok &= good;
            if !good {
                detail.push(format!("{m} {d} mse {seq:.4?}"));
            }
        }
    }
    let vic = |m: &str| {
        let v: Vec<f64> = ok_rows.iter().filter(|r| r.model == m && r.dim.search() == SearchDim::Xy).map(|r| r.vicinity).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (da, ga) = (vic("disc-att"), vic("gen-att"));
    ok &= da > ga;
    detail.push(format!("vicinity disc-att {da:.3} vs gen-att {ga:.3}"));
    if ok {
        detail.insert(0, "mse non-increasing 5->10->20 for every model and dim".into());
    }
    verdict(ok, detail.join("; "))
}

fn metric_oracles() -> Verdict {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-6;
    let mut bad = Vec::new();
    let u = PoseProbMaps::uniform();
    let xy = metric_logprob_gt(&u.xy, SearchDim::Xy, &CameraPose::new(0.3, -0.4, 0.0, 10.0, 0.0));
    if !close(xy, -(10_000f64).ln()) || !close(xy, -9.210340371976184) {
        bad.push(format!("uniform xy log-prob {xy}"));
    }
    let nll = u.nll(&CameraPose::new(0.3, -0.2, 0.1, 45.0, 10.0));
    if !close(nll, (100.0f64 * 100.0 * 100.0 * 360.0 * 50.0).ln()) || !close(nll, 23.6136375948) {
        bad.push(format!("uniform NLL {nll}"));
    }
    for i in 0..XY_AXIS.n {
        if XY_AXIS.index(XY_AXIS.center(i)) != i {
            bad.push(format!("xy cell {i} does not round trip"));
        }
        for j in [0, 37, 99] {
            if xy_unflat(xy_flat(i, j)) != (i, j) {
                bad.push(format!("xy flat index ({i},{j})"));
            }
        }
    }
    for i in 0..YAW_AXIS.n {
        if YAW_AXIS.index(YAW_AXIS.center(i)) != i {
            bad.push(format!("yaw cell {i} does not round trip"));
        }
    }
    let p = CameraPose::new(0.123, -0.456, 0.2, 33.3, 5.5);
    if bin_index(&bin_center(&bin_index(&p))) != bin_index(&p) {
        bad.push("pose bin round trip".into());
    }
    let yaw = |est: f64, gt: f64| {
        SearchDim::Yaw.squared_error(&CameraPose { yaw: est, ..CameraPose::default() }, &CameraPose { yaw: gt, ..CameraPose::default() })
    };
    for (est, gt, want) in [(179.0, -179.0, (2.0f64 / 180.0).powi(2)), (0.0, 180.0, 1.0), (370.0, 10.0, 0.0), (-90.0, 90.0, 1.0)] {
        let got = yaw(est, gt);
        if !close(got, want) {
            bad.push(format!("yaw error {est} vs {gt}: {got}, expected {want}"));
        }
    }
    verdict(bad.is_empty(), if bad.is_empty() { format!("xy {xy:.6}, NLL {nll:.6}, bins and yaw wrap exact") } else { bad.join("; ") })
}

fn main() {
    // libtest flags are accepted and ignored; a name filter that excludes
    // this target skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let strict = std::env::var_os("GQNLOC_ACCEPTANCE_STRICT").is_some();
    let criteria: [(&str, bool, fn() -> Verdict); 7] = [
        ("1 gradient integrity", true, gradients),
        ("2 structural invariants", true, structure),
        ("3 determinism", true, determinism),
        ("4 overfit oracle", false, overfit),
        ("5 attention lowers test loss", false, attention_lowers_loss),
        ("6 context and vicinity trends", false, context_and_vicinity),
        ("7 metric oracles", true, metric_oracles),
    ];
    let mut fatal = false;
    for (name, live, check) in criteria {
        let t = Instant::now();
        let v = check();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &v {
            Pass(d) => ("PASS", d),
            Fail(d) => ("FAIL", d),
            NotRun(d) => ("NOT RUN", d),
        };
        println!("criterion {name}: {tag} ({secs:.0}s) {detail}");
        if matches!(v, Fail(_)) && (live || strict) {
            fatal = true;
        }
    }
    if fatal {
        std::process::exit(1);
    }
}
