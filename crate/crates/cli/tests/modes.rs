//! `--sequential` must reproduce the rayon outputs byte for byte. Kept in its
//! own binary because the execution mode is process-global.

use std::path::Path;

fn gqnloc(args: &[&str]) -> i32 {
    gqnloc_cli::run(std::iter::once("gqnloc").chain(args.iter().copied()))
}

fn pipeline(root: &Path, sequential: bool) {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let mut pre: Vec<&str> = Vec::new();
    if sequential {
        pre.push("--sequential");
    }
    let run = |rest: &[&str]| {
        let mut v = pre.clone();
        v.extend_from_slice(rest);
        assert_eq!(gqnloc(&v), 0, "{v:?}");
    };
    let data = p("data");
    run(&["gen-data", "--out", &data, "--episodes", "12", "--resolution", "8", "--seed", "4"]);
    let ckpt = p("gen/model.ckpt");
    run(&["train", "--data", &data, "--direction", "gen", "--attention", "--profile", "smoke", "--context", "4", "--out", &p("gen")]);
    run(&["eval", "--data", &data, "--gen-att", &ckpt, "--contexts", "2,4", "--tasks", "3", "--maps", "0", "--out", &p("eval")]);
}

#[test]
fn sequential_matches_rayon() {
    let t = tempfile::TempDir::new().unwrap();
    let (a, b) = (t.path().join("rayon"), t.path().join("seq"));
    pipeline(&a, false);
    pipeline(&b, true);
    assert_eq!(gqnloc_nn::Parallelism::global(), gqnloc_nn::Parallelism::Sequential);
    for f in ["data/train.gqnep", "data/test.gqnep", "gen/model.ckpt", "gen/log.csv", "eval/report.csv", "eval/tasks.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
