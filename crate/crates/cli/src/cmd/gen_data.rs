use gqnloc_world::dataset::{SPLIT_FILE, TEST_FILE, TRAIN_FILE};
use gqnloc_world::{generate_episodes, Dataset, GenerationPlan};

use super::{create_out, to_json};
use crate::args::{GenDataArgs, Split};
use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;

pub fn default_split(episodes: usize) -> Split {
    let test = (episodes / 9).max(1).min(episodes.saturating_sub(1));
    Split { train: episodes - test, test }
}

pub fn plan(a: &GenDataArgs, total: usize) -> Result<GenerationPlan> {
    let mut plan = GenerationPlan::new(a.seed, total);
    plan.render.resolution = a.resolution;
    plan.attempts_per_episode = a.attempts;
    if let Some(l) = &a.light {
        let n = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(CliError::Usage("--light needs a nonzero finite direction".into()));
        }
        plan.render.light_dir = [l[0] / n, l[1] / n, l[2] / n];
    }
    if let Some(p) = a.terrain_period {
        plan.world.terrain_period = p;
    }
    if let Some(o) = a.octaves {
        plan.world.octaves = o;
    }
    plan.render.validate()?;
    Ok(plan)
}

pub fn run(a: GenDataArgs, argv: &[String]) -> Result<()> {
    let split = match (a.split, a.episodes) {
        (Some(s), Some(n)) if (s.train + s.test) as u64 != n => {
            return Err(CliError::Usage(format!("--split {}/{} does not add up to --episodes {n}", s.train, s.test)))
        }
        (Some(s), _) => s,
        (None, Some(n)) if n < 2 => return Err(CliError::Usage("need at least 2 episodes for a train/test split".into())),
        (None, n) => default_split(n.unwrap_or(288) as usize),
    };
    let total = split.train + split.test;
    let plan = plan(&a, total)?;
    let out = create_out(&crate::resolve_out(a.out.as_deref(), "gen-data"))?;
    let parallel = gqnloc_nn::Parallelism::global().is_parallel();
    let (mut episodes, report) = generate_episodes(&plan, parallel)?;
    let test = episodes.split_off(split.train);
    let ds = Dataset::new(episodes, test)?;
    ds.save(&out)?;
    eprintln!(
        "{} train + {} test episodes at {}px ({} candidates, {} pruned) -> {}",
        split.train,
        split.test,
        a.resolution,
        report.attempts,
        report.pruned,
        out.display()
    );
    let mut m = ManifestBuilder::new("gen-data", argv, &out);
    m.config(serde_json::json!({
        "args": to_json(&a),
        "train_episodes": split.train,
        "test_episodes": split.test,
        "candidates": report.attempts,
        "pruned": report.pruned,
    }));
    m.seed("generation", a.seed);
    for f in [TRAIN_FILE, TEST_FILE, SPLIT_FILE] {
        m.output(f)?;
    }
    m.finish()?;
    Ok(())
}
