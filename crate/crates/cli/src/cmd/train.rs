use std::path::Path;

use gqnloc_core::trainer::{LogRecord, TrainLog, Trainer};
use gqnloc_core::{ModelConfig, ModelKind, TrainConfig};
use gqnloc_nn::Checkpoint;

use super::{create_out, load_dataset, record_dataset, to_json, write_text};
use crate::args::{Direction, TrainArgs};
use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "log.csv";
pub const WALL_FILE: &str = "wall.csv";

pub fn kind(d: Direction) -> ModelKind {
    match d {
        Direction::Gen => ModelKind::Generative,
        Direction::Disc => ModelKind::Discriminative,
    }
}

/// Model and training configs after profile lookup and flag overrides.
pub fn resolve(a: &TrainArgs) -> Result<(ModelConfig, TrainConfig)> {
    let mut t = TrainConfig::by_profile(&a.profile)?;
    let model_profile = match (&a.model_profile, t.profile.as_str()) {
        (Some(p), _) => p.clone(),
        (None, "smoke") => "tiny".into(),
        (None, p) => p.into(),
    };
    let m = ModelConfig::by_profile(&model_profile, a.use_attention())?;
    if let Some(n) = a.iterations {
        t = t.clone().scaled(&t.profile, t.batch_size, n, t.eval_interval.min(n.max(1)), t.eval_tasks);
    }
    if let Some(b) = a.batch {
        t.batch_size = b;
    }
    if let Some(e) = a.eval_interval {
        t.eval_interval = e;
    }
    if let Some(e) = a.eval_tasks {
        t.eval_tasks = e;
    }
    if let Some(c) = a.context {
        t.context_size = c;
    }
    if let Some(lr) = a.learning_rate {
        t.learning_rate = lr;
    }
    t.seed = a.seed;
    t.validate()?;
    m.validate()?;
    Ok((m, t))
}

fn write_logs(dir: &Path, log: &TrainLog) -> Result<()> {
    write_text(&dir.join(LOG_FILE), &log.without_wall_time().to_csv())?;
    let mut wall = String::from("iteration,wall_seconds\n");
    for r in &log.records {
        wall.push_str(&format!("{},{:.3}\n", r.iteration, r.wall_seconds));
    }
    write_text(&dir.join(WALL_FILE), &wall)
}

pub fn run(a: TrainArgs, argv: &[String]) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let out = create_out(&crate::resolve_out(a.out.as_deref(), "train"))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut trainer = if a.resume {
        super::require_file(&ckpt_path, "checkpoint to resume")?;
        let mut t = Trainer::from_checkpoint(&Checkpoint::load(&ckpt_path).map_err(CliError::from)?)?;
        if t.learner.kind() != kind(a.direction) {
            return Err(CliError::Usage(format!(
                "{} holds a {} model, not {}",
                ckpt_path.display(),
                t.learner.kind().name(),
                kind(a.direction).name()
            )));
        }
        if let Some(n) = a.iterations {
            t.config.iterations = n.max(t.config.sigma_end_step);
        }
        if let Ok(text) = std::fs::read_to_string(out.join(LOG_FILE)) {
            let mut log = TrainLog::parse_csv(&text)?;
            log.records.retain(|r| r.iteration <= t.iteration);
            t.log = log;
        }
        t
    } else {
        let (m, c) = resolve(&a)?;
        Trainer::new(kind(a.direction), &m, c)?
    };
    let res = trainer.learner.model_config().image_size;
    if let Some(ep) = ds.train.first() {
        if ep.resolution() != res {
            return Err(CliError::Usage(format!(
                "dataset images are {}px but the {} model expects {res}px (choose a matching --model-profile or regenerate with --resolution {res})",
                ep.resolution(),
                trainer.learner.model_config().profile
            )));
        }
    }
    let cfg = trainer.config.clone();
    eprintln!(
        "training {} ({}, attention={}) from iteration {} to {}, batch {}",
        trainer.learner.kind().name(),
        trainer.learner.model_config().profile,
        trainer.learner.model_config().attention,
        trainer.iteration,
        cfg.iterations,
        cfg.batch_size
    );
    let mut log = trainer.log.clone();
    let result = trainer.run_on_dataset(&ds.train, &ds.test, Some(&ckpt_path), &mut |r: &LogRecord| {
        eprintln!(
            "iter {:>8}  train {:>12.4}  test {:>12.4}  mse {:.5}  sigma {:.3}  {:.0}s",
            r.iteration, r.train_loss, r.test_loss, r.mse, r.sigma, r.wall_seconds
        );
        log.push(r.clone());
        if let Err(e) = write_logs(&out, &log) {
            eprintln!("warning: {e}");
        }
    });
    result?;
    if !ckpt_path.exists() {
        trainer.checkpoint().save(&ckpt_path).map_err(CliError::from)?;
    }
    write_logs(&out, &log)?;
    let mut m = ManifestBuilder::new("train", argv, &out);
    m.config(serde_json::json!({
        "args": to_json(&a),
        "model": to_json(trainer.learner.model_config()),
        "train": to_json(&cfg),
        "parameters": trainer.learner.store().num_scalars(),
    }));
    m.seed("train", cfg.seed);
    record_dataset(&mut m, &a.data)?;
    m.output(CHECKPOINT_FILE)?;
    m.output(LOG_FILE)?;
    m.volatile(WALL_FILE);
    m.finish()?;
    Ok(())
}
