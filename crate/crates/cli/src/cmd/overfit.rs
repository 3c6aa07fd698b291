//! Fits both attention models to a fixed set of targets from one scene, then
//! checks that each can find those targets again.

use gqnloc_core::bins::{xy_unflat, YAW_AXIS};
use gqnloc_core::data::ContextBatch;
use gqnloc_core::localizer::{argmax_discriminative, grid_search_generative, SearchDim};
use gqnloc_core::trainer::{derive, LogRecord, TaskSource, TrainLog, Trainer};
use gqnloc_core::{ModelConfig, ModelKind, TrainConfig};
use gqnloc_nn::Parallelism;
use gqnloc_world::{sample_task, CameraPose, Task};
use serde::{Deserialize, Serialize};

use super::localize::settings;
use super::train::{CHECKPOINT_FILE, LOG_FILE};
use super::{create_out, load_dataset, pixel_mse, record_dataset, to_json, write_text};
use crate::args::OverfitArgs;
use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;
use crate::ppm::{Canvas, WHITE};

pub const REPORT_FILE: &str = "overfit.json";
/// Largest cell offset that still counts as recovered.
pub const CELL_TOLERANCE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub frame_index: usize,
    pub xy_cell_error: usize,
    pub yaw_cell_error: usize,
    /// Sample-mode pixel MSE; generative model only.
    pub pixel_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub iterations: u64,
    pub final_train_loss: f64,
    pub seconds: f64,
    pub targets: Vec<TargetResult>,
}

impl ModelResult {
    pub fn xy_hits(&self) -> usize {
        self.targets.iter().filter(|t| t.xy_cell_error <= CELL_TOLERANCE).count()
    }

    pub fn yaw_hits(&self) -> usize {
        self.targets.iter().filter(|t| t.yaw_cell_error <= CELL_TOLERANCE).count()
    }

    pub fn mean_pixel_mse(&self) -> f64 {
        let v: Vec<f64> = self.targets.iter().filter_map(|t| t.pixel_mse).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub model_profile: String,
    pub context: usize,
    pub generative: ModelResult,
    pub discriminative: ModelResult,
}

/// Chebyshev distance between xy cells.
pub fn xy_cell_error(a: &CameraPose, b: &CameraPose) -> usize {
    let (ia, ja) = xy_unflat(SearchDim::Xy.cell_of(a));
    let (ib, jb) = xy_unflat(SearchDim::Xy.cell_of(b));
    ia.abs_diff(ib).max(ja.abs_diff(jb))
}

/// Wrap-around distance between yaw cells.
pub fn yaw_cell_error(a: &CameraPose, b: &CameraPose) -> usize {
    let (i, j) = (YAW_AXIS.index(a.yaw), YAW_AXIS.index(b.yaw));
    let d = i.abs_diff(j);
    d.min(YAW_AXIS.n - d)
}

/// One shared context and `targets` distinct targets from the episode.
pub fn fixed_tasks(ep: &gqnloc_world::Episode, context: usize, targets: usize, seed: u64) -> Result<Vec<Task>> {
    if targets == 0 {
        return Err(CliError::Usage("--targets must be positive".into()));
    }
    let draw = sample_task(ep, context + targets - 1, seed)?;
    let mut frames: Vec<(usize, gqnloc_world::Frame)> =
        draw.context_indices.iter().copied().zip(draw.context.iter().cloned()).collect();
    frames.push((draw.target_index, draw.target.clone()));
    let (ctx, tgt) = frames.split_at(context);
    Ok(tgt
        .iter()
        .map(|(ti, t)| Task {
            context: ctx.iter().map(|(_, f)| f.clone()).collect(),
            target: t.clone(),
            context_indices: ctx.iter().map(|(i, _)| *i).collect(),
            target_index: *ti,
        })
        .collect())
}

fn fit(
    kind: ModelKind,
    model: &ModelConfig,
    tasks: &[Task],
    iterations: u64,
    a: &OverfitArgs,
    dir: &std::path::Path,
) -> Result<(Trainer, f64)> {
    let cfg = TrainConfig { seed: a.seed, ..TrainConfig::lite() }.scaled(
        "overfit",
        tasks.len(),
        iterations,
        a.eval_interval.clamp(1, iterations.max(1)),
        tasks.len(),
    );
    let mut t = Trainer::new(kind, model, cfg)?;
    let started = std::time::Instant::now();
    let mut log = TrainLog::default();
    let name = kind.name();
    t.run(&TaskSource::Fixed(tasks), tasks, iterations, Some(&dir.join(CHECKPOINT_FILE)), &mut |r: &LogRecord| {
        eprintln!("{name} iter {:>6}  train {:>12.4}  mse {:.5}  {:.0}s", r.iteration, r.train_loss, r.mse, r.wall_seconds);
        log.push(r.clone());
    })?;
    write_text(&dir.join(LOG_FILE), &log.without_wall_time().to_csv())?;
    Ok((t, started.elapsed().as_secs_f64()))
}

pub fn run(a: OverfitArgs, argv: &[String]) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let ep = ds.train.get(a.episode).ok_or_else(|| {
        CliError::Usage(format!("--episode {} but only {} training episodes", a.episode, ds.train.len()))
    })?;
    let tasks = fixed_tasks(ep, a.context, a.targets, derive(a.seed, 21, 0))?;
    let out = create_out(&crate::resolve_out(a.out.as_deref(), "overfit"))?;
    let (gdir, ddir) = (create_out(&out.join("gen"))?, create_out(&out.join("disc"))?);

    let (gen, gen_secs) =
        fit(ModelKind::Generative, &ModelConfig::by_profile(&a.model_profile, true)?, &tasks, a.gen_iterations, &a, &gdir)?;
    let gmodel = match &gen.learner {
        gqnloc_core::trainer::Learner::Generative(m) => m,
        _ => unreachable!("generative fit"),
    };
    let ctx = ContextBatch::<f32>::from_tasks(&[&tasks[0]], gmodel.config());
    let poses: Vec<CameraPose> = tasks.iter().map(|t| t.target.pose).collect();
    let samples = gmodel.sample(&ctx, &poses, derive(a.seed, 22, 0))?;
    let s = settings(&a.search, derive(a.seed, 23, 0), Parallelism::global());
    let mut gen_targets = Vec::new();
    let mut images = Vec::new();
    for (i, (t, img)) in tasks.iter().zip(&samples).enumerate() {
        let gt = t.target.pose;
        let (xy, _) = grid_search_generative(gmodel, &t.target.image, &ctx, SearchDim::Xy, &gt, &s)?;
        let (yaw, _) = grid_search_generative(gmodel, &t.target.image, &ctx, SearchDim::Yaw, &gt, &s)?;
        let r = TargetResult {
            frame_index: t.target_index,
            xy_cell_error: xy_cell_error(&xy.estimate, &gt),
            yaw_cell_error: yaw_cell_error(&yaw.estimate, &gt),
            pixel_mse: Some(pixel_mse(img, &t.target.image)),
        };
        eprintln!("generative target {i}: {r:?}");
        gen_targets.push(r);
        let sz = img.size * 4;
        let mut c = Canvas::new(2 * sz + 2, sz, WHITE);
        c.blit(&t.target.image, 0, 0, 4);
        c.blit(img, sz + 2, 0, 4);
        let name = format!("gen/sample_{i:02}.ppm");
        c.save(&out.join(&name))?;
        images.push(name);
    }
    let generative = ModelResult {
        iterations: gen.iteration,
        final_train_loss: gen.log.last().map_or(f64::NAN, |r| r.train_loss),
        seconds: gen_secs,
        targets: gen_targets,
    };

    let (disc, disc_secs) = fit(
        ModelKind::Discriminative,
        &ModelConfig::by_profile(&a.model_profile, true)?,
        &tasks,
        a.disc_iterations,
        &a,
        &ddir,
    )?;
    let dmodel = match &disc.learner {
        gqnloc_core::trainer::Learner::Discriminative(m) => m,
        _ => unreachable!("discriminative fit"),
    };
    let mut disc_targets = Vec::new();
    for t in &tasks {
        let (maps, _) = dmodel.pose_maps(&t.target.image, &ctx)?;
        let est = argmax_discriminative(&maps);
        disc_targets.push(TargetResult {
            frame_index: t.target_index,
            xy_cell_error: xy_cell_error(&est, &t.target.pose),
            yaw_cell_error: yaw_cell_error(&est, &t.target.pose),
            pixel_mse: None,
        });
    }
    let discriminative = ModelResult {
        iterations: disc.iteration,
        final_train_loss: disc.log.last().map_or(f64::NAN, |r| r.train_loss),
        seconds: disc_secs,
        targets: disc_targets,
    };

    let report = OverfitReport { model_profile: a.model_profile.clone(), context: a.context, generative, discriminative };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_text(&out.join(REPORT_FILE), &json)?;
    let (g, d) = (&report.generative, &report.discriminative);
    eprintln!(
        "generative: pixel mse {:.5}, xy {}/{}, yaw {}/{}; discriminative: xy {}/{}, yaw {}/{}",
        g.mean_pixel_mse(),
        g.xy_hits(),
        tasks.len(),
        g.yaw_hits(),
        tasks.len(),
        d.xy_hits(),
        tasks.len(),
        d.yaw_hits(),
        tasks.len()
    );
    let mut m = ManifestBuilder::new("overfit", argv, &out);
    m.config(serde_json::json!({ "args": to_json(&a) }));
    m.seed("overfit", a.seed);
    record_dataset(&mut m, &a.data)?;
    for f in ["gen/model.ckpt", "gen/log.csv", "disc/model.ckpt", "disc/log.csv"] {
        m.output(f)?;
    }
    for f in &images {
        m.output(f)?;
    }
    m.volatile(REPORT_FILE);
    m.finish()?;
    Ok(())
}
