use std::path::Path;

use gqnloc_core::bins::{xy_unflat, XY_AXIS};
use gqnloc_core::data::ContextBatch;
use gqnloc_core::discriminative::DiscriminativeModel;
use gqnloc_core::generative::GenerativeModel;
use gqnloc_core::localizer::{
    context_vicinity_mass, discriminative_result, grid_search_generative, metric_logprob_gt, LocalizationResult,
    SearchDim, SearchSettings,
};
use gqnloc_core::trainer::{load_learner, Learner};
use gqnloc_core::ModelConfig;
use gqnloc_nn::Parallelism;
use gqnloc_world::{CameraPose, Task};

use super::{create_out, fmt, load_dataset, record_dataset, require_file, to_json, write_text};
use crate::args::{Dim, LocalizeArgs, SearchArgs};
use crate::error::Result;
use crate::manifest::ManifestBuilder;
use crate::ppm::{heat, Canvas, CYAN, GREEN, MAGENTA};

pub enum Model {
    Gen(GenerativeModel<f32>),
    Disc(DiscriminativeModel<f32>),
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        require_file(path, "checkpoint")?;
        Ok(match load_learner(path)?.0 {
            Learner::Generative(m) => Model::Gen(m),
            Learner::Discriminative(m) => Model::Disc(m),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Gen(m) => m.config(),
            Model::Disc(m) => m.config(),
        }
    }

    pub fn trained(&self) -> bool {
        match self {
            Model::Gen(m) => m.trained,
            Model::Disc(m) => m.trained,
        }
    }
}

/// Localization of one task along one dimension.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub result: LocalizationResult,
    /// Normalized log-probabilities over the dimension's cells.
    pub log_probs: Vec<f64>,
    pub logprob_gt: f64,
    /// Context-vicinity log-mass, for the xy dimension only.
    pub vicinity: Option<f64>,
}

pub fn settings(s: &SearchArgs, seed: u64, parallelism: Parallelism) -> SearchSettings {
    SearchSettings { sigma: s.sigma, k: s.samples.max(1), seed, chunk: s.chunk.max(1), parallelism }
}

/// Runs the model on `task` for each of `dims`. The discriminative model
/// answers every dimension from one forward pass; the generative one runs a
/// grid search per dimension.
pub fn localize_task(model: &Model, task: &Task, dims: &[Dim], s: &SearchSettings) -> Result<Vec<Outcome>> {
    let ctx = ContextBatch::<f32>::from_tasks(&[task], model.config());
    let context_poses: Vec<CameraPose> = task.context.iter().map(|f| f.pose).collect();
    let gt = task.target.pose;
    let mut out = Vec::with_capacity(dims.len());
    match model {
        Model::Gen(m) => {
            for &d in dims {
                let (result, map) = grid_search_generative(m, &task.target.image, &ctx, d.search(), &gt, s)?;
                out.push(outcome(result, map.log_probs(), &context_poses));
            }
        }
        Model::Disc(m) => {
            let (maps, _) = m.pose_maps(&task.target.image, &ctx)?;
            for &d in dims {
                let dim = d.search();
                let mut result = discriminative_result(&maps, dim, &gt);
                if !m.trained {
                    result.warnings.push("maps come from an untrained model".into());
                }
                let lp = maps.head(dim.head()).to_vec();
                out.push(outcome(result, lp, &context_poses));
            }
        }
    }
    Ok(out)
}

fn outcome(result: LocalizationResult, log_probs: Vec<f64>, context: &[CameraPose]) -> Outcome {
    let logprob_gt = metric_logprob_gt(&log_probs, result.dim, &result.gt);
    let vicinity = (result.dim == SearchDim::Xy).then(|| context_vicinity_mass(&log_probs, context));
    Outcome { result, log_probs, logprob_gt, vicinity }
}

/// Shade for a log-probability: linear over the 20 nats below the peak.
fn shade(lp: f64, max: f64) -> [u8; 3] {
    heat(1.0 + (lp - max) / 20.0)
}

/// Heat map of the outcome with context cells cyan, the ground truth green
/// and the estimate magenta. xy maps put +y up; yaw maps are a strip.
pub fn render_map(o: &Outcome, context: &[CameraPose], scale: usize) -> Canvas {
    let scale = scale.max(1);
    let max = o.log_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dim = o.result.dim;
    match dim {
        SearchDim::Xy => {
            let n = XY_AXIS.n;
            let mut c = Canvas::new(n * scale, n * scale, [0, 0, 0]);
            for (i, &lp) in o.log_probs.iter().enumerate() {
                let (ix, iy) = xy_unflat(i);
                c.fill_rect((ix * scale) as i64, ((n - 1 - iy) * scale) as i64, scale, scale, shade(lp, max));
            }
            let mut mark = |p: &CameraPose, col: [u8; 3]| {
                let (ix, iy) = xy_unflat(dim.cell_of(p));
                let (x, y) = ((ix * scale) as i64, ((n - 1 - iy) * scale) as i64);
                let pad = scale as i64;
                c.outline_rect(x - pad, y - pad, 3 * scale, 3 * scale, col);
            };
            for p in context {
                mark(p, CYAN);
            }
            mark(&o.result.gt, GREEN);
            mark(&o.result.estimate, MAGENTA);
            c
        }
        SearchDim::Yaw => {
            let n = dim.cells();
            let h = 12 * scale;
            let mut c = Canvas::new(n * scale.div_ceil(2), h, [0, 0, 0]);
            let w = scale.div_ceil(2);
            for (i, &lp) in o.log_probs.iter().enumerate() {
                c.fill_rect((i * w) as i64, 0, w, h, shade(lp, max));
            }
            let mut tick = |p: &CameraPose, col: [u8; 3], top: bool| {
                let x = (dim.cell_of(p) * w) as i64;
                let y0 = if top { 0 } else { (h / 2) as i64 };
                c.fill_rect(x, y0, w.max(2), h / 2, col);
            };
            for p in context {
                tick(p, CYAN, false);
            }
            tick(&o.result.gt, GREEN, true);
            tick(&o.result.estimate, MAGENTA, false);
            c
        }
    }
}

pub fn run(a: LocalizeArgs, argv: &[String]) -> Result<()> {
    let model = Model::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let out = create_out(&crate::resolve_out(a.out.as_deref(), "localize"))?;
    let task = gqnloc_world::sample_task(
        ds.test.get(a.episode).ok_or_else(|| {
            crate::error::CliError::Usage(format!("--episode {} but only {} test episodes", a.episode, ds.test.len()))
        })?,
        a.context,
        a.task_seed,
    )?;
    let s = settings(&a.search, a.task_seed, Parallelism::global());
    let o = localize_task(&model, &task, &[a.dim], &s)?.remove(0);
    for w in &o.result.warnings {
        eprintln!("warning: {w}");
    }
    let context: Vec<CameraPose> = task.context.iter().map(|f| f.pose).collect();
    render_map(&o, &context, a.scale).save(&out.join("map.ppm"))?;
    let r = &o.result;
    let csv = format!(
        "dim,gt_x,gt_y,gt_yaw,est_x,est_y,est_yaw,cell,squared_error,logprob_gt,vicinity_logmass\n{},{},{},{},{},{},{},{},{},{},{}\n",
        r.dim.name(),
        fmt(r.gt.x),
        fmt(r.gt.y),
        fmt(r.gt.yaw),
        fmt(r.estimate.x),
        fmt(r.estimate.y),
        fmt(r.estimate.yaw),
        r.index,
        fmt(r.squared_error),
        fmt(o.logprob_gt),
        fmt(o.vicinity.unwrap_or(f64::NAN))
    );
    write_text(&out.join("localize.csv"), &csv)?;
    println!(
        "{}: estimate ({:.3}, {:.3}, yaw {:.1}) vs truth ({:.3}, {:.3}, yaw {:.1}), squared error {:.6}",
        r.dim.name(),
        r.estimate.x,
        r.estimate.y,
        r.estimate.yaw,
        r.gt.x,
        r.gt.y,
        r.gt.yaw,
        r.squared_error
    );
    let mut m = ManifestBuilder::new("localize", argv, &out);
    m.config(serde_json::json!({ "args": to_json(&a), "model": to_json(model.config()), "trained": model.trained() }));
    m.seed("task", a.task_seed);
    m.input(&a.checkpoint)?;
    record_dataset(&mut m, &a.data)?;
    m.output("map.ppm")?;
    m.output("localize.csv")?;
    m.finish()?;
    Ok(())
}
