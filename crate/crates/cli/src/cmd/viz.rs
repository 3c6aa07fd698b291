use gqnloc_core::bins::XY_AXIS;
use gqnloc_core::config::{PATCH, PATCH_STRIDE};
use gqnloc_core::data::ContextBatch;
use gqnloc_core::discriminative::total_attention;
use gqnloc_world::{sample_task, Episode, Image, Task};

use super::localize::Model;
use super::{create_out, fmt, load_dataset, record_dataset, to_json, write_text};
use crate::args::VizArgs;
use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;
use crate::ppm::{Canvas, CYAN, GREEN};

/// Per-layer attention weights over the task's patch dictionary.
pub fn attention_layers(model: &Model, task: &Task, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !model.config().attention {
        return Err(CliError::Usage("viz-attention needs an attention checkpoint; this one is parametric".into()));
    }
    let ctx = ContextBatch::<f32>::from_tasks(&[task], model.config());
    Ok(match model {
        Model::Gen(m) => {
            let (_, att) = m.sample_with_attention(&ctx, &[task.target.pose], seed)?;
            att.into_iter().map(|mut per_pose| per_pose.remove(0)).collect()
        }
        Model::Disc(m) => m.pose_maps(&task.target.image, &ctx)?.1,
    })
}

/// Spreads per-patch weights back over each `size`x`size` context image.
/// Pixels covered by several patches take the mean of their weights, so a
/// uniform distribution gives flat maps; values are then scaled by the
/// global maximum into [0, 1].
pub fn pixel_weights(total: &[f64], frames: usize, size: usize) -> Vec<Vec<f64>> {
    let ps = (size - PATCH) / PATCH_STRIDE + 1;
    assert_eq!(total.len(), frames * ps * ps, "one weight per context patch");
    let mut maps: Vec<Vec<f64>> = (0..frames)
        .map(|f| {
            let mut acc = vec![0.0; size * size];
            let mut cov = vec![0.0; size * size];
            for i in 0..ps {
                for j in 0..ps {
                    let w = total[f * ps * ps + i * ps + j];
                    for y in 0..PATCH {
                        for x in 0..PATCH {
                            let p = (PATCH_STRIDE * i + y) * size + PATCH_STRIDE * j + x;
                            acc[p] += w;
                            cov[p] += 1.0;
                        }
                    }
                }
            }
            acc.iter().zip(&cov).map(|(a, c)| if *c > 0.0 { a / c } else { 0.0 }).collect()
        })
        .collect();
    let max = maps.iter().flatten().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in maps.iter_mut().flatten() {
            *v /= max;
        }
    }
    maps
}

/// Blends pure red over `img` with per-pixel opacity `0.8 * weight`.
pub fn red_overlay(img: &Image, weights: &[f64]) -> Image {
    let mut out = img.clone();
    for (p, w) in weights.iter().enumerate() {
        let a = (0.8 * w) as f32;
        for c in 0..3 {
            let red = if c == 0 { 1.0 } else { 0.0 };
            out.data[p * 3 + c] = img.data[p * 3 + c] * (1.0 - a) + red * a;
        }
    }
    out
}

fn to_px(v: f64, n: usize, scale: usize) -> i64 {
    ((v - XY_AXIS.lo) / (XY_AXIS.width * n as f64) * (n * scale) as f64) as i64
}

/// Episode path in the normalized xy square: walk grey, context cyan, target green.
pub fn trajectory(ep: &Episode, task: &Task, scale: usize) -> Canvas {
    let n = XY_AXIS.n;
    let side = n * scale;
    let mut c = Canvas::new(side, side, [24, 24, 24]);
    let pt = |x: f64, y: f64| (to_px(x, n, scale), side as i64 - 1 - to_px(y, n, scale));
    for w in ep.frames.windows(2) {
        c.line(pt(w[0].pose.x, w[0].pose.y), pt(w[1].pose.x, w[1].pose.y), [150, 150, 150]);
    }
    for f in &task.context {
        let (x, y) = pt(f.pose.x, f.pose.y);
        c.fill_rect(x - 2, y - 2, 5, 5, CYAN);
    }
    let (x, y) = pt(task.target.pose.x, task.target.pose.y);
    c.fill_rect(x - 3, y - 3, 7, 7, GREEN);
    c
}

fn image_canvas(img: &Image, scale: usize) -> Canvas {
    let mut c = Canvas::new(img.size * scale, img.size * scale, [0, 0, 0]);
    c.blit(img, 0, 0, scale);
    c
}

pub fn run(a: VizArgs, argv: &[String]) -> Result<()> {
    let model = Model::load(&a.checkpoint)?;
    if !model.config().attention {
        return Err(CliError::Usage(format!("{}: viz-attention needs an attention checkpoint", a.checkpoint.display())));
    }
    let ds = load_dataset(&a.data)?;
    let ep = ds.test.get(a.episode).ok_or_else(|| {
        CliError::Usage(format!("--episode {} but only {} test episodes", a.episode, ds.test.len()))
    })?;
    let task = sample_task(ep, a.context, a.task_seed)?;
    let out = create_out(&crate::resolve_out(a.out.as_deref(), "viz-attention"))?;
    let layers = attention_layers(&model, &task, a.seed)?;
    let total = total_attention(&layers);
    let size = model.config().image_size;
    let maps = pixel_weights(&total, task.context.len(), size);
    let scale = a.scale.max(1);
    let mut files = Vec::new();
    let per = total.len() / task.context.len().max(1);
    let mut csv = String::from("context,frame_index,weight_sum\n");
    for (k, (frame, w)) in task.context.iter().zip(&maps).enumerate() {
        let name = format!("context_{k:02}.ppm");
        image_canvas(&red_overlay(&frame.image, w), scale).save(&out.join(&name))?;
        files.push(name);
        let s: f64 = total[k * per..(k + 1) * per].iter().sum();
        csv.push_str(&format!("{k},{},{}\n", task.context_indices[k], fmt(s)));
    }
    image_canvas(&task.target.image, scale).save(&out.join("target.ppm"))?;
    trajectory(ep, &task, 4).save(&out.join("trajectory.ppm"))?;
    write_text(&out.join("attention.csv"), &csv)?;
    eprintln!(
        "{} layers, total weight {:.6} over {} patches -> {}",
        layers.len(),
        total.iter().sum::<f64>(),
        total.len(),
        out.display()
    );
    let mut m = ManifestBuilder::new("viz-attention", argv, &out);
    m.config(serde_json::json!({ "args": to_json(&a), "model": to_json(model.config()) }));
    m.seed("task", a.task_seed);
    m.seed("sample", a.seed);
    m.input(&a.checkpoint)?;
    record_dataset(&mut m, &a.data)?;
    for f in files.iter().map(String::as_str).chain(["target.ppm", "trajectory.ppm", "attention.csv"]) {
        m.output(f)?;
    }
    m.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_give_flat_maps() {
        let total = vec![2.0 / 98.0; 98];
        let maps = pixel_weights(&total, 2, 32);
        assert!(maps.iter().flatten().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_patch_lights_its_window() {
        let mut total = vec![0.0; 49];
        total[0] = 1.0;
        let m = &pixel_weights(&total, 1, 32)[0];
        assert_eq!(m[0], 1.0);
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(m[9 * 32 + 9], 0.0);
        // Pixel (4, 4) is covered by four patches, one of them hot.
        assert!((m[4 * 32 + 4] - 0.25).abs() < 1e-12);
    }
}
