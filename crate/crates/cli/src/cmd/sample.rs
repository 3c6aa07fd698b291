use gqnloc_core::data::ContextBatch;
use gqnloc_core::trainer::load_generative;

use super::{create_out, fmt, load_dataset, pixel_mse, record_dataset, require_file, test_task, to_json, write_text};
use crate::args::SampleArgs;
use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;
use crate::ppm::{Canvas, WHITE};

pub fn run(a: SampleArgs, argv: &[String]) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let model = load_generative(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let out = create_out(&crate::resolve_out(a.out.as_deref(), "sample"))?;
    let scale = a.scale.max(1);
    let mut csv = String::from("task,episode,target_index,pixel_mse\n");
    let mut m = ManifestBuilder::new("sample", argv, &out);
    let mut names = Vec::new();
    for i in 0..a.tasks {
        let task = test_task(&ds.test, i, a.context, a.seed)?;
        let ctx = ContextBatch::<f32>::from_tasks(&[&task], model.config());
        let img = model
            .sample(&ctx, &[task.target.pose], gqnloc_core::trainer::derive(a.seed, 12, i as u64))?
            .pop()
            .ok_or_else(|| CliError::Failure("sampler returned no image".into()))?;
        let mse = pixel_mse(&img, &task.target.image);
        let s = img.size * scale;
        let mut c = Canvas::new(2 * s + 2, s, WHITE);
        c.blit(&task.target.image, 0, 0, scale);
        c.blit(&img, s + 2, 0, scale);
        let name = format!("sample_{i:03}.ppm");
        c.save(&out.join(&name))?;
        names.push(name);
        csv.push_str(&format!("{i},{},{},{}\n", i % ds.test.len(), task.target_index, fmt(mse)));
    }
    write_text(&out.join("samples.csv"), &csv)?;
    eprintln!("{} ground truth | sample pairs -> {}", a.tasks, out.display());
    m.config(serde_json::json!({ "args": to_json(&a), "model": to_json(model.config()) }));
    m.seed("tasks", a.seed);
    m.input(&a.checkpoint)?;
    record_dataset(&mut m, &a.data)?;
    for n in &names {
        m.output(n)?;
    }
    m.output("samples.csv")?;
    m.finish()?;
    Ok(())
}
