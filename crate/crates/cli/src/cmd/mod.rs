//! One module per subcommand, plus helpers they share.

pub mod eval;
pub mod gen_data;
pub mod localize;
pub mod overfit;
pub mod replay;
pub mod sample;
pub mod train;
pub mod viz;

use std::path::{Path, PathBuf};

use gqnloc_core::trainer::derive;
use gqnloc_world::dataset::{DatasetPaths, SPLIT_FILE, TEST_FILE, TRAIN_FILE};
use gqnloc_world::{sample_task, Dataset, Episode, Image, Task};

use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let p = DatasetPaths::in_dir(dir);
    for f in [&p.train, &p.test, &p.manifest] {
        if !f.exists() {
            return Err(CliError::MissingInput(format!(
                "dataset not found: expected {} (run `gqnloc gen-data --out {}`)",
                f.display(),
                dir.display()
            )));
        }
    }
    Ok(Dataset::load(dir)?)
}

/// Records the three dataset files as manifest inputs.
pub fn record_dataset(m: &mut ManifestBuilder, dir: &Path) -> Result<()> {
    for f in [TRAIN_FILE, TEST_FILE, SPLIT_FILE] {
        m.input(&dir.join(f))?;
    }
    Ok(())
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput(format!("{what} not found: {}", path.display())))
    }
}

pub fn create_out(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Test task `i`: drawn from episode `i mod n` with a seed derived from `seed`.
pub fn test_task(test: &[Episode], i: usize, context: usize, seed: u64) -> Result<Task> {
    if test.is_empty() {
        return Err(CliError::Usage("dataset has no test episodes".into()));
    }
    Ok(sample_task(&test[i % test.len()], context, derive(seed, 11, i as u64))?)
}

/// The task restricted to its first `c` context frames. Context frames come
/// out of the sampler in random order, so any prefix is a uniform subset.
pub fn truncate_context(task: &Task, c: usize) -> Task {
    let c = c.min(task.context.len());
    Task {
        context: task.context[..c].to_vec(),
        target: task.target.clone(),
        context_indices: task.context_indices[..c].to_vec(),
        target_index: task.target_index,
    }
}

pub fn pixel_mse(a: &Image, b: &Image) -> f64 {
    let n = a.data.len().max(1);
    a.data.iter().zip(&b.data).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / n as f64
}

/// Fixed-precision float for CSV cells, `nan` for missing values.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("arguments serialize")
}
