use std::path::{Path, PathBuf};

use clap::Parser;

use super::write_text;
use crate::args::{Cli, ReplayArgs};
use crate::error::{CliError, Result};
use crate::manifest::{sha256_file, RunManifest, MANIFEST_FILE};

/// Per-output comparison of a replay against the recorded run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub path: String,
    pub expected: String,
    pub actual: String,
}

impl Comparison {
    pub fn matches(&self) -> bool {
        self.expected == self.actual
    }
}

pub fn replay(manifest: &Path, out: Option<&Path>) -> Result<(PathBuf, Vec<Comparison>)> {
    let m = RunManifest::load(manifest)?;
    if m.command == "replay" {
        return Err(CliError::Usage("cannot replay a replay".into()));
    }
    for i in &m.inputs {
        let p = Path::new(&i.path);
        let now = sha256_file(p)?;
        if now != i.sha256 {
            return Err(CliError::Failure(format!("input {} changed since the recorded run", p.display())));
        }
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(format!("{}-replay", m.out_dir)));
    if out == Path::new(&m.out_dir) {
        return Err(CliError::Usage("replay output directory must differ from the recorded one".into()));
    }
    let argv = m.argv_with_out(&out);
    let cli = Cli::try_parse_from(std::iter::once("gqnloc".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(format!("recorded arguments no longer parse: {e}")))?;
    crate::execute(cli, &argv)?;
    let again = RunManifest::load(&out.join(MANIFEST_FILE))?;
    let cmp = m
        .outputs
        .iter()
        .filter(|o| !m.volatile.contains(&o.path))
        .map(|o| Comparison {
            path: o.path.clone(),
            expected: o.sha256.clone(),
            actual: again.outputs.iter().find(|n| n.path == o.path).map(|n| n.sha256.clone()).unwrap_or_default(),
        })
        .collect();
    Ok((out, cmp))
}

pub fn run(a: ReplayArgs) -> Result<()> {
    let (out, cmp) = replay(&a.manifest, a.out.as_deref())?;
    let mut csv = String::from("path,expected_sha256,actual_sha256,identical\n");
    for c in &cmp {
        csv.push_str(&format!("{},{},{},{}\n", c.path, c.expected, c.actual, c.matches()));
    }
    write_text(&out.join("replay.csv"), &csv)?;
    let differing: Vec<&str> = cmp.iter().filter(|c| !c.matches()).map(|c| c.path.as_str()).collect();
    if differing.is_empty() {
        eprintln!("{} outputs reproduced byte-identically in {}", cmp.len(), out.display());
        Ok(())
    } else {
        Err(CliError::Numerical(format!("replay differs in {}", differing.join(", "))))
    }
}
