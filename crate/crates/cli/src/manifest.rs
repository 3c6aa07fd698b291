//! One JSON manifest per command run: what was asked, with which seeds, on
//! which inputs, and the digests of what came out.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to `out_dir`.
    pub outputs: Vec<FileDigest>,
    /// Outputs that carry wall-clock data and are not expected to reproduce.
    pub volatile: Vec<String>,
    pub out_dir: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the pieces of a manifest while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    m: RunManifest,
    dir: PathBuf,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: &[String], out_dir: &Path) -> Self {
        Self {
            m: RunManifest {
                command: command.into(),
                argv: argv.to_vec(),
                config: serde_json::Value::Null,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                volatile: Vec::new(),
                out_dir: out_dir.display().to_string(),
            },
            dir: out_dir.to_path_buf(),
        }
    }

    pub fn config(&mut self, v: serde_json::Value) {
        self.m.config = v;
    }

    pub fn seed(&mut self, name: &str, v: u64) {
        self.m.seeds.insert(name.into(), v);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.m.inputs.push(FileDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    /// Records a file already written under the output directory.
    pub fn output(&mut self, name: &str) -> Result<()> {
        let sha256 = sha256_file(&self.dir.join(name))?;
        self.m.outputs.push(FileDigest { path: name.into(), sha256 });
        Ok(())
    }

    pub fn volatile(&mut self, name: &str) {
        self.m.volatile.push(name.into());
    }

    pub fn finish(self) -> Result<RunManifest> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.m).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.m)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
    }

    /// The recorded arguments with any output directory replaced by `out`.
    pub fn argv_with_out(&self, out: &Path) -> Vec<String> {
        let mut args = Vec::with_capacity(self.argv.len() + 2);
        let mut skip = false;
        for a in &self.argv {
            if skip {
                skip = false;
                continue;
            }
            if a == "--out" {
                skip = true;
                continue;
            }
            if a.starts_with("--out=") {
                continue;
            }
            args.push(a.clone());
        }
        args.push("--out".into());
        args.push(out.display().to_string());
        args
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn out_is_replaced() {
        let m = RunManifest {
            command: "sample".into(),
            argv: ["sample", "--out", "a", "--tasks", "2", "--out=b"].map(String::from).to_vec(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: vec![],
            outputs: vec![],
            volatile: vec![],
            out_dir: "a".into(),
        };
        assert_eq!(m.argv_with_out(Path::new("z")), ["sample", "--tasks", "2", "--out", "z"]);
    }
}
