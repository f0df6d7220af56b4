//! Run manifests: what was run, on which inputs, with which settings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::corpus::write_json;
use crate::error::{Error, Result};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    /// Input path → lowercase hex SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub version: String,
}

/// SHA-256 of a file, or of every file below a directory in path order.
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    for f in &files {
        if files.len() > 1 || f != path {
            h.update(f.strip_prefix(path).unwrap_or(f).to_string_lossy().as_bytes());
            h.update([0]);
        }
        let mut r = BufReader::new(File::open(f).map_err(|e| Error::io(f, e))?);
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = r.read(&mut buf).map_err(|e| Error::io(f, e))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> =
            std::fs::read_dir(path).map_err(|e| Error::io(path, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, cfg: &PipelineConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config: cfg.to_pairs(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Records an input under `label` with the hash of `path`.
    pub fn add_input(&mut self, label: &str, path: &Path) -> Result<()> {
        self.inputs.insert(label.to_string(), hash_path(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, label: &str) {
        self.outputs.push(label.to_string());
    }

    /// Writes `<dir>/<command>.manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}{MANIFEST_SUFFIX}", self.command));
        write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_are_recomputable() {
        let d = tempfile::tempdir().unwrap();
        let f = d.path().join("a.txt");
        std::fs::write(&f, "abc").unwrap();
        assert_eq!(hash_path(&f).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        std::fs::write(d.path().join("b.txt"), "x").unwrap();
        let h1 = hash_path(d.path()).unwrap();
        assert_eq!(h1, hash_path(d.path()).unwrap());
        std::fs::write(d.path().join("b.txt"), "y").unwrap();
        assert_ne!(h1, hash_path(d.path()).unwrap());
        let mut m = RunManifest::new("stats", vec![], &PipelineConfig::default());
        m.add_input("a", &f).unwrap();
        let p = m.write(d.path()).unwrap();
        assert!(p.ends_with("stats.manifest.json"));
        assert!(m.config.contains_key("cosine_threshold"));
    }
}
