use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;
use tracing_subscriber::EnvFilter;
use whymine_core::manifest::RunManifest;
use whymine_core::PipelineConfig;

#[derive(Debug, thiserror::Error)]
#[error("usage: {0}")]
pub struct UsageError(pub String);

#[derive(Debug, thiserror::Error)]
#[error("missing input {label}: {}", path.display())]
pub struct MissingInput {
    pub label: String,
    pub path: PathBuf,
}

pub fn init_logging(level: &str) {
    let filter = EnvFilter::try_new(level).unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().json().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub struct Ctx {
    pub workdir: PathBuf,
    pub cfg: PipelineConfig,
    pub dry_run: bool,
    args: Vec<String>,
    config_path: Option<PathBuf>,
}

#[derive(Serialize)]
struct Plan<'a> {
    command: &'a str,
    inputs: Vec<(&'a str, String)>,
    outputs: Vec<String>,
}

impl Ctx {
    pub fn new(
        workdir: &Path,
        config: Option<&Path>,
        sets: &[String],
        jobs: Option<usize>,
        dry_run: bool,
        args: Vec<String>,
    ) -> anyhow::Result<Self> {
        let mut cfg = PipelineConfig::default();
        let config_path = config.map(|c| if c.is_absolute() { c.to_path_buf() } else { workdir.join(c) });
        if let Some(p) = &config_path {
            if !p.exists() {
                return Err(MissingInput { label: "config".into(), path: p.clone() }.into());
            }
            cfg = PipelineConfig::from_file(p)?;
        }
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {s:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| UsageError(e.to_string()))?;
        }
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        if let Some(n) = jobs {
            if n == 0 {
                return Err(UsageError("--jobs must be at least 1".into()).into());
            }
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
        }
        Ok(Ctx { workdir: workdir.to_path_buf(), cfg, dry_run, args, config_path })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    /// Checks inputs, then either prints the plan (dry run, returns `None`)
    /// or starts a manifest with input hashes.
    pub fn begin(
        &self,
        command: &str,
        inputs: &[(&str, PathBuf)],
        outputs: &[PathBuf],
    ) -> anyhow::Result<Option<RunManifest>> {
        for (label, p) in inputs {
            if !p.exists() {
                return Err(MissingInput { label: label.to_string(), path: p.clone() }.into());
            }
        }
        if self.dry_run {
            let plan = Plan {
                command,
                inputs: inputs.iter().map(|(l, p)| (*l, p.display().to_string())).collect(),
                outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            };
            println!("{}", serde_json::to_string_pretty(&plan)?);
            return Ok(None);
        }
        std::fs::create_dir_all(&self.workdir).with_context(|| format!("creating {}", self.workdir.display()))?;
        let mut m = RunManifest::new(command, self.args.clone(), &self.cfg);
        if let Some(c) = &self.config_path {
            m.add_input("config", c)?;
        }
        for (label, p) in inputs {
            m.add_input(label, p)?;
        }
        for o in outputs {
            m.add_output(&o.display().to_string());
        }
        tracing::info!(command, inputs = inputs.len(), "run started");
        Ok(Some(m))
    }

    pub fn finish(&self, manifest: RunManifest) -> anyhow::Result<()> {
        let path = manifest.write(&self.workdir)?;
        tracing::info!(command = %manifest.command, manifest = %path.display(), "run finished");
        Ok(())
    }
}
