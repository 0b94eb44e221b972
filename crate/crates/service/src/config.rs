use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// `serve --config <file>` settings. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub model: PathBuf,
    pub cards: PathBuf,
    /// Prepared data directory holding `encounters.csv`.
    pub data: PathBuf,
    /// `metrics.json` written by `evaluate`.
    #[serde(default)]
    pub metrics: Option<PathBuf>,
    /// Built UI assets, served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub read_only: bool,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_true() -> bool {
    true
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ServiceConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.model);
        fix(&mut self.cards);
        fix(&mut self.data);
        if let Some(p) = self.metrics.as_mut() {
            fix(p);
        }
        if let Some(p) = self.static_dir.as_mut() {
            fix(p);
        }
    }

    /// Every referenced path must exist before the service starts.
    pub fn check_paths(&self) -> Result<()> {
        let mut missing = Vec::new();
        for p in [&self.model, &self.cards, &self.data.join(readmit_core::artifacts::ENCOUNTERS)] {
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
        for p in self.metrics.iter().chain(&self.static_dir) {
            if !p.exists() {
                missing.push(p.display().to_string());
            }
        }
        if !missing.is_empty() {
            bail!(readmit_core::Error::Config(format!("missing: {}", missing.join(", "))));
        }
        if !self.read_only {
            bail!(readmit_core::Error::Config("the service only supports read_only = true".into()));
        }
        Ok(())
    }
}
