use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const SUBDIRS: [&str; 4] = ["checkpoints", "traces", "reports", "figures"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub game: u64,
    pub ppo: u64,
    pub evaluation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub seeds: Seeds,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub layout: Vec<String>,
    /// Subcommands run against this directory, oldest first.
    pub history: Vec<String>,
    pub config: ExperimentConfig,
}

/// `runs/<hash>/` with its fixed subdirectories.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub hash: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

impl RunDir {
    pub fn path_for(out_root: &Path, cfg: &ExperimentConfig) -> Self {
        let hash = cfg.hash();
        Self { root: out_root.join(&hash[..16]), hash }
    }

    pub fn sub(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Creates the layout and records `command` in the manifest.
    pub fn open(out_root: &Path, cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        let run = Self::path_for(out_root, cfg);
        for d in SUBDIRS {
            fs::create_dir_all(run.sub(d)).with_context(|| format!("creating {}", run.sub(d).display()))?;
        }
        let path = run.root.join("manifest.json");
        let t = now();
        let mut manifest = match fs::read_to_string(&path).ok().and_then(|s| serde_json::from_str::<Manifest>(&s).ok()) {
            Some(m) if m.config_hash == run.hash => m,
            _ => Manifest {
                config_hash: run.hash.clone(),
                version: version(),
                seeds: Seeds { game: cfg.game.seed, ppo: cfg.ppo.seed, evaluation: cfg.evaluation.seed },
                created_unix: t,
                updated_unix: t,
                layout: SUBDIRS.iter().map(|s| s.to_string()).collect(),
                history: Vec::new(),
                config: cfg.clone(),
            },
        };
        manifest.updated_unix = t;
        manifest.version = version();
        manifest.history.push(command.to_string());
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(run)
    }
}

/// Writes `path` through a temporary sibling so a failure leaves no partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(&buf)?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Value of the `# manifest: <hash>` header line, if present.
pub fn manifest_hash_of(text: &str) -> Option<String> {
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix("# manifest:"))
        .map(|h| h.trim().to_string())
}
