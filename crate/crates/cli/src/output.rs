//! Where a command's artifacts go, and the manifest describing a run.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

/// Collects artifacts. With an output directory every artifact is written
/// there; without one only the primary artifact goes to stdout.
pub struct Sink {
    dir: Option<PathBuf>,
    artifacts: BTreeMap<String, String>,
    wrote_primary: bool,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Sink {
            dir,
            artifacts: BTreeMap::new(),
            wrote_primary: false,
        })
    }

    /// The command's main output.
    pub fn primary(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        debug_assert!(!self.wrote_primary, "one primary artifact per command");
        self.wrote_primary = true;
        match &self.dir {
            Some(_) => self.write(name, bytes),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
                Ok(())
            }
        }
    }

    /// An auxiliary output, only kept when an output directory is set.
    pub fn secondary(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.dir.is_some() {
            self.write(name, bytes)
        } else {
            log::info!("not writing {name}: no --output-dir given");
            Ok(())
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.as_ref().expect("output directory").join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts
            .insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Writes `run_manifest.json` when an output directory is set.
    pub fn finish(self, command: &str, config: &PipelineConfig, seeds: BTreeMap<&'static str, u64>) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let manifest = Manifest {
            command,
            config_sha256: config.hash(),
            config,
            seeds,
            threads: rayon::current_num_threads(),
            versions: Versions {
                psmscan: env!("CARGO_PKG_VERSION"),
                parallel: psmscan::par::ENABLED,
            },
            artifacts: &self.artifacts,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = dir.join("run_manifest.json");
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    config: &'a PipelineConfig,
    seeds: BTreeMap<&'static str, u64>,
    threads: usize,
    versions: Versions,
    /// File name to SHA-256 of its contents.
    artifacts: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Versions {
    psmscan: &'static str,
    parallel: bool,
}
