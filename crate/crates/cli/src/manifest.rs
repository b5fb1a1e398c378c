use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rydsps::RunConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Command line without the program name.
    pub args: Vec<String>,
    pub master_seed: u64,
    pub config: RunConfig,
    /// Derived seeds by stage, in draw order.
    pub stage_seeds: BTreeMap<String, Vec<u64>>,
    pub p2_budget: f64,
    pub outputs: Vec<OutputRecord>,
    pub stages: Vec<StageTiming>,
    /// Set when a stage failed; outputs then cover the completed stages.
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Collects outputs and stage timings while a command runs.
pub struct Recorder {
    pub out: PathBuf,
    pub manifest: RunManifest,
}

impl Recorder {
    pub fn new(out: &Path, command: &str, args: Vec<String>, seed: u64, config: RunConfig, p2_budget: f64) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Recorder {
            out: out.to_path_buf(),
            manifest: RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                args,
                master_seed: seed,
                config,
                stage_seeds: BTreeMap::new(),
                p2_budget,
                outputs: Vec::new(),
                stages: Vec::new(),
                error: None,
            },
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn seeds(&mut self, stage: &str, seeds: Vec<u64>) {
        self.manifest.stage_seeds.insert(stage.to_string(), seeds);
    }

    /// Runs `f` as a named stage. On failure the partial manifest is written
    /// before the error is returned.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let res = f(self);
        self.manifest.stages.push(StageTiming { stage: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        match res {
            Ok(v) => Ok(v),
            Err(e) => {
                let e = e.context(format!("stage {name} failed"));
                self.manifest.error = Some(format!("{e:#}"));
                let path = self.path(MANIFEST_NAME);
                match self.write_manifest() {
                    Ok(()) => Err(e.context(format!("partial manifest at {}", path.display()))),
                    Err(_) => Err(e),
                }
            }
        }
    }

    /// Records a file already written below the output directory.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        let rel = path.strip_prefix(&self.out).unwrap_or(path);
        self.manifest.outputs.push(OutputRecord { path: rel.to_string_lossy().replace('\\', "/"), sha256, bytes });
        Ok(())
    }

    pub fn outputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        paths.iter().try_for_each(|p| self.output(p))
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.path(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(self) -> Result<RunManifest> {
        self.write_manifest()?;
        Ok(self.manifest)
    }
}
