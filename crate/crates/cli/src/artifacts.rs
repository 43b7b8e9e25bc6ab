//! Run-directory layout, the manifest, and per-cell result files used for
//! resumption.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tasktransfer::adaptation::{AdaptationSample, Curve};
use tasktransfer::instructions::Instruction;

use crate::config::RunConfig;
use crate::error::CliError;

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn slug(i: &Instruction) -> String {
    i.render().replace(' ', "_")
}

/// Paths inside one output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn snapshot(&self, i: &Instruction) -> PathBuf {
        self.root.join("snapshots").join(format!("{}.bin", slug(i)))
    }

    pub fn base_stats(&self, i: &Instruction) -> PathBuf {
        self.root.join("base_stats").join(format!("{}.csv", slug(i)))
    }

    pub fn cells(&self, kind: &str) -> PathBuf {
        self.root.join("cells").join(kind)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Requires a prerequisite artifact.
    pub fn require(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing(format!("{} (run the earlier stage first)", p.display())))
        }
    }

    /// Refuses to clobber a finished stage unless forced.
    pub fn guard(&self, rel: &str, force: bool) -> Result<(), CliError> {
        let p = self.path(rel);
        if p.exists() && !force {
            return Err(CliError::Exists(p));
        }
        Ok(())
    }

    /// Writes the resolved config for `stage` under `config/`.
    pub fn write_config(&self, stage: &str, cfg: &RunConfig) -> Result<(), CliError> {
        let dir = self.root.join("config");
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("{stage}.conf")), cfg.to_flat())?;
        Ok(())
    }
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Config hash without the settings that must not change results
/// (thread count, output location).
pub fn experiment_hash(cfg: &RunConfig) -> String {
    RunConfig {
        parallel: 0,
        out: String::new(),
        ..cfg.clone()
    }
    .hash()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    /// Output file (relative to the run directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Cell id to `done` or `failed: <reason>`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cells: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Self-description of a run directory. Contains no timestamps so reruns
/// are byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &RunDir) -> Result<Self, CliError> {
        let p = dir.manifest();
        if !p.exists() {
            return Ok(Manifest {
                software_version: SOFTWARE_VERSION.into(),
                ..Manifest::default()
            });
        }
        serde_json::from_slice(&fs::read(&p)?)
            .map_err(|e| CliError::Missing(format!("unreadable manifest {}: {e}", p.display())))
    }

    /// Records a finished stage, hashing its outputs, and saves.
    pub fn record(
        dir: &RunDir,
        stage: &str,
        cfg: &RunConfig,
        outputs: &[&str],
        cells: BTreeMap<String, String>,
        notes: Vec<String>,
    ) -> Result<(), CliError> {
        let mut m = Manifest::load(dir)?;
        m.software_version = SOFTWARE_VERSION.into();
        let mut hashes = BTreeMap::new();
        for rel in outputs {
            let p = dir.path(rel);
            if p.is_file() {
                hashes.insert(rel.to_string(), file_sha256(&p)?);
            }
        }
        m.stages.insert(
            stage.to_string(),
            StageRecord {
                config_hash: experiment_hash(cfg),
                seed: cfg.seed,
                outputs: hashes,
                cells,
                notes,
            },
        );
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(dir.manifest(), text)?;
        Ok(())
    }
}

/// One finished adaptation (or scratch) cell as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub base: Option<Instruction>,
    pub transfer: Instruction,
    pub n_steps: usize,
    pub success_rate: f64,
    pub curve: Curve,
    pub seed: u64,
}

impl From<&AdaptationSample> for CellRecord {
    fn from(s: &AdaptationSample) -> Self {
        CellRecord {
            base: s.base,
            transfer: s.transfer,
            n_steps: s.n_steps,
            success_rate: s.success_rate,
            curve: s.curve.clone(),
            seed: s.seed,
        }
    }
}

impl From<CellRecord> for AdaptationSample {
    fn from(c: CellRecord) -> Self {
        AdaptationSample {
            base: c.base,
            transfer: c.transfer,
            n_steps: c.n_steps,
            success_rate: c.success_rate,
            curve: c.curve,
            seed: c.seed,
        }
    }
}

pub fn cell_id(base: Option<&Instruction>, transfer: &Instruction) -> String {
    format!("{}__{}", base.map_or_else(|| "scratch".to_string(), slug), slug(transfer))
}

/// Reads a stored cell; `None` when absent or unreadable.
pub fn read_cell<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    let bytes = fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// Writes via a temporary file so an interrupted write never leaves a
/// half-written cell behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
