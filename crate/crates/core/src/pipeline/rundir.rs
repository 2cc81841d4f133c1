use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::sha256_hex;

pub const MANIFEST: &str = "run_manifest.json";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at: String,
    /// Run-dir-relative path -> SHA-256 of its content.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stub: bool,
    pub created_at: String,
    pub stages: BTreeMap<String, StageRecord>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Exclusive advisory lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
    _lock: RunLock,
}

impl RunDir {
    /// Opens (creating if needed) and locks a run directory. A manifest
    /// from a different config starts over; one from the other backend mode
    /// is refused.
    pub fn open(root: &Path, config_hash: &str, stub: bool) -> Result<Self> {
        fs::create_dir_all(root)?;
        let lock_path = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock_path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Locked(root.to_path_buf()));
            }
            Err(e) => return Err(e.into()),
        }
        let lock = RunLock { path: lock_path };
        let fresh = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            stub,
            created_at: now(),
            stages: BTreeMap::new(),
        };
        let manifest_path = root.join(MANIFEST);
        let manifest = if manifest_path.is_file() {
            let old: RunManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
            if old.stub != stub && !old.stages.is_empty() {
                return Err(Error::Config(format!(
                    "run directory {} holds {} artifacts but this command runs in {} mode",
                    root.display(),
                    if old.stub { "stub" } else { "real-backend" },
                    if stub { "stub" } else { "real-backend" },
                )));
            }
            if old.config_hash == config_hash {
                old
            } else {
                tracing::info!(old = %old.config_hash, new = %config_hash, "config changed; stages will re-run");
                fresh
            }
        } else {
            fresh
        };
        let dir = Self {
            root: root.to_path_buf(),
            manifest,
            _lock: lock,
        };
        dir.save()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Creates the parent directory of a run-relative path and returns the path.
    pub fn output(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn save(&self) -> Result<()> {
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&self.manifest)?)?;
        fs::rename(tmp, self.root.join(MANIFEST))?;
        Ok(())
    }

    /// True when the stage completed under this config and its outputs are intact.
    pub fn is_fresh(&self, stage: &str) -> bool {
        self.manifest.stages.get(stage).is_some_and(|rec| {
            rec.outputs
                .iter()
                .all(|(rel, hash)| file_hash(&self.path(rel)).is_ok_and(|h| &h == hash))
        })
    }

    /// An upstream artifact, or an error naming the command that produces it.
    pub fn require(&self, stage: &str, rel: &str, command: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        let recorded = self
            .manifest
            .stages
            .get(stage)
            .is_some_and(|r| r.outputs.contains_key(rel));
        if !recorded || !p.is_file() {
            return Err(Error::MissingArtifact {
                artifact: rel.to_string(),
                command: command.to_string(),
            });
        }
        Ok(p)
    }

    /// Hashes and records a stage's outputs before the stage reports success.
    pub fn record(&mut self, stage: &str, outputs: &[String]) -> Result<()> {
        let mut map = BTreeMap::new();
        for rel in outputs {
            map.insert(rel.clone(), file_hash(&self.path(rel))?);
        }
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                completed_at: now(),
                outputs: map,
            },
        );
        self.save()
    }

    /// Drops a stage and everything recorded after it would depend on.
    pub fn invalidate(&mut self, stages: &[&str]) -> Result<()> {
        for s in stages {
            self.manifest.stages.remove(*s);
        }
        self.save()
    }
}
