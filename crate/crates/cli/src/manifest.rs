//! Run directory layout:
//!
//! ```text
//! manifest.json          config, config hash, snapshot list
//! snapshots/gen-NNNN.snap
//! transcripts.jsonl      provider exchanges, one per line
//! tasks.jsonl            global task archive
//! lineage.jsonl          parentage of every admitted genome
//! taskforce.json         final selection, once the run completes
//! ```

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use acdc::engine::{ArchiveState, RunConfig, Transcript};
use acdc::persist;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{io_err, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";
const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
const TASKS_FILE: &str = "tasks.jsonl";
const LINEAGE_FILE: &str = "lineage.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub generation: u64,
    /// Relative to the run directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub snapshots: Vec<SnapshotRef>,
    pub transcripts: String,
    pub tasks: String,
    pub lineage: String,
}

/// An open run directory.
#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: Manifest,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    persist::write_atomic(path, bytes).map_err(CliError::from)
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

impl RunDir {
    /// Creates a fresh run directory; refuses to reuse one holding a manifest.
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self, CliError> {
        if root.join(MANIFEST_FILE).exists() {
            return Err(CliError::Usage(format!(
                "{} already holds a run; use `resume`",
                root.display()
            )));
        }
        fs::create_dir_all(root.join("snapshots")).map_err(io_err(root))?;
        let transcripts = root.join(TRANSCRIPTS_FILE);
        fs::write(&transcripts, b"").map_err(io_err(&transcripts))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config.digest(),
                config: config.clone(),
                snapshots: Vec::new(),
                transcripts: TRANSCRIPTS_FILE.into(),
                tasks: TASKS_FILE.into(),
                lineage: LINEAGE_FILE.into(),
            },
        })
    }

    /// Opens and checks a manifest: the stored config must hash to the
    /// recorded value and every referenced file must exist.
    pub fn open(manifest_path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(manifest_path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", manifest_path.display())))?;
        if manifest.config.digest() != manifest.config_hash {
            return Err(CliError::Manifest("config hash does not match the stored config".into()));
        }
        manifest.config.validate()?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let dir = Self { root, manifest };
        for rel in dir
            .manifest
            .snapshots
            .iter()
            .map(|s| s.path.as_str())
            .chain([dir.manifest.transcripts.as_str()])
        {
            if !dir.root.join(rel).exists() {
                return Err(CliError::Manifest(format!("missing file {rel}")));
            }
        }
        Ok(dir)
    }

    pub fn config(&self) -> &RunConfig {
        &self.manifest.config
    }

    pub fn latest_snapshot(&self) -> Result<ArchiveState, CliError> {
        let s = self
            .manifest
            .snapshots
            .last()
            .ok_or_else(|| CliError::Manifest("no snapshots recorded".into()))?;
        let state = persist::load(&self.root.join(&s.path))?;
        if state.generation != s.generation {
            return Err(CliError::Manifest(format!(
                "{} holds generation {}, manifest says {}",
                s.path, state.generation, s.generation
            )));
        }
        Ok(state)
    }

    /// Persists a completed generation: snapshot, record files, transcripts,
    /// then the manifest that makes them visible.
    pub fn commit(&mut self, state: &ArchiveState, transcripts: &[Transcript]) -> Result<(), CliError> {
        let rel = format!("snapshots/gen-{:04}.snap", state.generation);
        persist::save(state, &self.root.join(&rel))?;
        write_atomic(&self.root.join(TASKS_FILE), &jsonl(&state.tasks.global))?;
        let lineage = state.lineage.iter().map(|(id, n)| {
            json!({
                "id": id,
                "parents": n.parents,
                "operator": n.operator,
                "weights": n.weights,
                "mutated": n.mutated,
                "generation_born": n.generation_born,
            })
        });
        write_atomic(&self.root.join(LINEAGE_FILE), &jsonl(lineage))?;
        self.append_transcripts(transcripts)?;
        self.manifest.snapshots.retain(|s| s.generation < state.generation);
        self.manifest.snapshots.push(SnapshotRef {
            generation: state.generation,
            path: rel,
        });
        self.save_manifest()
    }

    fn append_transcripts(&self, transcripts: &[Transcript]) -> Result<(), CliError> {
        if transcripts.is_empty() {
            return Ok(());
        }
        let path = self.root.join(&self.manifest.transcripts);
        let mut f = OpenOptions::new().append(true).create(true).open(&path).map_err(io_err(&path))?;
        f.write_all(&jsonl(transcripts)).map_err(io_err(&path))?;
        Ok(())
    }

    /// Drops transcript lines newer than `generation`, left behind by a run
    /// interrupted between appending transcripts and committing the manifest.
    pub fn truncate_transcripts(&self, generation: u64) -> Result<(), CliError> {
        let path = self.root.join(&self.manifest.transcripts);
        let f = fs::File::open(&path).map_err(io_err(&path))?;
        let mut kept = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(io_err(&path))?;
            let t: Transcript = serde_json::from_str(&line)
                .map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
            if t.generation <= generation {
                kept.push(t);
            }
        }
        write_atomic(&path, &jsonl(&kept))
    }

    pub fn save_manifest(&self) -> Result<(), CliError> {
        let bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST_FILE), &bytes)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        let bytes = serde_json::to_vec_pretty(value).expect("value serializes");
        write_atomic(&path, &bytes)?;
        Ok(path)
    }
}
