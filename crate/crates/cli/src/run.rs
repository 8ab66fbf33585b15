//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const OUT_ROOT_ENV: &str = "CRADLE_OUT_ROOT";
const DEFAULT_ROOT: &str = "runs";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Finalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub status: RunStatus,
    pub args: Vec<String>,
    pub seed: u64,
    pub started: String,
    pub finished: Option<String>,
    /// Resolved configuration.
    pub config: serde_json::Value,
    /// Input file → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the run directory) → git-style blob hash.
    pub outputs: BTreeMap<String, String>,
    /// Hash over the sorted output entries.
    pub output_hash: Option<String>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 of `blob <len>\0<content>`, the object framing git uses.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hash of a sorted `name → blob hash` listing, in the spirit of a git tree.
pub fn tree_hash(entries: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (name, digest) in entries {
        h.update(format!("{digest} {name}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, Failure> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

/// An open run: the directory exists and holds a `running` manifest.
pub struct Run {
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Resolve the run directory: `out` if given, otherwise
    /// `<root>/<command>-<timestamp>-seed<seed>` under `$CRADLE_OUT_ROOT`
    /// (default `runs`). Refuses a directory with a finalized manifest.
    pub fn open(
        command: &str,
        out: Option<&Path>,
        seed: u64,
        config: serde_json::Value,
        inputs: &[PathBuf],
    ) -> Result<Self, Failure> {
        let dir = match out {
            Some(d) => d.to_path_buf(),
            None => {
                let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from);
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
                root.join(format!("{command}-{stamp}-seed{seed}"))
            }
        };
        if let Ok(m) = read_manifest(&dir) {
            if m.status == RunStatus::Finalized {
                return Err(Failure::config(format!(
                    "{} already holds a finalized run; choose a fresh output directory",
                    dir.display()
                )));
            }
        }
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), sha256_file(p)?);
        }
        let run = Self {
            dir,
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                status: RunStatus::Running,
                args: std::env::args().collect(),
                seed,
                started: now(),
                finished: None,
                config,
                inputs: digests,
                outputs: BTreeMap::new(),
                output_hash: None,
                summary: serde_json::Value::Null,
            },
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_manifest(&self) -> Result<(), Failure> {
        let path = self.path(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
    }

    /// Hash every file below the run directory and mark the run finalized.
    pub fn finalize(mut self, summary: serde_json::Value) -> Result<RunManifest, Failure> {
        let mut outputs = BTreeMap::new();
        collect_outputs(&self.dir, &self.dir, &mut outputs)?;
        self.manifest.output_hash = Some(tree_hash(&outputs));
        self.manifest.outputs = outputs;
        self.manifest.summary = summary;
        self.manifest.finished = Some(now());
        self.manifest.status = RunStatus::Finalized;
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

fn collect_outputs(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::data(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| Failure::data(e.to_string()))?.path();
        if path.is_dir() {
            collect_outputs(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let bytes = std::fs::read(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            let rel = path.strip_prefix(root).expect("below root").to_string_lossy().replace('\\', "/");
            out.insert(rel, blob_hash(&bytes));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_framing() {
        // sha256("blob 0\0")
        assert_eq!(
            blob_hash(b""),
            hex::encode(Sha256::digest(b"blob 0\0"))
        );
        assert_ne!(blob_hash(b"a"), blob_hash(b"b"));
    }

    #[test]
    fn finalized_run_is_not_overwritten() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("r");
        let run = Run::open("qc", Some(&dir), 0, serde_json::Value::Null, &[]).unwrap();
        std::fs::write(run.path("a.txt"), "x").unwrap();
        let m = run.finalize(serde_json::json!({"k": 1})).unwrap();
        assert_eq!(m.status, RunStatus::Finalized);
        assert_eq!(m.outputs.len(), 1);
        assert!(m.output_hash.is_some());
        let err = Run::open("qc", Some(&dir), 0, serde_json::Value::Null, &[]).err().unwrap();
        assert_eq!(err.code, 2);
    }

    #[test]
    fn unfinished_run_can_be_reopened() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("r");
        let _ = Run::open("qc", Some(&dir), 0, serde_json::Value::Null, &[]).unwrap();
        assert_eq!(read_manifest(&dir).unwrap().status, RunStatus::Running);
        assert!(Run::open("qc", Some(&dir), 0, serde_json::Value::Null, &[]).is_ok());
    }
}
