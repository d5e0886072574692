//! Run-directory bookkeeping: content hashes, the run log and the
//! train-row audit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tristack::dataset::Task;

use crate::Failure;

pub const MANIFEST: &str = "manifest.json";
/// The only output allowed to carry timestamps; excluded from the manifest.
pub const RUN_LOG: &str = "run.log";

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("I/O error on {}: {e}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Relative path (with `/` separators) to SHA-256 for every file under
/// `root` except the manifest and the run log.
pub fn build_manifest(root: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    let mut out = BTreeMap::new();
    for f in files {
        let rel = f.strip_prefix(root).expect("walked under root");
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
        if key == MANIFEST || key == RUN_LOG {
            continue;
        }
        out.insert(key, sha256_file(&f)?);
    }
    Ok(out)
}

pub fn write_manifest(root: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let m = build_manifest(root)?;
    write_json(&root.join(MANIFEST), &m)?;
    Ok(m)
}

pub fn read_manifest(root: &Path) -> Result<BTreeMap<String, String>, Failure> {
    read_json(&root.join(MANIFEST))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Single-line JSON, for large model files.
pub fn write_json_compact<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Appends one timestamped line to `run.log`.
pub fn log_line(root: &Path, command: &str, message: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let path = root.join(RUN_LOG);
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
    writeln!(f, "{secs:.3} [{command}] {message}").map_err(|e| io_err(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Fitted component, e.g. `imputer` or `smote`.
    pub stage: String,
    pub row_ids: Vec<u64>,
}

/// Row ids every fitted stage received, checked against the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub task: Task,
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn new(task: Task) -> Self {
        Self { task, entries: Vec::new() }
    }

    pub fn record(&mut self, stage: &str, row_ids: &[u64]) {
        let mut ids = row_ids.to_vec();
        ids.sort_unstable();
        self.entries.push(AuditEntry {
            stage: stage.to_string(),
            row_ids: ids,
        });
    }

    /// Fails when any stage saw a test row or a row outside the split.
    pub fn verify(&self, train: &[u64], test: &[u64]) -> Result<(), Failure> {
        let train: BTreeSet<u64> = train.iter().copied().collect();
        let test: BTreeSet<u64> = test.iter().copied().collect();
        if let Some(id) = train.intersection(&test).next() {
            return Err(Failure::Runtime(format!("{}: row {id} is in both partitions", self.task.name())));
        }
        for e in &self.entries {
            if let Some(id) = e.row_ids.iter().find(|id| test.contains(id)) {
                return Err(Failure::Runtime(format!("{}: stage `{}` was fitted on test row {id}", self.task.name(), e.stage)));
            }
            if let Some(id) = e.row_ids.iter().find(|id| !train.contains(id)) {
                return Err(Failure::Runtime(format!("{}: stage `{}` saw row {id} outside the training partition", self.task.name(), e.stage)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_skips_log_and_itself() {
        let d = tempfile::tempdir().unwrap();
        write_text(&d.path().join("a/b.txt"), "x").unwrap();
        write_text(&d.path().join("c.txt"), "y").unwrap();
        log_line(d.path(), "test", "hello").unwrap();
        let m = write_manifest(d.path()).unwrap();
        assert_eq!(m.keys().cloned().collect::<Vec<_>>(), vec!["a/b.txt".to_string(), "c.txt".to_string()]);
        assert_eq!(m["c.txt"], sha256_hex(b"y"));
        assert_eq!(read_manifest(d.path()).unwrap(), m);
        assert_eq!(write_manifest(d.path()).unwrap(), m);
    }

    #[test]
    fn audit_rejects_test_rows() {
        let mut a = AuditLog::new(Task::LoginBinary);
        a.record("imputer", &[2, 0, 1]);
        assert!(a.verify(&[0, 1, 2], &[3]).is_ok());
        a.record("scaler", &[1, 3]);
        let err = a.verify(&[0, 1, 2], &[3]).unwrap_err().to_string();
        assert!(err.contains("scaler") && err.contains("test row 3"), "{err}");
        let mut b = AuditLog::new(Task::LoginBinary);
        b.record("smote", &[9]);
        assert!(b.verify(&[0], &[1]).is_err());
    }
}
