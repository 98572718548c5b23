//! Output directory bookkeeping: every file a run writes is recorded and
//! listed in `manifest.json` with its SHA-256, so a rerun can be diffed
//! against the manifest instead of the whole tree. Timestamps are confined
//! to `run.log`, which is appended (not overwritten) and excluded from the
//! manifest, keeping everything else byte-for-byte reproducible.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    files: Vec<ManifestEntry>,
}

impl Outputs {
    pub fn new(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root)
            .with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root, files: Vec::new() })
    }

    /// Path under the output root, with parent directories created.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }

    /// Record a file that was written under the root.
    pub fn record(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }

    /// Record every regular file under a directory (sorted, recursive).
    pub fn record_dir(&mut self, dir: &Path) -> Result<()> {
        let mut found = Vec::new();
        collect_files(dir, &mut found)?;
        found.sort();
        self.files.extend(found);
        Ok(())
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.record(&p);
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut json = serde_json::to_string_pretty(value).context("serializing JSON")?;
        json.push('\n');
        self.write(rel, json.as_bytes())
    }

    /// Write `manifest.json` listing every recorded file with its hash.
    pub fn write_manifest(&self, command: &str) -> Result<()> {
        let mut entries = Vec::with_capacity(self.files.len());
        for path in &self.files {
            let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
            let rel = path
                .strip_prefix(&self.root)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            entries.push(ManifestEntry {
                path: rel,
                sha256: format!("{:x}", Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        let manifest = Manifest { command: command.to_string(), files: entries };
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        let p = self.root.join("manifest.json");
        fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }

    /// Append one status line to `run.log`; the only place wall-clock time
    /// is allowed to appear.
    pub fn log_run(&self, command: &str, status: &str) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let line = format!("ts={ts} command={command} status={status}\n");
        let _ = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("run.log"))
            .and_then(|mut f| f.write_all(line.as_bytes()));
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_recorded_files_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut outputs = Outputs::new(dir.path().join("run")).unwrap();
        outputs.write("b.txt", b"beta").unwrap();
        outputs.write("sub/a.txt", b"alpha").unwrap();
        outputs.write_manifest("simulate").unwrap();

        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("run/manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["command"], "simulate");
        let files = manifest["files"].as_array().unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(files[0]["path"], "b.txt");
        assert_eq!(files[1]["path"], "sub/a.txt");
        assert_eq!(
            files[1]["sha256"],
            format!("{:x}", Sha256::digest(b"alpha"))
        );
        assert_eq!(files[1]["bytes"], 5);
    }

    #[test]
    fn run_log_appends_and_stays_out_of_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut outputs = Outputs::new(dir.path().to_path_buf()).unwrap();
        outputs.write("x.txt", b"x").unwrap();
        outputs.log_run("fit", "ok");
        outputs.log_run("fit", "error");
        outputs.write_manifest("fit").unwrap();

        let log = fs::read_to_string(dir.path().join("run.log")).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.contains("status=error"));
        let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(!manifest.contains("run.log"));
    }

    #[test]
    fn record_dir_walks_recursively() {
        let dir = tempfile::tempdir().unwrap();
        let mut outputs = Outputs::new(dir.path().to_path_buf()).unwrap();
        let frames = outputs.path("frames/deep/file.pgm").unwrap();
        fs::write(&frames, b"data").unwrap();
        outputs.record_dir(&dir.path().join("frames")).unwrap();
        outputs.write_manifest("image").unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("frames/deep/file.pgm"));
    }
}
