use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Artifact directory that remembers what it created, so a failed run can be
/// rolled back, and hashes every file for the manifest.
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    dirs: Vec<PathBuf>,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        let created_root = !root.exists();
        fs::create_dir_all(root).map_err(|source| CliError::Output {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            created_root,
            dirs: Vec::new(),
            files: BTreeMap::new(),
        })
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            if !parent.exists() {
                fs::create_dir_all(parent).map_err(|source| CliError::Output {
                    path: parent.to_path_buf(),
                    source,
                })?;
                self.dirs.push(parent.to_path_buf());
            }
        }
        // recorded before writing so a half-written file is rolled back too
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        fs::write(&path, bytes).map_err(|source| CliError::Output { path, source })
    }

    /// Buffers whatever `f` writes and stores it under `rel`.
    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> wavetrack::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(rel, &buf)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(wavetrack::Error::from)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    /// Writes `manifest.json` listing every artifact with its hash.
    pub fn finish(&mut self, command: &str, config_sha256: String, inputs: BTreeMap<String, String>) -> Result<(), CliError> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256,
            inputs,
            files: self.files.clone(),
        };
        self.write_json("manifest.json", &manifest)
    }

    /// Removes everything this run created.
    pub fn rollback(self) {
        for rel in self.files.keys() {
            let _ = fs::remove_file(self.root.join(rel));
        }
        for dir in self.dirs.iter().rev() {
            let _ = fs::remove_dir(dir);
        }
        if self.created_root {
            let _ = fs::remove_dir(&self.root);
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_sha256: String,
    /// Input file name → sha256.
    inputs: BTreeMap<String, String>,
    files: BTreeMap<String, String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rollback_removes_created_files() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let mut out = OutputDir::create(&root).unwrap();
        out.write_bytes("a.txt", b"a").unwrap();
        out.write_bytes("sub/b.txt", b"b").unwrap();
        assert!(root.join("sub/b.txt").is_file());
        out.rollback();
        assert!(!root.exists());
    }

    #[test]
    fn rollback_keeps_foreign_files() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("keep.txt"), b"x").unwrap();
        let mut out = OutputDir::create(tmp.path()).unwrap();
        out.write_bytes("a.txt", b"a").unwrap();
        out.rollback();
        assert!(tmp.path().join("keep.txt").is_file());
        assert!(!tmp.path().join("a.txt").exists());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
