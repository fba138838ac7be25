//! Output directories are assembled in a hidden sibling and renamed into
//! place once the command succeeds, together with `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ecoglc_core::io::{file_sha256, write_atomic};

use crate::config::RunConfig;
use crate::{Command, UsageError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "run-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
    if found != MANIFEST_SCHEMA {
        return Err(ecoglc_core::Error::Schema { expected: MANIFEST_SCHEMA.into(), found: found.into() }.into());
    }
    Ok(serde_json::from_value(value)?)
}

/// Relative paths and hashes of every file under `root`, sorted.
pub fn hash_tree(root: &Path) -> Result<Vec<FileHash>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<FileHash>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if rel != MANIFEST_FILE {
                    out.push(FileHash { path: rel, sha256: file_sha256(&path)? });
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Identifies an input: a file by its hash, a directory by the hash of its
/// manifest (or of its file listing when it has none).
pub fn hash_input(path: &Path) -> Result<FileHash> {
    let shown = path.display().to_string();
    if path.is_file() {
        return Ok(FileHash { path: shown, sha256: file_sha256(path)? });
    }
    let manifest = path.join(MANIFEST_FILE);
    if manifest.is_file() {
        return Ok(FileHash { path: shown, sha256: file_sha256(&manifest)? });
    }
    if !path.exists() {
        return Err(UsageError(format!("input {shown} does not exist")).into());
    }
    let listing = serde_json::to_vec(&hash_tree(path)?)?;
    Ok(FileHash { path: shown, sha256: ecoglc_core::io::sha256_hex(&listing) })
}

/// A partially written output directory.
pub struct Staging {
    tmp: PathBuf,
    out: PathBuf,
    done: bool,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Staging> {
        if out.exists() {
            let foreign = out.is_file()
                || (fs::read_dir(out)?.next().is_some() && !out.join(MANIFEST_FILE).is_file());
            if foreign {
                return Err(UsageError(format!(
                    "{} exists and is not an output directory; refusing to overwrite",
                    out.display()
                ))
                .into());
            }
        }
        let name = out.file_name().ok_or_else(|| UsageError(format!("invalid output path {}", out.display())))?;
        let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Staging { tmp, out: out.to_path_buf(), done: false })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    /// Writes the manifest and moves the directory into place.
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = hash_tree(&self.tmp)?;
        write_atomic(&self.tmp.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
        if self.out.exists() {
            fs::remove_dir_all(&self.out)?;
        }
        fs::rename(&self.tmp, &self.out)?;
        self.done = true;
        Ok(manifest)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
