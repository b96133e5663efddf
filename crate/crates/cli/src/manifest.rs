//! Run manifests: what a command read, what it wrote, and the digests that
//! let later commands detect modified artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub artifacts: Vec<FileDigest>,
    /// Digest of everything above; unchanged by re-running with the same inputs.
    pub digest: String,
    pub started: String,
    pub finished: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let p = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Digest of one input path; directories hash their files in sorted order.
pub fn digest_input(path: &Path) -> Result<FileDigest> {
    let sha256 = if path.is_dir() {
        let mut h = Sha256::new();
        for f in files_under(path)? {
            h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
            h.update(sha256_file(&f)?.as_bytes());
        }
        hex::encode(h.finalize())
    } else {
        sha256_file(path)?
    };
    Ok(FileDigest { path: path.display().to_string(), sha256 })
}

pub struct ManifestBuilder {
    command: String,
    config: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    started: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self { command: command.into(), config: BTreeMap::new(), seeds: BTreeMap::new(), inputs: Vec::new(), started: now() }
    }

    pub fn config_kv(mut self, kv: &str) -> Self {
        for line in kv.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.config.insert(k.trim().into(), v.trim().into());
            }
        }
        self
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_input(path)?);
        Ok(())
    }

    /// Lists every file under `out` and writes the manifest there.
    pub fn finish(self, out: &Path) -> Result<RunManifest> {
        let mut artifacts = Vec::new();
        for f in files_under(out)? {
            let rel = f.strip_prefix(out).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            artifacts.push(FileDigest { path: rel, sha256: sha256_file(&f)? });
        }
        let mut m = RunManifest {
            command: self.command,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            artifacts,
            digest: String::new(),
            started: self.started,
            finished: now(),
        };
        m.digest = m.content_digest()?;
        let path = out.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(m)
    }
}

impl RunManifest {
    pub fn content_digest(&self) -> Result<String> {
        let body = serde_json::to_vec(&(&self.command, &self.config, &self.seeds, &self.inputs, &self.artifacts))?;
        Ok(hex::encode(Sha256::digest(body)))
    }

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    /// Checks every listed artifact under `dir` against its recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = dir.join(&a.path);
            let found = sha256_file(&path)?;
            if found != a.sha256 {
                return Err(CliError::Digest { path, expected: a.sha256.clone(), found });
            }
        }
        Ok(())
    }
}

/// Verifies the manifest governing `path`: the one in `path` itself when it
/// is a directory, else the nearest one in an ancestor directory.
pub fn verify_upstream(path: &Path) -> Result<()> {
    let start = if path.is_dir() { Some(path) } else { path.parent() };
    for dir in start.into_iter().flat_map(Path::ancestors).take(3) {
        let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
        if let Some(m) = RunManifest::read(dir)? {
            log::debug!("verifying {} against {}", path.display(), dir.join(MANIFEST_FILE).display());
            return m.verify(dir);
        }
    }
    Ok(())
}
