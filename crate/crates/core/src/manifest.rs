//! Run manifest written next to every command's outputs: a flat
//! `key = value` text file with SHA-256 digests of the inputs.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_digest: String,
    /// `(label, path, digest)` per input file or directory.
    pub inputs: Vec<(String, String, String)>,
    pub seed: u64,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_text: &str, seed: u64) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_digest: digest_bytes(config_text.as_bytes()),
            inputs: Vec::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, label: &str, path: &Path) -> Result<()> {
        let digest = digest_path(path)?;
        self.inputs
            .push((label.to_string(), path.display().to_string(), digest));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("subcommand = {}\n", self.subcommand));
        out.push_str(&format!("version = {}\n", self.version));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("config_sha256 = {}\n", self.config_digest));
        for (label, path, digest) in &self.inputs {
            out.push_str(&format!("input.{label} = {path}\n"));
            out.push_str(&format!("input.{label}.sha256 = {digest}\n"));
        }
        out.push_str(&format!("wall_clock_seconds = {:.3}\n", self.wall_clock_seconds));
        for (i, o) in self.outputs.iter().enumerate() {
            out.push_str(&format!("output.{i} = {o}\n"));
        }
        out
    }

    /// Writes the manifest into `dir`, listing every other file found there.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        let mut files = list_files(dir)?;
        files.retain(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE));
        self.outputs = files
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect();
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Format {
            file: MANIFEST_FILE.into(),
            message: format!("line {} is not `key = value`", i + 1),
        })?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file, or of a directory's relative paths and contents in
/// sorted order.
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut h = Sha256::new();
        for f in list_files(path)? {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(digest_bytes(&bytes))
    }
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
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
