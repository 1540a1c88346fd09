use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::manifest::RunManifest;
use crate::Result;

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.as_file().sync_all().context("flushing output")?;
    tmp.persist(&path)
        .with_context(|| format!("moving output into place at {}", path.display()))?;
    Ok(path)
}

/// Collects named outputs, then writes them and the manifest in one go.
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Writes every file plus `<stem>-manifest.json`; returns the paths.
    pub fn commit(self, dir: &Path, stem: &str, mut manifest: RunManifest) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::with_capacity(self.files.len() + 1);
        for (name, bytes) in &self.files {
            manifest.add_output(name, bytes);
            paths.push(write_atomic(dir, name, bytes)?);
        }
        let body = serde_json::to_vec_pretty(&manifest).context("serializing manifest")?;
        paths.push(write_atomic(dir, &format!("{stem}-manifest.json"), &body)?);
        Ok(paths)
    }
}

impl Default for OutputSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Minimal CSV builder; every field this tool writes is a number, a bare
/// identifier or empty, so no quoting is needed.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Self { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.buf, "{}", fields.join(","));
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).context("serializing JSON")?;
    v.push(b'\n');
    Ok(v)
}
