use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use manifold_core::{Error, Result};
use serde::{Deserialize, Serialize};
use tempfile::TempDir;

use crate::commands::Invocation;

pub const MANIFEST: &str = "manifest.json";

/// Everything needed to repeat a run, plus what it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub invocation: Invocation,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn file_error(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Output directory under construction. Files land in a hidden sibling
/// directory that is renamed into place by `commit`; dropping without a
/// commit removes it.
pub struct Staging {
    dir: TempDir,
    target: PathBuf,
    artifacts: Vec<String>,
    started: Instant,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            return Err(Error::Config(format!("output {} already exists", target.display())));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| file_error(&parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".manifold-staging-")
            .tempdir_in(&parent)
            .map_err(|e| file_error(&parent, e))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Absolute path of `rel` inside the staging area, registering it as an
    /// artifact and creating its parent directories.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.path().join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| file_error(parent, e))?;
        }
        if !self.artifacts.iter().any(|a| a == rel) {
            self.artifacts.push(rel.to_string());
        }
        Ok(p)
    }

    pub fn dir(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.path().join(rel);
        fs::create_dir_all(&p).map_err(|e| file_error(&p, e))?;
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).map_err(|e| file_error(&p, e))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn jsonl(&mut self, rel: &str) -> Result<JsonLines> {
        let p = self.path(rel)?;
        let file = fs::File::create(&p).map_err(|e| file_error(&p, e))?;
        Ok(JsonLines {
            out: std::io::BufWriter::new(file),
            path: p,
        })
    }

    pub fn commit(mut self, seed: u64, invocation: Invocation) -> Result<PathBuf> {
        self.artifacts.sort();
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            invocation,
            artifacts: self.artifacts.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.write_json(MANIFEST, &manifest)?;
        let staged = self.dir.keep();
        if let Err(e) = fs::rename(&staged, &self.target) {
            let _ = fs::remove_dir_all(&staged);
            return Err(file_error(&self.target, e));
        }
        Ok(self.target)
    }
}

/// Line-delimited JSON records.
pub struct JsonLines {
    out: std::io::BufWriter<fs::File>,
    path: PathBuf,
}

impl JsonLines {
    pub fn record<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value).expect("plain data serializes");
        writeln!(self.out, "{line}").map_err(|e| file_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| file_error(&self.path, e))
    }
}
