use std::fs;
use std::path::{Path, PathBuf};

use mpfa_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Artifact directory. Every file written through it is listed in the
/// manifest with its hash; `timing.json` is listed without one because wall
/// clock differs between otherwise identical runs.
pub struct OutDir {
    root: PathBuf,
    run_config: serde_json::Value,
    files: Vec<(String, Option<(String, usize)>)>,
}

pub const TIMING_FILE: &str = "timing.json";
pub const MANIFEST_FILE: &str = "manifest.json";

impl OutDir {
    pub fn create(root: &Path, run_config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), run_config, files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn run_config(&self) -> &serde_json::Value {
        &self.run_config
    }

    fn record(&mut self, name: &str, bytes: &[u8], hashed: bool) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        let hash = hashed.then(|| (hex::encode(Sha256::digest(bytes)), bytes.len()));
        self.files.retain(|f| f.0 != name);
        self.files.push((name.to_string(), hash));
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.record(name, bytes, true)
    }

    /// Writes `{"run_config": ..., <key>: value}` as pretty JSON.
    pub fn write_json<T: Serialize>(&mut self, name: &str, key: &str, value: &T) -> Result<()> {
        let mut doc = serde_json::Map::new();
        doc.insert("run_config".into(), self.run_config.clone());
        doc.insert(key.into(), serde_json::to_value(value)?);
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes a CSV whose first line is a `# run_config=` comment.
    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut text = format!("# run_config={}\n{header}\n", self.run_config);
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_timing(&mut self, command: &str, seconds: f64) -> Result<()> {
        let text = serde_json::to_string_pretty(&serde_json::json!({ "command": command, "seconds": seconds }))?;
        self.record(TIMING_FILE, text.as_bytes(), false)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.files.sort();
        let files: Vec<_> = self
            .files
            .iter()
            .map(|(name, hash)| match hash {
                Some((h, n)) => serde_json::json!({ "file": name, "sha256": h, "bytes": n }),
                None => serde_json::json!({ "file": name, "sha256": null, "bytes": null }),
            })
            .collect();
        let doc = serde_json::json!({ "run_config": self.run_config, "files": files });
        let path = self.path(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(path)
    }
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}
