//! Write-once output files and the run manifest.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest round-trip decimal form; `.` separator regardless of locale.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    /// Creates the output directory; refuses to reuse one that already holds a manifest.
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
        if dir.join(MANIFEST).exists() {
            return Err(CliError::Usage(format!("{} already holds a run; choose a fresh --out", dir.display())));
        }
        Ok(Artifacts { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let err = |source| CliError::Write { path: path.clone(), source };
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(err)?;
        f.write_all(bytes).map_err(err)?;
        self.files.push(FileEntry { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let wrap = |e: csv::Error| CliError::Artifact { path: PathBuf::from(name), message: e.to_string() };
        w.write_record(header).map_err(wrap)?;
        for row in rows {
            w.write_record(&row).map_err(wrap)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Artifact { path: PathBuf::from(name), message: e.to_string() })?;
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Artifact { path: PathBuf::from(name), message: e.to_string() })?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, mut manifest: serde_json::Map<String, Value>) -> Result<Vec<FileEntry>, CliError> {
        let files = serde_json::to_value(&self.files).expect("file entries serialize");
        manifest.insert("files".into(), files);
        let mut text = serde_json::to_string_pretty(&Value::Object(manifest)).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        let err = |source| CliError::Write { path: path.clone(), source };
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(err)?;
        f.write_all(text.as_bytes()).map_err(err)?;
        Ok(self.files)
    }
}
