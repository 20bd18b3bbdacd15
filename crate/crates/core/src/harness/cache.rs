//! Append-only JSON-lines score cache, one file per config digest.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Label, SampleRecord, ScoreRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheLine {
    pub sample_id: String,
    pub path: String,
    pub similarity: f64,
    pub label: Label,
    pub generator: String,
}

impl CacheLine {
    pub fn new(sample: &SampleRecord, similarity: f64) -> Self {
        Self {
            sample_id: sample.id.clone(),
            path: sample.path.clone(),
            similarity,
            label: sample.label,
            generator: sample.generator.clone(),
        }
    }

    fn matches(&self, sample: &SampleRecord) -> bool {
        self.path == sample.path && self.label == sample.label && self.generator == sample.generator
    }
}

/// Cached similarities for one config digest.
#[derive(Debug)]
pub struct ScoreCache {
    path: PathBuf,
    entries: HashMap<String, CacheLine>,
    torn_tail: bool,
}

impl ScoreCache {
    pub fn file_for(cache_dir: &Path, digest: &str) -> PathBuf {
        cache_dir.join(format!("{digest}.jsonl"))
    }

    /// Loads whatever is already on disk. A truncated trailing line (from an
    /// interrupted run) is ignored; later lines win over earlier ones.
    pub fn open(cache_dir: &Path, digest: &str) -> Result<Self> {
        std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
        let path = Self::file_for(cache_dir, digest);
        let mut entries = HashMap::new();
        let mut torn_tail = false;
        if path.is_file() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            torn_tail = !text.is_empty() && !text.ends_with('\n');
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(line) {
                    Ok(entry) => {
                        entries.insert(entry.sample_id.clone(), entry);
                    }
                    Err(e) => log::warn!("{}: skipping unreadable line {}: {e}", path.display(), n + 1),
                }
            }
        }
        Ok(Self {
            path,
            entries,
            torn_tail,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached record for `sample`, provided it still points at the same file.
    pub fn get(&self, sample: &SampleRecord) -> Option<ScoreRecord> {
        self.entries
            .get(&sample.id)
            .filter(|e| e.matches(sample))
            .map(|e| ScoreRecord::new(sample, e.similarity))
    }

    pub fn writer(&self) -> Result<CacheWriter> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut writer = CacheWriter {
            path: self.path.clone(),
            file,
        };
        if self.torn_tail {
            writer.write_raw(b"\n")?;
        }
        Ok(writer)
    }
}

/// Single appender; each line is written and flushed whole.
#[derive(Debug)]
pub struct CacheWriter {
    path: PathBuf,
    file: File,
}

impl CacheWriter {
    pub fn append(&mut self, line: &CacheLine) -> Result<()> {
        let mut text = serde_json::to_string(line)?;
        text.push('\n');
        self.write_raw(text.as_bytes())
    }

    fn write_raw(&mut self, bytes: &[u8]) -> Result<()> {
        self.file
            .write_all(bytes)
            .and_then(|()| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
