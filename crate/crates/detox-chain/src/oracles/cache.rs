//! Memoizing cache for toxicity oracles.
//!
//! The hosted scorer is rate-limited and billed, so a wrapped oracle is
//! called at most once per distinct text per run. The cache can persist to
//! disk keyed by a content hash of the raw text bytes (scoring services are
//! case and punctuation sensitive, so no normalization is applied), making
//! re-runs free. Cache I/O failures degrade to pass-through with a warning.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OracleError, ToxicityOracle};

#[derive(Debug, Serialize, Deserialize)]
struct CacheRow {
    hash: String,
    text_len: usize,
    score: f64,
}

/// A toxicity oracle memoized by exact text key.
pub struct CachedToxicity<T> {
    inner: T,
    entries: Mutex<HashMap<String, f64>>,
    disk: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

/// Wraps an oracle with an in-memory cache.
pub fn cached<T: ToxicityOracle>(oracle: T) -> CachedToxicity<T> {
    CachedToxicity {
        inner: oracle,
        entries: Mutex::new(HashMap::new()),
        disk: None,
        path: None,
    }
}

fn content_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl<T: ToxicityOracle> CachedToxicity<T> {
    /// Attaches a JSON-lines cache file of `{"hash","text_len","score"}`
    /// rows. Existing rows are loaded; new scores are appended. Failures
    /// leave the cache memory-only.
    pub fn with_disk(mut self, path: impl AsRef<Path>) -> Self {
        let path = path.as_ref().to_path_buf();
        match load_rows(&path) {
            Ok(rows) => {
                let mut entries = self.entries.lock().unwrap();
                for row in rows {
                    entries.insert(row.hash, row.score);
                }
            }
            Err(err) => {
                log::warn!("toxicity cache at {} unreadable: {err}", path.display());
            }
        }
        match OpenOptions::new().create(true).append(true).open(&path) {
            Ok(file) => {
                self.disk = Some(Mutex::new(file));
                self.path = Some(path);
            }
            Err(err) => {
                log::warn!(
                    "toxicity cache at {} not writable, running pass-through: {err}",
                    path.display()
                );
            }
        }
        self
    }

    /// Number of cached entries.
    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn persist(&self, hash: &str, text_len: usize, score: f64) {
        let Some(disk) = &self.disk else { return };
        let row = CacheRow {
            hash: hash.to_string(),
            text_len,
            score,
        };
        let line = serde_json::to_string(&row).expect("cache row serializes");
        let mut file = disk.lock().unwrap();
        if let Err(err) = writeln!(file, "{line}") {
            log::warn!("toxicity cache append failed, continuing pass-through: {err}");
        }
    }
}

fn load_rows(path: &Path) -> std::io::Result<Vec<CacheRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CacheRow>(&line) {
            Ok(row) => rows.push(row),
            Err(err) => log::warn!("skipping corrupt cache row: {err}"),
        }
    }
    Ok(rows)
}

impl<T: ToxicityOracle> ToxicityOracle for CachedToxicity<T> {
    fn score(&self, text: &str) -> Result<f64, OracleError> {
        let hash = content_hash(text);
        // Hold the lock across the backend call so concurrent callers ask
        // the backend at most once per distinct text. The backend is
        // rate-limited to about one call per second anyway, so the
        // serialization costs nothing in practice.
        let mut entries = self.entries.lock().unwrap();
        if let Some(score) = entries.get(&hash) {
            return Ok(*score);
        }
        let score = self.inner.score(text)?;
        entries.insert(hash.clone(), score);
        drop(entries);
        self.persist(&hash, text.len(), score);
        Ok(score)
    }
}
