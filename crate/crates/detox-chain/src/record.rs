//! Prompt records: the unit of input flowing through the pipeline.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default train:test split ratio applied at ingestion.
pub const DEFAULT_SPLIT_RATIO: (u32, u32) = (9, 1);

/// Train/test membership assigned at ingestion time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One input text with optional gold toxicity and split tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toxicity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            toxicity: None,
            split: None,
        }
    }

    pub fn with_toxicity(mut self, toxicity: f64) -> Self {
        self.toxicity = Some(toxicity);
        self
    }
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Reads a JSON-lines stream, one `T` per non-empty line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Writes items as JSON-lines, one object per line.
pub fn write_jsonl<T: Serialize>(
    mut writer: impl Write,
    items: impl IntoIterator<Item = T>,
) -> Result<(), JsonlError> {
    for item in items {
        let line = serde_json::to_string(&item).expect("serializable item");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
