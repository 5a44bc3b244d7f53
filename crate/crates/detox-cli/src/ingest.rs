//! Dataset ingestion: normalize prompt sources into the prompts JSON-lines
//! format and assign a seeded train/test split.

use std::io::BufRead;
use std::path::Path;

use anyhow::{Context, Result};
use detox_chain::record::{PromptRecord, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SourceFormat {
    /// JSON-lines with a `prompt` object carrying `text` and `toxicity`.
    RtpJsonl,
    /// CSV with `comment_text` and a binary `toxic` column.
    JigsawCsv,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IngestStats {
    pub rows: usize,
    pub ingested: usize,
    pub malformed: usize,
    pub train: usize,
    pub test: usize,
}

/// Rows that fail to parse are skipped with a counted warning; more than 10%
/// malformed aborts the ingestion.
const MALFORMED_ABORT_FRACTION: f64 = 0.10;

#[derive(Deserialize)]
struct RtpRow {
    prompt: RtpPrompt,
}

#[derive(Deserialize)]
struct RtpPrompt {
    text: String,
    #[serde(default)]
    toxicity: Option<f64>,
}

pub fn ingest(
    path: &Path,
    format: SourceFormat,
    split_ratio: (u32, u32),
    seed: u64,
) -> Result<(Vec<PromptRecord>, IngestStats)> {
    let mut records = Vec::new();
    let mut rows = 0usize;
    let mut malformed = 0usize;

    match format {
        SourceFormat::RtpJsonl => {
            let file =
                std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            for line in std::io::BufReader::new(file).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                rows += 1;
                match serde_json::from_str::<RtpRow>(&line) {
                    Ok(row) if !row.prompt.text.trim().is_empty() => {
                        let mut record =
                            PromptRecord::new(format!("rtp-{:06}", records.len()), row.prompt.text);
                        record.toxicity = row.prompt.toxicity;
                        records.push(record);
                    }
                    _ => {
                        malformed += 1;
                        log::warn!("skipping malformed row {rows}");
                    }
                }
            }
        }
        SourceFormat::JigsawCsv => {
            let mut reader = csv::Reader::from_path(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let headers = reader.headers()?.clone();
            let text_col = headers
                .iter()
                .position(|h| h == "comment_text")
                .context("no comment_text column")?;
            let toxic_col = headers
                .iter()
                .position(|h| h == "toxic")
                .context("no toxic column")?;
            let id_col = headers.iter().position(|h| h == "id");
            for row in reader.records() {
                rows += 1;
                let Ok(row) = row else {
                    malformed += 1;
                    log::warn!("skipping malformed row {rows}");
                    continue;
                };
                let text = row.get(text_col).unwrap_or("").trim();
                let toxic = row.get(toxic_col).map(str::trim);
                let toxicity = match toxic {
                    Some("0") => 0.0,
                    Some("1") => 1.0,
                    _ => {
                        malformed += 1;
                        log::warn!("skipping row {rows}: non-binary toxic label");
                        continue;
                    }
                };
                if text.is_empty() {
                    malformed += 1;
                    continue;
                }
                let id = id_col
                    .and_then(|c| row.get(c))
                    .filter(|s| !s.is_empty())
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("jigsaw-{:06}", records.len()));
                records.push(PromptRecord::new(id, text).with_toxicity(toxicity));
            }
        }
    }

    if rows > 0 && (malformed as f64 / rows as f64) > MALFORMED_ABORT_FRACTION {
        anyhow::bail!("{malformed} of {rows} rows malformed (> 10%), aborting ingestion");
    }

    let (train, test) = assign_split(&mut records, split_ratio, seed);
    let stats = IngestStats {
        rows,
        ingested: records.len(),
        malformed,
        train,
        test,
    };
    Ok((records, stats))
}

/// Seeded shuffle-then-cut split assignment; membership is deterministic for
/// a fixed seed while the output keeps the input order.
pub fn assign_split(records: &mut [PromptRecord], ratio: (u32, u32), seed: u64) -> (usize, usize) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train_share = ratio.0 as f64 / (ratio.0 + ratio.1) as f64;
    let train_count = ((records.len() as f64) * train_share).round() as usize;
    for (rank, &index) in order.iter().enumerate() {
        records[index].split = Some(if rank < train_count {
            Split::Train
        } else {
            Split::Test
        });
    }
    (train_count, records.len() - train_count)
}
