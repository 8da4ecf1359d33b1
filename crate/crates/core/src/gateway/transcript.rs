//! Transcript records: the durable trace of every gateway call.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GatewayError, Role};

/// One request/reply pair. The digest covers (role, template, prompt text)
/// so replay can detect any upstream nondeterminism.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub seq: usize,
    pub role: Role,
    pub template_id: String,
    pub digest: String,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
    pub latency_ms: u64,
    pub prompt_text: String,
    pub reply_text: String,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TranscriptRecord>, GatewayError> {
    let file = fs::File::open(path).map_err(|source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TranscriptRecord =
            serde_json::from_str(&line).map_err(|source| GatewayError::Json {
                path: path.display().to_string(),
                source,
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn append_jsonl(path: &Path, record: &TranscriptRecord) -> Result<(), GatewayError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| GatewayError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let line = serde_json::to_string(record).expect("transcript record serializes");
    writeln!(file, "{line}").map_err(|source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}
