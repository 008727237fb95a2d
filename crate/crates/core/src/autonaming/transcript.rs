use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{Phase, VlmRequest};

/// One model exchange, stored as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub neuron_id: usize,
    pub phase: Phase,
    pub sample_index: Option<usize>,
    /// Hex SHA-256 of the exact request bytes.
    pub request_digest: String,
    pub request: serde_json::Value,
    /// `None` when no response arrived.
    pub response: Option<String>,
    /// Interpreted answer: concept text, yes/no boolean, or null.
    pub parsed: serde_json::Value,
}

impl TranscriptRecord {
    /// Re-encodes `request` and checks it against `request_digest`.
    pub fn digest_matches(&self) -> bool {
        let bytes = serde_json::to_vec(&self.request).expect("value serializes");
        super::request::hex_digest(&bytes) == self.request_digest
    }
}

/// Append-only JSONL transcript shared across threads.
pub struct TranscriptWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl TranscriptWriter {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(
        &self,
        request: &VlmRequest,
        response: Option<&str>,
        parsed: serde_json::Value,
    ) -> std::io::Result<()> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let record = TranscriptRecord {
            timestamp,
            neuron_id: request.probe.neuron_id,
            phase: request.probe.phase,
            sample_index: request.probe.sample_index,
            request_digest: request.digest(),
            request: serde_json::to_value(request).expect("request serializes"),
            response: response.map(str::to_string),
            parsed,
        };
        let mut line = serde_json::to_vec(&record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let mut f = self.file.lock().expect("transcript mutex");
        f.write_all(&line)?;
        f.flush()
    }

    pub fn read_all(path: &Path) -> std::io::Result<Vec<TranscriptRecord>> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
        }
        Ok(out)
    }
}
