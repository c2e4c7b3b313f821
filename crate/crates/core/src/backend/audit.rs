//! JSONL audit log of every backend exchange.
//!
//! Entries carry no wall-clock fields, so two runs over the same inputs
//! produce byte-identical logs and diff cleanly.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::Serialize;

use super::GenerationRequest;

#[derive(Debug, Serialize)]
pub struct AuditEntry<'a> {
    pub model_id: &'a str,
    pub cache_key: &'a str,
    pub sample_index: u32,
    pub from_cache: bool,
    pub request: &'a GenerationRequest,
    pub response_text: &'a str,
    pub response_tokens: usize,
}

pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    /// Opens the log for appending, creating it if needed.
    pub fn open(path: &Path) -> io::Result<AuditLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog { file: Mutex::new(file) })
    }

    /// Appends one entry as a single JSON line. Failures are logged
    /// rather than propagated: auditing must never fail a run.
    pub fn record(&self, entry: &AuditEntry<'_>) {
        let line = match serde_json::to_string(entry) {
            Ok(line) => line,
            Err(e) => {
                log::warn!("audit entry not serializable: {e}");
                return;
            }
        };
        let mut file = self.file.lock().expect("audit lock");
        if let Err(e) = writeln!(file, "{line}") {
            log::warn!("audit write failed: {e}");
        }
    }
}
