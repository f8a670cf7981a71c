//! Append-only campaign record log.
//!
//! Line 1 is a JSON header binding the log to one plan (hash), network
//! and dataset; every later line is one completed experiment keyed by
//! its fault. Records are flushed as they complete, so a killed run
//! loses at most the line being written; a truncated trailing line is
//! dropped on resume.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, LineWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inject::FaultSpec;

pub(crate) const BASELINE_KEY: &str = "__baseline__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub plan_hash: String,
    pub net_fingerprint: String,
    pub dataset_len: usize,
    pub planned: u64,
    /// Full plan JSON so a record log is a self-contained result store.
    pub plan: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    key: String,
    correct: u32,
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub header: CheckpointHeader,
    pub baseline: Option<u32>,
    pub records: BTreeMap<FaultSpec, u32>,
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::PlanMismatch(format!("{} is empty", path.display())))??;
    let header: CheckpointHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::PlanMismatch(format!("unreadable checkpoint header: {e}")))?;
    let mut records = BTreeMap::new();
    let mut baseline = None;
    let mut pending_lines = lines.peekable();
    while let Some(line) = pending_lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = match serde_json::from_str(&line) {
            Ok(r) => r,
            // a torn final line is expected after a kill; anything
            // earlier means real corruption
            Err(e) if pending_lines.peek().is_none() => {
                let _ = e;
                break;
            }
            Err(e) => {
                return Err(Error::PlanMismatch(format!(
                    "corrupt checkpoint record in {}: {e}",
                    path.display()
                )))
            }
        };
        if record.key == BASELINE_KEY {
            baseline = Some(record.correct);
        } else {
            records.insert(FaultSpec::parse_key(&record.key)?, record.correct);
        }
    }
    Ok(LoadedCheckpoint {
        header,
        baseline,
        records,
    })
}

/// Serialized single-writer append log.
pub struct CheckpointWriter {
    file: Mutex<LineWriter<File>>,
}

impl CheckpointWriter {
    /// Create a fresh log with its header line.
    pub fn create(path: &Path, header: &CheckpointHeader) -> Result<Self> {
        let mut file = LineWriter::new(File::create(path)?);
        serde_json::to_writer(&mut file, header)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(CheckpointWriter {
            file: Mutex::new(file),
        })
    }

    /// Open an existing log for appending.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(CheckpointWriter {
            file: Mutex::new(LineWriter::new(file)),
        })
    }

    pub fn record(&self, key: &str, correct: u32) -> Result<()> {
        let mut file = self.file.lock().expect("checkpoint writer poisoned");
        serde_json::to_writer(
            &mut *file,
            &Record {
                key: key.to_string(),
                correct,
            },
        )?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(())
    }

    pub fn record_baseline(&self, correct: u32) -> Result<()> {
        self.record(BASELINE_KEY, correct)
    }
}
