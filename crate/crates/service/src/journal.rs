//! Append-only session journal.
//!
//! One JSON object per line, tagged by `type`, each carrying the format
//! version `v`. A session is rebuilt by replaying its records in order.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use infotuple::metrics::MetricSample;
use infotuple::selection::SelectionConfig;
use infotuple::{ItemId, TupleQuery};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const JOURNAL_VERSION: u32 = 1;
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SNAPSHOT_FILE: &str = "embedding.txt";

/// Work item that produced a fresh query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// A fixed query: part of the burn-in schedule, or a burn-in query reissued
    /// after its batch was discarded.
    BurnIn { query: TupleQuery },
    /// Adaptive selection for `head` in `round`; `attempt` counts reissues.
    Select {
        round: usize,
        head: ItemId,
        attempt: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Record {
    Created {
        v: u32,
        session_id: String,
        catalog_id: String,
        batch_size: usize,
        config: SelectionConfig,
    },
    Issued {
        v: u32,
        query_id: String,
        seq: u64,
        /// Canonical form: the body in ascending id order.
        query: TupleQuery,
        presented: Vec<ItemId>,
        batch: usize,
        position: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        repeat_of: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<Task>,
    },
    Response {
        v: u32,
        query_id: String,
        ranking: Vec<ItemId>,
        elapsed_seconds: f64,
        timestamp: f64,
    },
    Refit {
        v: u32,
        /// Validated responses the fit covered.
        valid_responses: usize,
        metric: MetricSample,
    },
}

impl Record {
    pub fn version(&self) -> u32 {
        match self {
            Record::Created { v, .. }
            | Record::Issued { v, .. }
            | Record::Response { v, .. }
            | Record::Refit { v, .. } => *v,
        }
    }
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if needed) the journal in `dir` for appending.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(JOURNAL_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one record and flushes it to the OS before returning.
    pub fn append(&mut self, record: &Record) -> Result<(), ServiceError> {
        let mut line =
            serde_json::to_vec(record).map_err(|e| ServiceError::Journal(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

/// Reads every record of a journal file, rejecting unknown versions.
pub fn read_journal(path: &Path) -> Result<Vec<Record>, ServiceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| ServiceError::Journal(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if record.version() != JOURNAL_VERSION {
            return Err(ServiceError::Journal(format!(
                "{}:{}: unsupported journal version {}",
                path.display(),
                i + 1,
                record.version()
            )));
        }
        out.push(record);
    }
    Ok(out)
}
