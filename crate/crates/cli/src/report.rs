//! Line-oriented reports.
//!
//! A `#` header block carries the tool version, the command, one timestamp
//! line, the seed, the resolved config and the column order of each record
//! type. Records follow as comma-separated lines whose first field names the
//! record type. Apart from the timestamp line, a report depends only on the
//! resolved config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{CliError, Result};

pub const TIMESTAMP_PREFIX: &str = "# timestamp ";

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    command: &'static str,
    seed: Option<u64>,
    config: Vec<(String, String)>,
    columns: Vec<(&'static str, String)>,
    records: Vec<String>,
}

impl Report {
    pub fn new(command: &'static str, seed: Option<u64>, config: Vec<(String, String)>) -> Self {
        Self { command, seed, config, columns: Vec::new(), records: Vec::new() }
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    /// Declares the column order of a record type.
    pub fn columns(&mut self, record: &'static str, columns: &str) {
        self.columns.push((record, columns.to_string()));
    }

    pub fn push(&mut self, record: String) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[String] {
        &self.records
    }

    pub fn render(&self, timestamp: u64) -> String {
        let mut out = format!("# tool obsprune {}\n# command {}\n", env!("CARGO_PKG_VERSION"), self.command);
        out.push_str(&format!("{TIMESTAMP_PREFIX}{timestamp}\n"));
        match self.seed {
            Some(s) => out.push_str(&format!("# seed {s}\n")),
            None => out.push_str("# seed none\n"),
        }
        for (k, v) in &self.config {
            out.push_str(&format!("# config {k}={v}\n"));
        }
        for (record, cols) in &self.columns {
            out.push_str(&format!("# columns {record}={cols}\n"));
        }
        for r in &self.records {
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    /// Writes `<out_dir>/<command>.report` stamped with the current time.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir).map_err(|source| CliError::Io { path: out_dir.to_path_buf(), source })?;
        let path = out_dir.join(format!("{}.report", self.command));
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        fs::write(&path, self.render(now)).map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

/// The report text without its timestamp line.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(TIMESTAMP_PREFIX))
        .map(|l| format!("{l}\n"))
        .collect()
}
