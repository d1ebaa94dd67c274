//! Append-only metric log with CSV and JSON serialization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExperimentLog {
    records: Vec<LogRecord>,
}

impl ExperimentLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, metric: impl Into<String>, value: f64) {
        debug_assert!(
            self.records.last().map_or(true, |r| r.step <= step),
            "log steps must be monotone"
        );
        self.records.push(LogRecord {
            step,
            metric: metric.into(),
            value,
        });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Values of one metric in step order.
    pub fn series(&self, metric: &str) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.step, r.value))
            .collect()
    }

    pub fn last(&self, metric: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.metric == metric).map(|r| r.value)
    }

    /// Appends another log, prefixing its metric names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ExperimentLog) {
        for r in &other.records {
            self.records.push(LogRecord {
                step: r.step,
                metric: format!("{prefix}{}", r.metric),
                value: r.value,
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,metric,value\n");
        for r in &self.records {
            // Display for f64 is the shortest round-tripping decimal.
            writeln!(s, "{},{},{}", r.step, r.metric, r.value).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `{dir}/{experiment}-{seed}.csv` and the matching `.json`.
    pub fn write_files(&self, dir: &Path, experiment: &str, seed: u64) -> Result<()> {
        crate::checkpoint::write_atomic(&dir.join(format!("{experiment}-{seed}.csv")), self.to_csv().as_bytes())?;
        crate::checkpoint::write_atomic(&dir.join(format!("{experiment}-{seed}.json")), self.to_json()?.as_bytes())?;
        Ok(())
    }
}
