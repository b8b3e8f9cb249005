//! Append-only JSON-lines metric streams.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use super::{with_path, IoError};

/// One flat record. Keys serialise in sorted order, so equal records give equal lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record(pub BTreeMap<String, Value>);

impl Record {
    pub fn new(kind: &str) -> Self {
        let mut m = BTreeMap::new();
        m.insert("kind".to_string(), Value::from(kind));
        Self(m)
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn kind(&self) -> Option<&str> {
        self.0.get("kind").and_then(Value::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(Value::as_f64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(Value::as_str)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.0).expect("string keys always serialise")
    }

    pub fn from_line(line: &str) -> Result<Self, IoError> {
        serde_json::from_str(line).map(Record).map_err(|e| IoError::Metrics(e.to_string()))
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Opens `path` for appending, creating it if needed.
    pub fn append(path: &Path) -> Result<Self, IoError> {
        let file = with_path(path, OpenOptions::new().create(true).append(true).open(path))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &Record) -> Result<(), IoError> {
        writeln!(self.out, "{}", record.to_line())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), IoError> {
        self.out.flush()?;
        Ok(())
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, IoError> {
    let file = with_path(path, File::open(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(Record::from_line(&line)?);
        }
    }
    Ok(out)
}

pub fn summaries(records: &[Record]) -> impl Iterator<Item = &Record> {
    records.iter().filter(|r| r.kind() == Some("summary"))
}
