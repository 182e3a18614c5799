//! Append-only prediction store: newline-delimited JSON (one object per
//! line) or a CSV mirror with fixed column order. Every record is written
//! with a single write call, newline included, so a killed process cannot
//! leave a torn line behind.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One disaggregation output for one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub timestamp: f64,
    /// Predicted per-appliance power, watts.
    pub power: Vec<f64>,
    /// ON flags from the classification head.
    pub on: Vec<bool>,
    pub model_digest: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FsyncPolicy {
    PerRecord,
    /// Sync at most once per this many seconds.
    Interval(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreConfig {
    pub path: PathBuf,
    pub format: StoreFormat,
    pub fsync: FsyncPolicy,
}

impl StoreConfig {
    /// Format inferred from the file extension (`.csv` -> CSV, else JSONL).
    pub fn for_path(path: &Path) -> Self {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => StoreFormat::Csv,
            _ => StoreFormat::Jsonl,
        };
        StoreConfig {
            path: path.to_path_buf(),
            format,
            fsync: FsyncPolicy::PerRecord,
        }
    }
}

pub struct PredictionStore {
    file: File,
    config: StoreConfig,
    last_timestamp: Option<f64>,
    last_sync: Instant,
    records_written: usize,
}

fn csv_header(n_appliances: usize) -> String {
    let mut h = String::from("timestamp");
    for k in 1..=n_appliances {
        h.push_str(&format!(",p{k}"));
    }
    for k in 1..=n_appliances {
        h.push_str(&format!(",on{k}"));
    }
    h.push_str(",model_digest,latency_ms\n");
    h
}

impl PredictionStore {
    /// Opens the store for appending; a fresh CSV store gets its header row.
    pub fn open(config: &StoreConfig, n_appliances: usize) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.path)
            .map_err(|e| Error::io(&config.path, e))?;
        let mut store = PredictionStore {
            file,
            config: config.clone(),
            last_timestamp: None,
            last_sync: Instant::now(),
            records_written: 0,
        };
        if store.config.format == StoreFormat::Csv {
            let len = store
                .file
                .metadata()
                .map_err(|e| Error::io(&store.config.path, e))?
                .len();
            if len == 0 {
                store.write_line(&csv_header(n_appliances))?;
            }
        }
        Ok(store)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.config.path, e))
    }

    pub fn append(&mut self, record: &PredictionRecord) -> Result<()> {
        if let Some(last) = self.last_timestamp {
            if record.timestamp <= last {
                return Err(Error::Validation(format!(
                    "store requires strictly increasing timestamps: {} after {last}",
                    record.timestamp
                )));
            }
        }
        let mut line = match self.config.format {
            StoreFormat::Jsonl => serde_json::to_string(record)?,
            StoreFormat::Csv => {
                let mut row = format!("{}", record.timestamp);
                for p in &record.power {
                    row.push_str(&format!(",{p}"));
                }
                for on in &record.on {
                    row.push_str(if *on { ",1" } else { ",0" });
                }
                row.push_str(&format!(",{},{}", record.model_digest, record.latency_ms));
                row
            }
        };
        line.push('\n');
        self.write_line(&line)?;
        self.last_timestamp = Some(record.timestamp);
        self.records_written += 1;
        match self.config.fsync {
            FsyncPolicy::PerRecord => self.sync()?,
            FsyncPolicy::Interval(secs) => {
                if self.last_sync.elapsed().as_secs_f64() >= secs {
                    self.sync()?;
                }
            }
        }
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file
            .sync_data()
            .map_err(|e| Error::io(&self.config.path, e))?;
        self.last_sync = Instant::now();
        Ok(())
    }

    pub fn records_written(&self) -> usize {
        self.records_written
    }
}

/// Reads a complete store back. Parsing is strict: a torn or malformed line
/// is an error, since the writer guarantees whole-line appends.
pub fn read_store(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::Validation(format!(
            "{}: torn trailing record (missing newline)",
            path.display()
        )));
    }
    let mut lines = text.lines().peekable();
    let is_csv = lines.peek().is_some_and(|l| l.starts_with("timestamp"));
    let mut out = Vec::new();
    if is_csv {
        let header = lines.next().unwrap();
        let n_app = header.split(',').filter(|c| c.starts_with('p')).count();
        for (idx, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + 2 * n_app + 2 {
                return Err(Error::Validation(format!(
                    "{}: row {idx} has {} fields, expected {}",
                    path.display(),
                    fields.len(),
                    1 + 2 * n_app + 2
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Validation(format!("{}: bad number `{s}`", path.display())))
            };
            out.push(PredictionRecord {
                timestamp: parse(fields[0])?,
                power: fields[1..1 + n_app]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<_>>()?,
                on: fields[1 + n_app..1 + 2 * n_app]
                    .iter()
                    .map(|s| *s == "1")
                    .collect(),
                model_digest: fields[1 + 2 * n_app].to_string(),
                latency_ms: parse(fields[2 + 2 * n_app])?,
            });
        }
    } else {
        for line in lines {
            out.push(serde_json::from_str(line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64) -> PredictionRecord {
        PredictionRecord {
            timestamp: t,
            power: vec![50.0, 7.5],
            on: vec![true, false],
            model_digest: "abc123".to_string(),
            latency_ms: 1.25,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let cfg = StoreConfig::for_path(&path);
        let mut store = PredictionStore::open(&cfg, 2).unwrap();
        for k in 0..5 {
            store.append(&record(k as f64 * 5.0)).unwrap();
        }
        let back = read_store(&path).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back[2], record(10.0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.csv");
        let cfg = StoreConfig::for_path(&path);
        assert_eq!(cfg.format, StoreFormat::Csv);
        let mut store = PredictionStore::open(&cfg, 2).unwrap();
        for k in 0..3 {
            store.append(&record(k as f64)).unwrap();
        }
        let back = read_store(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].power, vec![50.0, 7.5]);
        assert_eq!(back[0].on, vec![true, false]);
        assert_eq!(back[0].model_digest, "abc123");
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = PredictionStore::open(&StoreConfig::for_path(&path), 2).unwrap();
        store.append(&record(5.0)).unwrap();
        assert!(store.append(&record(5.0)).is_err());
        assert!(store.append(&record(4.0)).is_err());
        assert_eq!(store.records_written(), 1);
    }

    #[test]
    fn torn_trailing_line_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = PredictionStore::open(&StoreConfig::for_path(&path), 2).unwrap();
        store.append(&record(1.0)).unwrap();
        // Simulate a torn write.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"timestamp\":2.0,\"power\":[1");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_store(&path), Err(Error::Validation(_))));
    }
}
