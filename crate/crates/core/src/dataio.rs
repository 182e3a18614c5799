//! Dataset schema, CSV read/write, validation/cleaning, time-grid alignment
//! and interval-based train/validation/test splitting.
//!
//! The on-disk format is plain CSV with a fixed header:
//!
//! ```text
//! timestamp,main_v,main_i,main_p,l1_v,l1_i,l1_p,...,lN_v,lN_i,lN_p,spurious
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a write
//! followed by a read reproduces every value exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One reading of a single load line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineReading {
    pub v: f64,
    pub i: f64,
    pub p: f64,
}

/// One timestamped row of main-line and per-line measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Seconds since epoch, fractional allowed.
    pub timestamp: f64,
    pub main_v: f64,
    pub main_i: f64,
    pub main_p: f64,
    pub lines: Vec<LineReading>,
    pub spurious: bool,
}

impl Sample {
    /// All electrical magnitudes of the row, main line first.
    fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        [self.main_v, self.main_i, self.main_p]
            .into_iter()
            .chain(self.lines.iter().flat_map(|l| [l.v, l.i, l.p]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub channel_names: Vec<String>,
    pub channel_rated_powers: Vec<f64>,
    pub seed: u64,
    pub config_digest: String,
}

impl DatasetMeta {
    pub fn unnamed(n_channels: usize) -> Self {
        DatasetMeta {
            channel_names: (1..=n_channels).map(|k| format!("L{k}")).collect(),
            channel_rated_powers: vec![0.0; n_channels],
            seed: 0,
            config_digest: String::new(),
        }
    }
}

/// Ordered samples plus channel metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, meta: DatasetMeta) -> Result<Self> {
        let ds = Dataset { samples, meta };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_channels(&self) -> usize {
        self.meta.channel_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-channel true power as a column: `channel_power(a)[t]`.
    pub fn channel_power(&self, channel: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.lines[channel].p).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (idx, s) in self.samples.iter().enumerate() {
            if s.lines.len() != self.meta.channel_names.len() {
                return Err(Error::Validation(format!(
                    "row {idx}: {} line readings but metadata declares {} channels",
                    s.lines.len(),
                    self.meta.channel_names.len()
                )));
            }
            if idx > 0 && s.timestamp <= self.samples[idx - 1].timestamp {
                return Err(Error::Validation(format!(
                    "non-monotonic timestamp at row {idx}: {} after {}",
                    s.timestamp,
                    self.samples[idx - 1].timestamp
                )));
            }
        }
        Ok(())
    }
}

fn csv_header(n_channels: usize) -> String {
    let mut h = String::from("timestamp,main_v,main_i,main_p");
    for k in 1..=n_channels {
        let _ = write!(h, ",l{k}_v,l{k}_i,l{k}_p");
    }
    h.push_str(",spurious");
    h
}

/// Writes the dataset as CSV. Returns the number of data rows written.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<usize> {
    let mut out = String::with_capacity(64 * (dataset.len() + 1));
    out.push_str(&csv_header(dataset.n_channels()));
    out.push('\n');
    for s in &dataset.samples {
        let _ = write!(out, "{},{},{},{}", s.timestamp, s.main_v, s.main_i, s.main_p);
        for l in &s.lines {
            let _ = write!(out, ",{},{},{}", l.v, l.i, l.p);
        }
        let _ = writeln!(out, ",{}", if s.spurious { 1 } else { 0 });
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(dataset.len())
}

/// Non-fatal observations made while reading a CSV file.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ReadReport {
    pub rows_read: usize,
    pub ignored_columns: Vec<String>,
    pub rejected_rows: usize,
}

/// Reads a dataset written by [`write_csv`]. Columns are matched by name, so
/// any column order is accepted; unknown columns are ignored and counted.
pub fn read_csv(path: &Path) -> Result<(Dataset, ReadReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation(format!("{}: empty file, no header", path.display())))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();

    let find = |name: &str| columns.iter().position(|c| *c == name);
    let mandatory = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let ts_col = mandatory("timestamp")?;
    let main_v_col = mandatory("main_v")?;
    let main_i_col = mandatory("main_i")?;
    let main_p_col = mandatory("main_p")?;
    let spurious_col = find("spurious");

    // Channel count is inferred from the header: l1_*, l2_*, ... must form
    // complete contiguous (v, i, p) triples.
    let mut n_channels = 0;
    while find(&format!("l{}_v", n_channels + 1)).is_some() {
        n_channels += 1;
    }
    if n_channels == 0 {
        return Err(Error::MissingColumn("l1_v".to_string()));
    }
    let mut line_cols = Vec::with_capacity(n_channels);
    for k in 1..=n_channels {
        line_cols.push((
            mandatory(&format!("l{k}_v"))?,
            mandatory(&format!("l{k}_i"))?,
            mandatory(&format!("l{k}_p"))?,
        ));
    }

    let mut known = vec![ts_col, main_v_col, main_i_col, main_p_col];
    known.extend(line_cols.iter().flat_map(|&(a, b, c)| [a, b, c]));
    if let Some(c) = spurious_col {
        known.push(c);
    }
    let ignored_columns: Vec<String> = columns
        .iter()
        .enumerate()
        .filter(|(i, _)| !known.contains(i))
        .map(|(_, c)| c.to_string())
        .collect();

    let mut samples = Vec::new();
    let mut rejected_rows = 0usize;
    for (row_idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |col: usize| -> Option<f64> { fields.get(col)?.parse::<f64>().ok() };
        let sample = (|| {
            let timestamp = parse(ts_col)?;
            let main_v = parse(main_v_col)?;
            let main_i = parse(main_i_col)?;
            let main_p = parse(main_p_col)?;
            let mut lines_out = Vec::with_capacity(n_channels);
            for &(vc, ic, pc) in &line_cols {
                lines_out.push(LineReading {
                    v: parse(vc)?,
                    i: parse(ic)?,
                    p: parse(pc)?,
                });
            }
            let spurious = match spurious_col {
                Some(c) => matches!(*fields.get(c)?, "1" | "true"),
                None => false,
            };
            Some(Sample {
                timestamp,
                main_v,
                main_i,
                main_p,
                lines: lines_out,
                spurious,
            })
        })();
        match sample {
            Some(s) => {
                if let Some(prev) = samples.last() {
                    let prev: &Sample = prev;
                    if s.timestamp <= prev.timestamp {
                        return Err(Error::Validation(format!(
                            "non-monotonic timestamp at data row {row_idx}: {} after {}",
                            s.timestamp, prev.timestamp
                        )));
                    }
                }
                samples.push(s);
            }
            None => rejected_rows += 1,
        }
    }

    let report = ReadReport {
        rows_read: samples.len(),
        ignored_columns,
        rejected_rows,
    };
    let dataset = Dataset {
        samples,
        meta: DatasetMeta::unnamed(n_channels),
    };
    Ok((dataset, report))
}

/// Per-rule counts produced by [`clean`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct CleanReport {
    pub rows_in: usize,
    pub negative_magnitude: usize,
    pub over_max_power: usize,
    pub pre_flagged: usize,
    pub flagged_total: usize,
    pub interpolated: usize,
    pub dropped: usize,
}

/// Flags rows with negative magnitudes or implausible main power, then either
/// interpolates their values from the nearest good neighbors or drops them.
pub fn clean(dataset: &Dataset, max_power: f64, interpolate: bool) -> Result<(Dataset, CleanReport)> {
    if max_power <= 0.0 {
        return Err(Error::Validation("max_power must be > 0".to_string()));
    }
    let n = dataset.len();
    let mut report = CleanReport {
        rows_in: n,
        ..CleanReport::default()
    };
    let mut bad = vec![false; n];
    for (idx, s) in dataset.samples.iter().enumerate() {
        let negative = s.magnitudes().any(|m| m < 0.0);
        let over = s.main_p > max_power;
        if negative {
            report.negative_magnitude += 1;
        }
        if over {
            report.over_max_power += 1;
        }
        if s.spurious && !negative && !over {
            report.pre_flagged += 1;
        }
        bad[idx] = negative || over || s.spurious;
    }
    report.flagged_total = bad.iter().filter(|b| **b).count();
    if n > 0 && report.flagged_total * 2 > n {
        return Err(Error::Validation(format!(
            "dataset unusable: {} of {} rows flagged spurious (> 50%)",
            report.flagged_total, n
        )));
    }

    let mut out = dataset.clone();
    if interpolate {
        report.interpolated = report.flagged_total;
        let good: Vec<usize> = (0..n).filter(|&i| !bad[i]).collect();
        for idx in 0..n {
            if !bad[idx] {
                continue;
            }
            let next = good.iter().find(|&&g| g > idx).copied();
            let prev = good.iter().rev().find(|&&g| g < idx).copied();
            let fixed = match (prev, next) {
                (Some(p), Some(q)) => {
                    let (sp, sq) = (&dataset.samples[p], &dataset.samples[q]);
                    let t = dataset.samples[idx].timestamp;
                    let w = (t - sp.timestamp) / (sq.timestamp - sp.timestamp);
                    lerp_sample(sp, sq, w, t)
                }
                (Some(p), None) => hold_sample(&dataset.samples[p], dataset.samples[idx].timestamp),
                (None, Some(q)) => hold_sample(&dataset.samples[q], dataset.samples[idx].timestamp),
                (None, None) => {
                    return Err(Error::Validation(
                        "cannot interpolate: no clean rows available".to_string(),
                    ))
                }
            };
            out.samples[idx] = fixed;
        }
        // Flags stay on interpolated rows so downstream consumers can tell
        // measured values from reconstructed ones.
        for (idx, s) in out.samples.iter_mut().enumerate() {
            s.spurious = bad[idx];
        }
    } else {
        report.dropped = report.flagged_total;
        out.samples = dataset
            .samples
            .iter()
            .zip(&bad)
            .filter(|(_, b)| !**b)
            .map(|(s, _)| s.clone())
            .collect();
    }
    Ok((out, report))
}

fn lerp_sample(a: &Sample, b: &Sample, w: f64, t: f64) -> Sample {
    let lerp = |x: f64, y: f64| x + (y - x) * w;
    Sample {
        timestamp: t,
        main_v: lerp(a.main_v, b.main_v),
        main_i: lerp(a.main_i, b.main_i),
        main_p: lerp(a.main_p, b.main_p),
        lines: a
            .lines
            .iter()
            .zip(&b.lines)
            .map(|(la, lb)| LineReading {
                v: lerp(la.v, lb.v),
                i: lerp(la.i, lb.i),
                p: lerp(la.p, lb.p),
            })
            .collect(),
        spurious: true,
    }
}

fn hold_sample(src: &Sample, t: f64) -> Sample {
    Sample {
        timestamp: t,
        spurious: true,
        ..src.clone()
    }
}

/// Resamples onto a uniform grid by zero-order hold. The grid starts at the
/// first timestamp; each grid point takes the most recent raw sample.
pub fn align_to_grid(dataset: &Dataset, grid_interval: f64) -> Result<Dataset> {
    if grid_interval <= 0.0 {
        return Err(Error::Validation("grid_interval must be > 0".to_string()));
    }
    let first = dataset
        .samples
        .first()
        .ok_or_else(|| Error::Validation("cannot align an empty dataset".to_string()))?
        .timestamp;
    let last = dataset.samples.last().unwrap().timestamp;
    let count = ((last - first) / grid_interval).floor() as usize + 1;

    let mut out = Vec::with_capacity(count);
    let mut src = 0usize;
    for k in 0..count {
        let t = first + k as f64 * grid_interval;
        while src + 1 < dataset.len() && dataset.samples[src + 1].timestamp <= t {
            src += 1;
        }
        let mut s = dataset.samples[src].clone();
        s.timestamp = t;
        out.push(s);
    }
    Ok(Dataset {
        samples: out,
        meta: dataset.meta.clone(),
    })
}

/// Half-open `[start, end)` timestamp ranges for each split.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_intervals: Vec<(f64, f64)>,
    pub val_intervals: Vec<(f64, f64)>,
    pub test_intervals: Vec<(f64, f64)>,
}

impl SplitSpec {
    /// Checks that all intervals, across the three sets, are disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<(f64, f64, &str)> = Vec::new();
        for &(s, e) in &self.train_intervals {
            all.push((s, e, "train"));
        }
        for &(s, e) in &self.val_intervals {
            all.push((s, e, "val"));
        }
        for &(s, e) in &self.test_intervals {
            all.push((s, e, "test"));
        }
        for &(s, e, name) in &all {
            if e <= s {
                return Err(Error::Validation(format!(
                    "{name} interval [{s}, {e}) is empty or reversed"
                )));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in all.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Validation(format!(
                    "overlapping intervals: {} [{}, {}) and {} [{}, {})",
                    pair[0].2, pair[0].0, pair[0].1, pair[1].2, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(())
    }

    /// Derives boundary timestamps so the three splits hold consecutive runs
    /// of samples whose counts best match the target fractions.
    pub fn by_fractions(dataset: &Dataset, fractions: [f64; 3]) -> Result<SplitSpec> {
        let n = dataset.len();
        if n < 3 {
            return Err(Error::Validation(
                "need at least 3 samples to derive a split".to_string(),
            ));
        }
        let total: f64 = fractions.iter().sum();
        if fractions.iter().any(|f| *f <= 0.0) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "fractions must be positive and sum to 1 (got {fractions:?})"
            )));
        }
        let n_train = ((n as f64) * fractions[0]).round() as usize;
        let n_val = ((n as f64) * fractions[1]).round() as usize;
        let n_train = n_train.clamp(1, n - 2);
        let n_val = n_val.clamp(1, n - n_train - 1);
        let first = dataset.samples[0].timestamp;
        let b1 = dataset.samples[n_train].timestamp;
        let b2 = dataset.samples[n_train + n_val].timestamp;
        let end = dataset.samples[n - 1].timestamp + 1.0;
        Ok(SplitSpec {
            train_intervals: vec![(first, b1)],
            val_intervals: vec![(b1, b2)],
            test_intervals: vec![(b2, end)],
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub dropped: usize,
    pub train_pct: f64,
    pub val_pct: f64,
    pub test_pct: f64,
}

#[derive(Debug)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub counts: SplitCounts,
}

/// Assigns every sample to a split by timestamp membership, preserving order.
/// Samples covered by no interval are dropped and counted.
pub fn split_by_time(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitOutcome> {
    spec.validate()?;
    let in_any = |intervals: &[(f64, f64)], t: f64| intervals.iter().any(|&(s, e)| t >= s && t < e);

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut dropped = 0usize;
    for s in &dataset.samples {
        if in_any(&spec.train_intervals, s.timestamp) {
            train.push(s.clone());
        } else if in_any(&spec.val_intervals, s.timestamp) {
            val.push(s.clone());
        } else if in_any(&spec.test_intervals, s.timestamp) {
            test.push(s.clone());
        } else {
            dropped += 1;
        }
    }
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        if part.is_empty() {
            return Err(Error::Validation(format!("split `{name}` is empty")));
        }
    }
    let n = dataset.len() as f64;
    let counts = SplitCounts {
        train: train.len(),
        val: val.len(),
        test: test.len(),
        dropped,
        train_pct: 100.0 * train.len() as f64 / n,
        val_pct: 100.0 * val.len() as f64 / n,
        test_pct: 100.0 * test.len() as f64 / n,
    };
    let wrap = |samples| Dataset {
        samples,
        meta: dataset.meta.clone(),
    };
    Ok(SplitOutcome {
        train: wrap(train),
        val: wrap(val),
        test: wrap(test),
        counts,
    })
}
