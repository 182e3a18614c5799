//! Disaggregation quality metrics: MAE, SAE over sub-horizons, ON/OFF F1 and
//! normalized disaggregation error, plus per-appliance report tables and the
//! diagnostic breakdowns by concurrency and by machine state.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::chart::grouped_bar_chart;
use crate::error::{Error, Result};

/// Sub-horizon layout for SAE: `m` samples per sub-horizon; the number of
/// sub-horizons is derived and trailing remainder samples are excluded.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SubHorizonSpec {
    pub m: usize,
}

impl SubHorizonSpec {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Validation("sub-horizon length M must be >= 1".to_string()));
        }
        Ok(SubHorizonSpec { m })
    }

    pub fn sub_horizons(&self, len: usize) -> usize {
        len / self.m
    }
}

impl Default for SubHorizonSpec {
    /// 720 samples is one hour at the nominal 5 s cadence.
    fn default() -> Self {
        SubHorizonSpec { m: 720 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn precision(&self) -> Option<f64> {
        let denom = self.true_positive + self.false_positive;
        (denom > 0).then(|| self.true_positive as f64 / denom as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let denom = self.true_positive + self.false_negative;
        (denom > 0).then(|| self.true_positive as f64 / denom as f64)
    }
}

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Validation("empty series".to_string()));
    }
    Ok(())
}

/// Mean absolute error: `(1/H) * sum |y_t - yhat_t|`.
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).abs())
        .sum();
    Ok(sum / actual.len() as f64)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SaeResult {
    /// `(1/S) * sum_tau (1/M) |y_tau - yhat_tau|`, watts.
    pub absolute: f64,
    /// `sum |y_tau - yhat_tau| / sum y_tau` as a percentage; undefined when
    /// the actual energy over the covered span is zero.
    pub relative_pct: Option<f64>,
    /// Trailing samples excluded because they do not fill a sub-horizon.
    pub trailing_excluded: usize,
}

/// Signal aggregate error over sub-horizons of `spec.m` samples.
pub fn sae(actual: &[f64], predicted: &[f64], spec: &SubHorizonSpec) -> Result<SaeResult> {
    check_lengths(actual, predicted)?;
    let m = spec.m;
    if actual.len() < m {
        return Err(Error::Validation(format!(
            "series of length {} shorter than sub-horizon M = {m}",
            actual.len()
        )));
    }
    let s = actual.len() / m;
    let mut abs_sum = 0.0;
    let mut err_energy = 0.0;
    let mut true_energy = 0.0;
    for tau in 0..s {
        let range = tau * m..(tau + 1) * m;
        let y: f64 = actual[range.clone()].iter().sum();
        let p: f64 = predicted[range].iter().sum();
        abs_sum += (y - p).abs() / m as f64;
        err_energy += (y - p).abs();
        true_energy += y;
    }
    Ok(SaeResult {
        absolute: abs_sum / s as f64,
        relative_pct: (true_energy > 0.0).then(|| 100.0 * err_energy / true_energy),
        trailing_excluded: actual.len() - s * m,
    })
}

/// ON/OFF F1 where state = power > on_threshold on both series. Returns 0
/// when precision + recall is zero.
pub fn f1(actual: &[f64], predicted: &[f64], on_threshold: f64) -> Result<(f64, ConfusionCounts)> {
    check_lengths(actual, predicted)?;
    let mut counts = ConfusionCounts::default();
    for (y, p) in actual.iter().zip(predicted) {
        match (*y > on_threshold, *p > on_threshold) {
            (true, true) => counts.true_positive += 1,
            (false, true) => counts.false_positive += 1,
            (true, false) => counts.false_negative += 1,
            (false, false) => counts.true_negative += 1,
        }
    }
    let score = match (counts.precision(), counts.recall()) {
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    };
    Ok((score, counts))
}

/// Normalized disaggregation error:
/// `sqrt(sum (y_t - yhat_t)^2) / sqrt(sum y_t^2)`. `None` when the actual
/// series is all zero (undefined).
pub fn nde(actual: &[f64], predicted: &[f64]) -> Result<Option<f64>> {
    check_lengths(actual, predicted)?;
    let num: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    let denom: f64 = actual.iter().map(|y| y * y).sum();
    if denom <= 0.0 {
        return Ok(None);
    }
    Ok(Some(num.sqrt() / denom.sqrt()))
}

/// One appliance's row of the report table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApplianceMetrics {
    pub name: String,
    pub mae: f64,
    pub sae_watts: f64,
    pub sae_relative_pct: Option<f64>,
    pub f1: f64,
    pub nde: Option<f64>,
    #[serde(default)]
    pub confusion: ConfusionCounts,
}

/// Per-appliance metrics plus cross-appliance arithmetic means, in the layout
/// `Metric x (M1..Mn, Avg)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub appliances: Vec<ApplianceMetrics>,
    pub avg_mae: f64,
    pub avg_sae_watts: f64,
    pub avg_sae_relative_pct: Option<f64>,
    pub avg_f1: f64,
    pub avg_nde: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    (!collected.is_empty()).then(|| collected.iter().sum::<f64>() / collected.len() as f64)
}

impl MetricReport {
    /// Assembles a report from per-appliance rows, filling the average column.
    pub fn from_rows(appliances: Vec<ApplianceMetrics>) -> Result<Self> {
        if appliances.is_empty() {
            return Err(Error::Validation("report needs at least one appliance".to_string()));
        }
        let avg_mae = mean(appliances.iter().map(|a| a.mae)).unwrap();
        let avg_sae_watts = mean(appliances.iter().map(|a| a.sae_watts)).unwrap();
        let avg_sae_relative_pct = mean(appliances.iter().filter_map(|a| a.sae_relative_pct));
        let avg_f1 = mean(appliances.iter().map(|a| a.f1)).unwrap();
        let avg_nde = mean(appliances.iter().filter_map(|a| a.nde));
        Ok(MetricReport {
            appliances,
            avg_mae,
            avg_sae_watts,
            avg_sae_relative_pct,
            avg_f1,
            avg_nde,
        })
    }

    /// Computes all four metrics per appliance. `actual` and `predicted` hold
    /// one power series per appliance.
    pub fn compute(
        names: &[String],
        actual: &[Vec<f64>],
        predicted: &[Vec<f64>],
        spec: &SubHorizonSpec,
        on_threshold: f64,
    ) -> Result<Self> {
        if actual.len() != predicted.len() || actual.len() != names.len() {
            return Err(Error::Shape(format!(
                "appliance counts differ: {} names, {} actual, {} predicted",
                names.len(),
                actual.len(),
                predicted.len()
            )));
        }
        let mut rows = Vec::with_capacity(actual.len());
        for ((name, y), p) in names.iter().zip(actual).zip(predicted) {
            let sae_result = sae(y, p, spec)?;
            let (f1_score, confusion) = f1(y, p, on_threshold)?;
            rows.push(ApplianceMetrics {
                name: name.clone(),
                mae: mae(y, p)?,
                sae_watts: sae_result.absolute,
                sae_relative_pct: sae_result.relative_pct,
                f1: f1_score,
                nde: nde(y, p)?,
                confusion,
            });
        }
        MetricReport::from_rows(rows)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "Metric");
        for a in &self.appliances {
            let _ = write!(out, "{:>9}", a.name);
        }
        let _ = writeln!(out, "{:>9}", "Avg");

        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{:>9.2}", round_dp(x, 2)),
            None => format!("{:>9}", "n/a"),
        };
        let mut row = |label: &str, values: Vec<Option<f64>>, avg: Option<f64>| {
            let _ = write!(out, "{label:<10}");
            for v in values {
                let _ = write!(out, "{}", fmt(v));
            }
            let _ = writeln!(out, "{}", fmt(avg));
        };
        row(
            "MAE",
            self.appliances.iter().map(|a| Some(a.mae)).collect(),
            Some(self.avg_mae),
        );
        row(
            "SAE",
            self.appliances.iter().map(|a| Some(a.sae_watts)).collect(),
            Some(self.avg_sae_watts),
        );
        row(
            "SAE%",
            self.appliances.iter().map(|a| a.sae_relative_pct).collect(),
            self.avg_sae_relative_pct,
        );
        row(
            "F1",
            self.appliances.iter().map(|a| Some(a.f1)).collect(),
            Some(self.avg_f1),
        );
        row(
            "NDE",
            self.appliances.iter().map(|a| a.nde).collect(),
            self.avg_nde,
        );
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("metric");
        for a in &self.appliances {
            let _ = write!(out, ",{}", a.name);
        }
        out.push_str(",avg\n");
        let cell = |v: Option<f64>| v.map_or("n/a".to_string(), |x| x.to_string());
        let mut row = |label: &str, values: Vec<Option<f64>>, avg: Option<f64>| {
            let _ = write!(out, "{label}");
            for v in values {
                let _ = write!(out, ",{}", cell(v));
            }
            let _ = writeln!(out, ",{}", cell(avg));
        };
        row(
            "mae",
            self.appliances.iter().map(|a| Some(a.mae)).collect(),
            Some(self.avg_mae),
        );
        row(
            "sae_watts",
            self.appliances.iter().map(|a| Some(a.sae_watts)).collect(),
            Some(self.avg_sae_watts),
        );
        row(
            "sae_relative_pct",
            self.appliances.iter().map(|a| a.sae_relative_pct).collect(),
            self.avg_sae_relative_pct,
        );
        row(
            "f1",
            self.appliances.iter().map(|a| Some(a.f1)).collect(),
            Some(self.avg_f1),
        );
        row(
            "nde",
            self.appliances.iter().map(|a| a.nde).collect(),
            self.avg_nde,
        );
        out
    }
}

/// Decimal rounding that first snaps away accumulated binary noise, so a
/// value like 0.74499999999999996 (decimal 0.745) rounds up to 0.75.
pub fn round_dp(x: f64, dp: u32) -> f64 {
    let scale = 10f64.powi(dp as i32);
    let snapped = (x * scale * 1e8).round() / 1e8;
    snapped.round() / scale
}

/// Metrics for one concurrency bucket (k appliances simultaneously ON).
#[derive(Debug, Clone, Serialize)]
pub struct CountBucket {
    pub k: usize,
    pub samples: usize,
    pub low_confidence: bool,
    pub report: MetricReport,
}

/// Buckets samples by the true number of appliances simultaneously ON and
/// computes the report within each bucket. Buckets with fewer than 50 samples
/// are flagged low-confidence; empty buckets are omitted.
pub fn breakdown_by_active_count(
    names: &[String],
    actual: &[Vec<f64>],
    predicted: &[Vec<f64>],
    spec: &SubHorizonSpec,
    on_threshold: f64,
) -> Result<Vec<CountBucket>> {
    let n_app = actual.len();
    if n_app == 0 || predicted.len() != n_app {
        return Err(Error::Shape("appliance counts differ".to_string()));
    }
    let len = actual[0].len();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_app + 1];
    for t in 0..len {
        let k = (0..n_app).filter(|&a| actual[a][t] > on_threshold).count();
        buckets[k].push(t);
    }
    let mut out = Vec::new();
    for (k, idxs) in buckets.iter().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        let gather = |series: &[Vec<f64>]| -> Vec<Vec<f64>> {
            series
                .iter()
                .map(|s| idxs.iter().map(|&t| s[t]).collect())
                .collect()
        };
        let bucket_spec = SubHorizonSpec {
            m: spec.m.min(idxs.len()),
        };
        let report = MetricReport::compute(
            names,
            &gather(actual),
            &gather(predicted),
            &bucket_spec,
            on_threshold,
        )?;
        out.push(CountBucket {
            k,
            samples: idxs.len(),
            low_confidence: idxs.len() < 50,
            report,
        });
    }
    Ok(out)
}

/// Error statistics within one ON or OFF bucket of a single appliance.
#[derive(Debug, Clone, Serialize)]
pub struct BucketStats {
    pub samples: usize,
    pub mae: f64,
    pub sae_watts: f64,
    pub sae_relative_pct: Option<f64>,
    pub nde: Option<f64>,
    /// Fraction of samples whose predicted state matches the bucket's state.
    /// Replaces F1, which is undefined within a single-state bucket.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StateBreakdown {
    pub name: String,
    pub on: Option<BucketStats>,
    pub off: Option<BucketStats>,
}

/// Splits every appliance's samples by that appliance's true ON/OFF state and
/// reports per-bucket MAE/SAE/NDE plus state accuracy.
pub fn breakdown_by_state(
    names: &[String],
    actual: &[Vec<f64>],
    predicted: &[Vec<f64>],
    spec: &SubHorizonSpec,
    on_threshold: f64,
) -> Result<Vec<StateBreakdown>> {
    if actual.len() != predicted.len() || actual.len() != names.len() {
        return Err(Error::Shape("appliance counts differ".to_string()));
    }
    let mut out = Vec::new();
    for ((name, y), p) in names.iter().zip(actual).zip(predicted) {
        check_lengths(y, p)?;
        let stats_for = |want_on: bool| -> Result<Option<BucketStats>> {
            let idxs: Vec<usize> = (0..y.len())
                .filter(|&t| (y[t] > on_threshold) == want_on)
                .collect();
            if idxs.is_empty() {
                return Ok(None);
            }
            let yb: Vec<f64> = idxs.iter().map(|&t| y[t]).collect();
            let pb: Vec<f64> = idxs.iter().map(|&t| p[t]).collect();
            let bucket_spec = SubHorizonSpec {
                m: spec.m.min(yb.len()),
            };
            let sae_result = sae(&yb, &pb, &bucket_spec)?;
            let hits = idxs
                .iter()
                .filter(|&&t| (p[t] > on_threshold) == want_on)
                .count();
            Ok(Some(BucketStats {
                samples: idxs.len(),
                mae: mae(&yb, &pb)?,
                sae_watts: sae_result.absolute,
                sae_relative_pct: sae_result.relative_pct,
                nde: nde(&yb, &pb)?,
                accuracy: hits as f64 / idxs.len() as f64,
            }))
        };
        out.push(StateBreakdown {
            name: name.clone(),
            on: stats_for(true)?,
            off: stats_for(false)?,
        });
    }
    Ok(out)
}

/// One metric's drift between two reports for one appliance (or the average).
#[derive(Debug, Clone, Serialize)]
pub struct DriftEntry {
    pub appliance: String,
    pub metric: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
    pub pct_change: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftTable {
    pub entries: Vec<DriftEntry>,
}

/// Per-metric, per-appliance deltas between two reports over the same
/// appliance set.
pub fn compare_reports(before: &MetricReport, after: &MetricReport) -> Result<DriftTable> {
    let names_b: Vec<&str> = before.appliances.iter().map(|a| a.name.as_str()).collect();
    let names_a: Vec<&str> = after.appliances.iter().map(|a| a.name.as_str()).collect();
    if names_b != names_a {
        return Err(Error::Validation(format!(
            "appliance sets differ: {names_b:?} vs {names_a:?}"
        )));
    }
    let mut entries = Vec::new();
    let mut push = |appliance: &str, metric: &str, b: Option<f64>, a: Option<f64>| {
        if let (Some(b), Some(a)) = (b, a) {
            entries.push(DriftEntry {
                appliance: appliance.to_string(),
                metric: metric.to_string(),
                before: b,
                after: a,
                delta: a - b,
                pct_change: (b != 0.0).then(|| 100.0 * (a - b) / b),
            });
        }
    };
    for (rb, ra) in before.appliances.iter().zip(&after.appliances) {
        push(&rb.name, "mae", Some(rb.mae), Some(ra.mae));
        push(&rb.name, "sae", Some(rb.sae_watts), Some(ra.sae_watts));
        push(&rb.name, "sae_pct", rb.sae_relative_pct, ra.sae_relative_pct);
        push(&rb.name, "f1", Some(rb.f1), Some(ra.f1));
        push(&rb.name, "nde", rb.nde, ra.nde);
    }
    push("Avg", "mae", Some(before.avg_mae), Some(after.avg_mae));
    push(
        "Avg",
        "sae",
        Some(before.avg_sae_watts),
        Some(after.avg_sae_watts),
    );
    push(
        "Avg",
        "sae_pct",
        before.avg_sae_relative_pct,
        after.avg_sae_relative_pct,
    );
    push("Avg", "f1", Some(before.avg_f1), Some(after.avg_f1));
    push("Avg", "nde", before.avg_nde, after.avg_nde);
    Ok(DriftTable { entries })
}

impl DriftTable {
    pub fn get(&self, appliance: &str, metric: &str) -> Option<&DriftEntry> {
        self.entries
            .iter()
            .find(|e| e.appliance == appliance && e.metric == metric)
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{:<10}{:<10}{:>10}{:>10}{:>10}{:>10}\n",
            "Appliance", "Metric", "Before", "After", "Delta", "Change%"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<10}{:<10}{:>10.2}{:>10.2}{:>+10.2}{:>10}",
                e.appliance,
                e.metric,
                round_dp(e.before, 2),
                round_dp(e.after, 2),
                round_dp(e.delta, 2),
                e.pct_change
                    .map_or("n/a".to_string(), |p| format!("{:+.1}", round_dp(p, 1))),
            );
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("appliance,metric,before,after,delta,pct_change\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.appliance,
                e.metric,
                e.before,
                e.after,
                e.delta,
                e.pct_change.map_or("n/a".to_string(), |p| p.to_string()),
            );
        }
        out
    }

    /// Before/after grouped bars for one metric across appliances.
    pub fn render_svg(&self, metric: &str) -> String {
        let rows: Vec<&DriftEntry> = self.entries.iter().filter(|e| e.metric == metric).collect();
        let categories: Vec<String> = rows.iter().map(|e| e.appliance.clone()).collect();
        let before: Vec<f64> = rows.iter().map(|e| e.before).collect();
        let after: Vec<f64> = rows.iter().map(|e| e.after).collect();
        grouped_bar_chart(
            &format!("{metric} before vs after deployment"),
            &categories,
            &[("before".to_string(), before), ("after".to_string(), after)],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn table2() -> MetricReport {
        let names = ["M1", "M2", "M3", "M4"];
        let mae = [8.79, 9.83, 12.68, 6.20];
        let sae = [8.65, 9.77, 10.48, 5.69];
        let f1 = [0.79, 0.79, 0.68, 0.66];
        let nde = [0.63, 0.86, 0.73, 0.76];
        MetricReport::from_rows(
            (0..4)
                .map(|k| ApplianceMetrics {
                    name: names[k].to_string(),
                    mae: mae[k],
                    sae_watts: sae[k],
                    sae_relative_pct: Some(sae[k]),
                    f1: f1[k],
                    nde: Some(nde[k]),
                    confusion: ConfusionCounts::default(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn table3() -> MetricReport {
        let names = ["M1", "M2", "M3", "M4"];
        let mae = [6.93, 25.51, 10.55, 10.74];
        let sae = [5.81, 21.40, 8.85, 9.01];
        let f1 = [0.87, 0.82, 0.90, 0.69];
        let nde = [0.47, 0.68, 0.51, 0.70];
        MetricReport::from_rows(
            (0..4)
                .map(|k| ApplianceMetrics {
                    name: names[k].to_string(),
                    mae: mae[k],
                    sae_watts: sae[k],
                    sae_relative_pct: Some(sae[k]),
                    f1: f1[k],
                    nde: Some(nde[k]),
                    confusion: ConfusionCounts::default(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mae_perfect_is_zero() {
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn mae_constant_offset() {
        let y = vec![10.0; 100];
        let p = vec![7.0; 100];
        assert_eq!(mae(&y, &p).unwrap(), 3.0);
    }

    #[test]
    fn mae_matches_brute_force() {
        let mut rng = Rng::new(1);
        let y: Vec<f64> = (0..1000).map(|_| rng.range(0.0, 100.0)).collect();
        let p: Vec<f64> = (0..1000).map(|_| rng.range(0.0, 100.0)).collect();
        // Second, naive implementation with indexed loop.
        let mut total = 0.0;
        for t in 0..y.len() {
            let d = y[t] - p[t];
            total += if d < 0.0 { -d } else { d };
        }
        let naive = total / y.len() as f64;
        assert!((mae(&y, &p).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn sae_perfect_is_zero() {
        let y = vec![5.0; 40];
        let r = sae(&y, &y, &SubHorizonSpec::new(10).unwrap()).unwrap();
        assert_eq!(r.absolute, 0.0);
        assert_eq!(r.relative_pct, Some(0.0));
    }

    #[test]
    fn sae_single_horizon_reduces_to_offset() {
        let y = vec![10.0; 8];
        let p = vec![7.0; 8];
        let r = sae(&y, &p, &SubHorizonSpec::new(8).unwrap()).unwrap();
        assert!((r.absolute - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sae_zero_when_sub_horizon_totals_agree() {
        // Pointwise errors cancel within each sub-horizon of 2.
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let p = vec![2.0, 1.0, 4.0, 3.0];
        let r = sae(&y, &p, &SubHorizonSpec::new(2).unwrap()).unwrap();
        assert_eq!(r.absolute, 0.0);
        assert_eq!(r.relative_pct, Some(0.0));
        // ...even though MAE sees the error.
        assert_eq!(mae(&y, &p).unwrap(), 1.0);
    }

    #[test]
    fn sae_relative_undefined_for_zero_actual() {
        let y = vec![0.0; 10];
        let p = vec![1.0; 10];
        let r = sae(&y, &p, &SubHorizonSpec::new(5).unwrap()).unwrap();
        assert!(r.relative_pct.is_none());
        assert!(r.absolute > 0.0);
    }

    #[test]
    fn f1_perfect_is_one() {
        let y = vec![0.0, 50.0, 50.0, 0.0];
        assert_eq!(f1(&y, &y, 5.0).unwrap().0, 1.0);
    }

    #[test]
    fn f1_balanced_half() {
        // TP=1, FP=1, FN=1 -> precision = recall = 0.5 -> F1 = 0.5.
        let y = vec![50.0, 0.0, 50.0, 0.0];
        let p = vec![50.0, 50.0, 0.0, 0.0];
        let (score, counts) = f1(&y, &p, 5.0).unwrap();
        assert_eq!(counts.true_positive, 1);
        assert_eq!(counts.false_positive, 1);
        assert_eq!(counts.false_negative, 1);
        assert_eq!(score, 0.5);
    }

    #[test]
    fn f1_zero_when_never_predicting_on() {
        let y = vec![50.0, 50.0, 0.0];
        let p = vec![0.0, 0.0, 0.0];
        assert_eq!(f1(&y, &p, 5.0).unwrap().0, 0.0);
    }

    #[test]
    fn nde_perfect_is_zero_and_zeros_give_one() {
        let y = vec![3.0, 4.0, 5.0];
        assert_eq!(nde(&y, &y).unwrap(), Some(0.0));
        let zeros = vec![0.0; 3];
        assert_eq!(nde(&y, &zeros).unwrap(), Some(1.0));
        assert_eq!(nde(&zeros, &y).unwrap(), None);
    }

    #[test]
    fn nde_matches_brute_force() {
        let mut rng = Rng::new(2);
        let y: Vec<f64> = (0..1000).map(|_| rng.range(0.0, 100.0)).collect();
        let p: Vec<f64> = (0..1000).map(|_| rng.range(0.0, 100.0)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for t in 0..y.len() {
            num += (y[t] - p[t]).powi(2);
            den += y[t].powi(2);
        }
        let naive = num.sqrt() / den.sqrt();
        assert!((nde(&y, &p).unwrap().unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn published_table_averages_reproduce() {
        let report = table2();
        assert_eq!(round_dp(report.avg_mae, 2), 9.38);
        assert_eq!(round_dp(report.avg_sae_relative_pct.unwrap(), 2), 8.65);
        assert_eq!(round_dp(report.avg_f1, 2), 0.73);
        assert_eq!(round_dp(report.avg_nde.unwrap(), 2), 0.75);
        let text = report.render_text();
        assert!(text.contains("9.38"), "{text}");
        assert!(text.contains("0.75"), "{text}");
    }

    #[test]
    fn report_averages_equal_column_means() {
        let mut rng = Rng::new(3);
        let names: Vec<String> = (1..=4).map(|k| format!("M{k}")).collect();
        let actual: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..500).map(|_| rng.range(0.0, 60.0)).collect())
            .collect();
        let predicted: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..500).map(|_| rng.range(0.0, 60.0)).collect())
            .collect();
        let report = MetricReport::compute(
            &names,
            &actual,
            &predicted,
            &SubHorizonSpec::new(50).unwrap(),
            5.0,
        )
        .unwrap();
        let mean_mae: f64 = report.appliances.iter().map(|a| a.mae).sum::<f64>() / 4.0;
        assert!((report.avg_mae - mean_mae).abs() < 1e-12);
        let mean_f1: f64 = report.appliances.iter().map(|a| a.f1).sum::<f64>() / 4.0;
        assert!((report.avg_f1 - mean_f1).abs() < 1e-12);
    }

    #[test]
    fn drift_between_published_tables() {
        let drift = compare_reports(&table2(), &table3()).unwrap();
        let mae_avg = drift.get("Avg", "mae").unwrap();
        assert!(mae_avg.delta > 0.0, "MAE worsens after deployment");
        assert!((mae_avg.delta - 4.05).abs() < 0.02, "delta {}", mae_avg.delta);
        let sae_avg = drift.get("Avg", "sae").unwrap();
        assert!(sae_avg.delta > 0.0);
        let f1_avg = drift.get("Avg", "f1").unwrap();
        assert!((f1_avg.delta - 0.09).abs() < 1e-9);
        let nde_avg = drift.get("Avg", "nde").unwrap();
        assert!((nde_avg.delta + 0.155).abs() < 1e-9);
    }

    #[test]
    fn drift_identical_reports_is_all_zero() {
        let drift = compare_reports(&table2(), &table2()).unwrap();
        assert!(drift.entries.iter().all(|e| e.delta == 0.0));
    }

    #[test]
    fn drift_rejects_mismatched_appliances() {
        let mut other = table2();
        other.appliances[0].name = "X".to_string();
        assert!(compare_reports(&table2(), &other).is_err());
    }

    #[test]
    fn single_appliance_drift_has_five_metric_rows_plus_avg() {
        let single = MetricReport::from_rows(vec![table2().appliances[0].clone()]).unwrap();
        let drift = compare_reports(&single, &single).unwrap();
        // 5 metrics x (1 appliance + avg).
        assert_eq!(drift.entries.len(), 10);
    }

    #[test]
    fn count_breakdown_on_single_appliance_has_k01() {
        let y = vec![vec![0.0, 0.0, 50.0, 50.0, 0.0, 50.0]];
        let p = y.clone();
        let names = vec!["M1".to_string()];
        let buckets =
            breakdown_by_active_count(&names, &y, &p, &SubHorizonSpec::new(1).unwrap(), 5.0)
                .unwrap();
        let ks: Vec<usize> = buckets.iter().map(|b| b.k).collect();
        assert_eq!(ks, vec![0, 1]);
        assert!(buckets.iter().all(|b| b.low_confidence));
    }

    #[test]
    fn count_breakdown_omits_empty_buckets() {
        // Two appliances always ON together: only k=0 and k=2 exist.
        let y = vec![vec![0.0, 50.0, 50.0], vec![0.0, 50.0, 50.0]];
        let p = y.clone();
        let names = vec!["A".to_string(), "B".to_string()];
        let buckets =
            breakdown_by_active_count(&names, &y, &p, &SubHorizonSpec::new(1).unwrap(), 5.0)
                .unwrap();
        let ks: Vec<usize> = buckets.iter().map(|b| b.k).collect();
        assert_eq!(ks, vec![0, 2]);
    }

    #[test]
    fn state_breakdown_perfect_predictions() {
        let y = vec![vec![0.0, 50.0, 50.0, 0.0]];
        let p = y.clone();
        let names = vec!["M1".to_string()];
        let rows =
            breakdown_by_state(&names, &y, &p, &SubHorizonSpec::new(1).unwrap(), 5.0).unwrap();
        let on = rows[0].on.as_ref().unwrap();
        let off = rows[0].off.as_ref().unwrap();
        assert_eq!(on.mae, 0.0);
        assert_eq!(off.mae, 0.0);
        assert_eq!(on.accuracy, 1.0);
        assert_eq!(off.accuracy, 1.0);
    }

    #[test]
    fn state_breakdown_never_on_has_only_off_bucket() {
        let y = vec![vec![0.0, 0.0, 0.0]];
        let p = vec![vec![1.0, 0.0, 2.0]];
        let names = vec!["M1".to_string()];
        let rows =
            breakdown_by_state(&names, &y, &p, &SubHorizonSpec::new(1).unwrap(), 5.0).unwrap();
        assert!(rows[0].on.is_none());
        assert!(rows[0].off.is_some());
    }

    #[test]
    fn rounding_snaps_decimal_halves_up() {
        assert_eq!(round_dp(0.745, 2), 0.75);
        assert_eq!(round_dp(9.375, 2), 9.38);
        assert_eq!(round_dp(8.6475, 2), 8.65);
        assert_eq!(round_dp(-0.155, 2), -0.16);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sae_never_exceeds_mae_when_m_divides_h(
            m in 1usize..16,
            s in 1usize..12,
            seed in 0u64..1000,
        ) {
            let h = m * s;
            let mut rng = Rng::new(seed);
            let y: Vec<f64> = (0..h).map(|_| rng.range(0.0, 100.0)).collect();
            let p: Vec<f64> = (0..h).map(|_| rng.range(0.0, 100.0)).collect();
            let sae_abs = sae(&y, &p, &SubHorizonSpec { m }).unwrap().absolute;
            let mae_val = mae(&y, &p).unwrap();
            prop_assert!(sae_abs <= mae_val + 1e-9, "sae {} > mae {}", sae_abs, mae_val);
        }

        #[test]
        fn sae_bounded_by_covered_span_mae_for_ragged_h(
            m in 1usize..16,
            extra in 0usize..15,
            seed in 0u64..1000,
        ) {
            let h = m * 4 + extra;
            let mut rng = Rng::new(seed);
            let y: Vec<f64> = (0..h).map(|_| rng.range(0.0, 100.0)).collect();
            let p: Vec<f64> = (0..h).map(|_| rng.range(0.0, 100.0)).collect();
            let r = sae(&y, &p, &SubHorizonSpec { m }).unwrap();
            let covered = h - r.trailing_excluded;
            let covered_mae = mae(&y[..covered], &p[..covered]).unwrap();
            prop_assert!(r.absolute <= covered_mae + 1e-9);
        }

        #[test]
        fn nde_is_scale_invariant(scale in 0.001f64..1000.0, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let y: Vec<f64> = (0..64).map(|_| rng.range(0.1, 100.0)).collect();
            let p: Vec<f64> = (0..64).map(|_| rng.range(0.0, 100.0)).collect();
            let base = nde(&y, &p).unwrap().unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let scaled = nde(&ys, &ps).unwrap().unwrap();
            prop_assert!((base - scaled).abs() < 1e-9 * (1.0 + base));
        }

        #[test]
        fn f1_invariant_under_threshold_preserving_relabeling(seed in 0u64..1000) {
            let thr = 5.0;
            let mut rng = Rng::new(seed);
            let y: Vec<f64> = (0..128).map(|_| rng.range(0.0, 60.0)).collect();
            let p: Vec<f64> = (0..128).map(|_| rng.range(0.0, 60.0)).collect();
            let relabel = |v: &f64, r: f64| if *v > thr { thr + 1.0 + r } else { thr - thr * r / 10.0 };
            let y2: Vec<f64> = y.iter().map(|v| relabel(v, rng.range(0.0, 50.0))).collect();
            let p2: Vec<f64> = p.iter().map(|v| relabel(v, rng.range(0.0, 50.0))).collect();
            let (a, ca) = f1(&y, &p, thr).unwrap();
            let (b, cb) = f1(&y2, &p2, thr).unwrap();
            prop_assert_eq!(ca, cb);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn metrics_nonnegative_and_zero_iff_equal(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let y: Vec<f64> = (0..64).map(|_| rng.range(0.1, 100.0)).collect();
            let p: Vec<f64> = (0..64).map(|_| rng.range(0.0, 100.0)).collect();
            let spec = SubHorizonSpec::new(8).unwrap();
            let sae_abs = sae(&y, &p, &spec).unwrap().absolute;
            prop_assert!(mae(&y, &p).unwrap() >= 0.0);
            prop_assert!(sae_abs >= 0.0);
            prop_assert!(nde(&y, &p).unwrap().unwrap() >= 0.0);
            prop_assert_eq!(mae(&y, &y).unwrap(), 0.0);
            // Distinct series give nonzero MAE (generic case).
            if y.iter().zip(&p).any(|(a, b)| (a - b).abs() > 1e-9) {
                prop_assert!(mae(&y, &p).unwrap() > 0.0);
            }
        }
    }
}
