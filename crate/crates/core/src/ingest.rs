//! Series and label loading plus the preprocessing chain
//! (min-max normalize, linear detrend, optional per-segment standardization).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;

/// A named univariate signal. Holds at least two finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    id: String,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooShort {
                len: values.len(),
                min: 2,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite sample {} at index {i}",
                values[i]
            )));
        }
        Ok(TimeSeries {
            id: id.into(),
            values,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(min, max)` over all samples.
    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        TimeSeries::new(self.id.clone(), values)
    }
}

/// Ground-truth anomaly intervals, sorted by start.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    intervals: Vec<Interval>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    start: usize,
    end: usize,
}

impl LabelSet {
    pub fn new(mut intervals: Vec<Interval>) -> Self {
        intervals.sort();
        LabelSet { intervals }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Checks every interval lies within `[0, t_len - 1]`.
    pub fn validate(&self, t_len: usize) -> Result<()> {
        for iv in &self.intervals {
            if iv.start > iv.end || iv.end >= t_len {
                return Err(Error::InvalidValue(format!(
                    "label interval ({}, {}) outside series of length {t_len}",
                    iv.start, iv.end
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let records: Vec<LabelRecord> = self
            .intervals
            .iter()
            .map(|iv| LabelRecord {
                start: iv.start,
                end: iv.end,
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("label records serialize")
    }
}

/// Reads a `timestamp,value` CSV. Timestamps are kept only for ordering; the
/// value column must parse as a finite float.
pub fn load_series(path: &Path) -> Result<TimeSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_series_csv(&id, &text)
}

pub fn parse_series_csv(id: &str, text: &str) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::MalformedInput {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.len() != 2 {
        return Err(Error::MalformedInput {
            line: 1,
            reason: format!(
                "expected header `timestamp,value`, got {} column(s)",
                headers.len()
            ),
        });
    }

    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedInput {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let raw = record.get(1).unwrap_or("");
        let value: f64 = raw.parse().map_err(|_| Error::MalformedInput {
            line,
            reason: format!("value `{raw}` is not a number"),
        })?;
        if !value.is_finite() {
            return Err(Error::MalformedInput {
                line,
                reason: format!("value `{raw}` is not finite"),
            });
        }
        values.push(value);
    }
    TimeSeries::new(id, values)
}

/// Writes the series as `timestamp,value` with integer timestamps. Values use
/// the shortest round-tripping decimal form, so reloading is bit-exact.
pub fn write_series(series: &TimeSeries, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 16);
    out.push_str("timestamp,value\n");
    for (t, v) in series.values().iter().enumerate() {
        out.push_str(&format!("{t},{v}\n"));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads `[{"start": s, "end": e}, ...]` with inclusive indices.
pub fn load_labels(path: &Path) -> Result<LabelSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<LabelRecord> = serde_json::from_str(&text)?;
    let mut intervals = Vec::with_capacity(records.len());
    for r in records {
        if r.start > r.end {
            return Err(Error::InvalidValue(format!(
                "{}: label start {} after end {}",
                path.display(),
                r.start,
                r.end
            )));
        }
        intervals.push(Interval {
            start: r.start,
            end: r.end,
        });
    }
    Ok(LabelSet::new(intervals))
}

/// One dataset entry. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub series: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changepoint: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

impl ManifestEntry {
    pub fn series_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.series
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "series".to_string())
        })
    }

    pub fn dataset_name(&self) -> &str {
        self.dataset.as_deref().unwrap_or("default")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Loads a JSON list of entries and resolves relative paths. Every series
    /// path must exist; label paths are checked lazily so that evaluation can
    /// skip unlabeled series.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for e in &mut entries {
            if e.series.is_relative() {
                e.series = base.join(&e.series);
            }
            if let Some(l) = &mut e.labels {
                if l.is_relative() {
                    *l = base.join(&*l);
                }
            }
            if !e.series.exists() {
                return Err(Error::io(
                    e.series.clone(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "series file not found"),
                ));
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `(x - min) / (max - min)`; a constant series maps to 0.5 everywhere.
pub fn normalize_minmax(series: &TimeSeries) -> Result<TimeSeries> {
    let (lo, hi) = series.range();
    let span = hi - lo;
    let values = if span == 0.0 {
        vec![0.5; series.len()]
    } else {
        series.values().iter().map(|v| (v - lo) / span).collect()
    };
    series.with_values(values)
}

/// Ordinary least-squares slope and intercept of `values` against `t = 0..n`.
pub(crate) fn ols_fit(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, y) in values.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, y_mean - slope * t_mean)
}

/// Subtracts the least-squares linear fit. Output is not re-normalized.
pub fn detrend_linear(series: &TimeSeries) -> Result<TimeSeries> {
    let (slope, intercept) = ols_fit(series.values());
    let values = series
        .values()
        .iter()
        .enumerate()
        .map(|(t, y)| y - (slope * t as f64 + intercept))
        .collect();
    series.with_values(values)
}

fn standardize_in_place(seg: &mut [f64]) {
    let n = seg.len() as f64;
    let mean = seg.iter().sum::<f64>() / n;
    let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in seg.iter_mut() {
        *v = if std == 0.0 { 0.0 } else { (*v - mean) / std };
    }
}

/// Standardizes `[0, changepoint)` and `[changepoint, T)` independently with
/// the population standard deviation. Zero-variance segments become zeros.
pub fn standardize_segments(series: &TimeSeries, changepoint: usize) -> Result<TimeSeries> {
    if changepoint == 0 || changepoint >= series.len() {
        return Err(Error::invalid_arg(format!(
            "changepoint {changepoint} must lie in (0, {})",
            series.len()
        )));
    }
    let mut values = series.values().to_vec();
    let (head, tail) = values.split_at_mut(changepoint);
    standardize_in_place(head);
    standardize_in_place(tail);
    series.with_values(values)
}

/// Full chain: normalize, detrend, and standardize around a known changepoint.
pub fn preprocess(series: &TimeSeries, changepoint: Option<usize>) -> Result<TimeSeries> {
    let s = detrend_linear(&normalize_minmax(series)?)?;
    match changepoint {
        Some(cp) => standardize_segments(&s, cp),
        None => Ok(s),
    }
}
