//! Unweighted contextual precision / recall / F1 over interval overlap, the
//! F1-max sweep over Gaussian thresholds, and dataset-level reports.
//!
//! Overlap means at least one shared integer index; intervals are never
//! padded.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{DetectionSet, Interval};
use crate::screen::{extract_intervals, smooth_ewma, threshold};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Ground-truth intervals hit by at least one prediction.
    pub gt_hit: usize,
    pub gt_total: usize,
}

impl ContextualCounts {
    pub fn pooled<'a>(items: impl IntoIterator<Item = &'a ContextualCounts>) -> Self {
        items
            .into_iter()
            .fold(ContextualCounts::default(), |a, c| ContextualCounts {
                tp: a.tp + c.tp,
                fp: a.fp + c.fp,
                fn_: a.fn_ + c.fn_,
                gt_hit: a.gt_hit + c.gt_hit,
                gt_total: a.gt_total + c.gt_total,
            })
    }
}

/// TP counts predicted intervals touching any ground truth, FP those touching
/// none, FN ground-truth intervals touched by no prediction.
pub fn contextual_counts(pred: &[Interval], gt: &[Interval]) -> ContextualCounts {
    let tp = pred
        .iter()
        .filter(|p| gt.iter().any(|g| p.overlaps(g)))
        .count();
    let gt_hit = gt
        .iter()
        .filter(|g| pred.iter().any(|p| p.overlaps(g)))
        .count();
    ContextualCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - gt_hit,
        gt_hit,
        gt_total: gt.len(),
    }
}

/// Which count feeds the recall numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecallBasis {
    /// `TP / (TP + FN)` with TP counted over predictions, as defined above.
    #[default]
    Predicted,
    /// Fraction of ground-truth intervals that were hit.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, and their harmonic mean; any 0/0 is 0.
pub fn prf(c: &ContextualCounts, basis: RecallBasis) -> Prf {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = match basis {
        RecallBasis::Predicted => ratio(c.tp, c.tp + c.fn_),
        RecallBasis::GroundTruth => ratio(c.gt_hit, c.gt_total),
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// Metrics at one operating point. `alpha` is absent for binary detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub counts: ContextualCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl OperatingPoint {
    fn new(
        alpha: Option<f64>,
        tau: Option<f64>,
        counts: ContextualCounts,
        basis: RecallBasis,
    ) -> Self {
        let m = prf(&counts, basis);
        OperatingPoint {
            alpha,
            tau,
            counts,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

/// Evaluation of one series under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEval {
    pub series_id: String,
    pub dataset: String,
    pub points: Vec<OperatingPoint>,
    pub f1_max: f64,
}

fn best_f1(points: &[OperatingPoint]) -> f64 {
    points.iter().map(|p| p.f1).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub ewma_span: usize,
    pub gap_merge: usize,
    pub basis: RecallBasis,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            ewma_span: 10,
            gap_merge: 0,
            basis: RecallBasis::Predicted,
        }
    }
}

/// Sweeps `alphas` over a continuous score: smooth, threshold, extract,
/// count. F1-max is the best F1 across the sweep.
pub fn f1_max(
    series_id: &str,
    dataset: &str,
    raw_scores: &[f64],
    gt: &[Interval],
    alphas: &[f64],
    settings: SweepSettings,
) -> Result<SeriesEval> {
    if alphas.is_empty() {
        return Err(Error::invalid_arg("alpha list is empty"));
    }
    let smoothed = smooth_ewma(raw_scores, settings.ewma_span)?;
    let points = alphas
        .iter()
        .map(|&alpha| {
            let tau = threshold(&smoothed, alpha)?;
            let pred = extract_intervals(&smoothed, tau, settings.gap_merge);
            let counts = contextual_counts(pred.intervals(), gt);
            Ok(OperatingPoint::new(
                Some(alpha),
                Some(tau),
                counts,
                settings.basis,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeriesEval {
        series_id: series_id.to_string(),
        dataset: dataset.to_string(),
        f1_max: best_f1(&points),
        points,
    })
}

/// Single-operating-point evaluation of a binary detection set.
pub fn evaluate_detections(
    series_id: &str,
    dataset: &str,
    pred: &DetectionSet,
    gt: &[Interval],
    basis: RecallBasis,
) -> SeriesEval {
    let counts = contextual_counts(pred.intervals(), gt);
    let point = OperatingPoint::new(None, None, counts, basis);
    SeriesEval {
        series_id: series_id.to_string(),
        dataset: dataset.to_string(),
        f1_max: point.f1,
        points: vec![point],
    }
}

/// Counts pooled over every series of one dataset, per operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEval {
    pub dataset: String,
    pub series: usize,
    pub points: Vec<OperatingPoint>,
    pub f1_max: f64,
}

/// One method's results: per-dataset rows plus the mean and standard
/// deviation of F1-max across datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub method: String,
    pub datasets: Vec<DatasetEval>,
    pub mean: f64,
    pub std: f64,
    pub per_series: Vec<SeriesEval>,
}

/// Pools each dataset's counts point-by-point before computing PRF. Every
/// series in a dataset must share the same operating-point layout.
pub fn aggregate(method: &str, evals: &[SeriesEval], basis: RecallBasis) -> Result<MethodEval> {
    if evals.is_empty() {
        return Err(Error::invalid_arg("nothing to aggregate"));
    }
    let mut groups: BTreeMap<&str, Vec<&SeriesEval>> = BTreeMap::new();
    for e in evals {
        groups.entry(e.dataset.as_str()).or_default().push(e);
    }

    let mut datasets = Vec::with_capacity(groups.len());
    for (name, members) in groups {
        let template = &members[0].points;
        if members.iter().any(|m| m.points.len() != template.len()) {
            return Err(Error::invalid_arg(format!(
                "dataset {name} mixes operating-point layouts"
            )));
        }
        let points: Vec<OperatingPoint> = template
            .iter()
            .enumerate()
            .map(|(i, tp)| {
                let counts = ContextualCounts::pooled(members.iter().map(|m| &m.points[i].counts));
                OperatingPoint::new(tp.alpha, None, counts, basis)
            })
            .collect();
        datasets.push(DatasetEval {
            dataset: name.to_string(),
            series: members.len(),
            f1_max: best_f1(&points),
            points,
        });
    }

    let n = datasets.len() as f64;
    let mean = datasets.iter().map(|d| d.f1_max).sum::<f64>() / n;
    let std = (datasets
        .iter()
        .map(|d| (d.f1_max - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(MethodEval {
        method: method.to_string(),
        datasets,
        mean,
        std,
        per_series: evals.to_vec(),
    })
}

/// Token usage totals, reported alongside verification results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenSummary {
    pub series: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub mean_tokens_per_series: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub methods: Vec<MethodEval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: one row per method, one column per dataset, and a
    /// trailing mean ± std column.
    pub fn to_table(&self) -> String {
        let mut names: Vec<&str> = self
            .methods
            .iter()
            .flat_map(|m| m.datasets.iter().map(|d| d.dataset.as_str()))
            .collect();
        names.sort_unstable();
        names.dedup();

        let method_w = self
            .methods
            .iter()
            .map(|m| m.method.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let col_w = names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<method_w$}", "method");
        for n in &names {
            let _ = write!(out, "  {n:>col_w$}");
        }
        let _ = writeln!(out, "  {:>13}", "mean±std");
        for m in &self.methods {
            let _ = write!(out, "{:<method_w$}", m.method);
            for n in &names {
                match m.datasets.iter().find(|d| d.dataset == *n) {
                    Some(d) => {
                        let _ = write!(out, "  {:>col_w$.3}", d.f1_max);
                    }
                    None => {
                        let _ = write!(out, "  {:>col_w$}", "-");
                    }
                }
            }
            let cell = format!("{:.3}±{:.3}", m.mean, m.std);
            let _ = writeln!(out, "  {cell:>13}");
        }
        if let Some(t) = &self.tokens {
            let _ = writeln!(
                out,
                "\ntokens: {} prompt + {} completion over {} series ({:.1} per series)",
                t.prompt_tokens, t.completion_tokens, t.series, t.mean_tokens_per_series
            );
        }
        out
    }
}
