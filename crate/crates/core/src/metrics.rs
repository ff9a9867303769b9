//! Classification metrics over judge outputs.
//!
//! The positive class throughout is "the predicted SQL is correct".

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Hardness;

/// One judged sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    /// Confidence in [0, 1] that the predicted SQL is correct.
    pub score: f64,
    pub verdict: bool,
    pub label: bool,
    #[serde(default)]
    pub hardness: Hardness,
}

impl ScoredPrediction {
    /// A single binary verdict; the score is the verdict as 0 or 1.
    pub fn from_verdict(verdict: bool, label: bool, hardness: Hardness) -> Self {
        ScoredPrediction {
            score: if verdict { 1.0 } else { 0.0 },
            verdict,
            label,
            hardness,
        }
    }

    /// Repeated inference runs: the score is the fraction of `True` verdicts
    /// and the verdict is the majority (ties count as `True`).
    pub fn from_runs(verdicts: &[bool], label: bool, hardness: Hardness) -> Option<Self> {
        if verdicts.is_empty() {
            return None;
        }
        let score = score_from_runs(verdicts);
        Some(ScoredPrediction {
            score,
            verdict: score >= 0.5,
            label,
            hardness,
        })
    }
}

pub fn score_from_runs(verdicts: &[bool]) -> f64 {
    verdicts.iter().filter(|&&v| v).count() as f64 / verdicts.len() as f64
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("AUC needs at least one positive and one negative label")]
    DegenerateClasses,
    #[error("metric requested on an empty set")]
    EmptySet,
    #[error("score at position {0} is not a finite number")]
    NonFiniteScore(usize),
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half. Computed from average ranks.
pub fn auc(items: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    if let Some(i) = items.iter().position(|p| !p.score.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let n_pos = items.iter().filter(|p| p.label).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateClasses);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].score.total_cmp(&items[b].score));

    // ranks are 1-based; doubled so tied averages stay integral
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && items[order[j]].score == items[order[i]].score {
            j += 1;
        }
        let avg_rank2 = (i + 1 + j) as u64;
        let pos_in_tie = order[i..j].iter().filter(|&&k| items[k].label).count() as u64;
        pos_rank_sum2 += avg_rank2 * pos_in_tie;
        i = j;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn of(items: &[ScoredPrediction]) -> Self {
        let mut c = Confusion::default();
        for p in items {
            match (p.verdict, p.label) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn accuracy(items: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let c = Confusion::of(items);
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub value: f64,
    /// Precision or recall had a zero denominator.
    pub zero_division: bool,
}

pub fn f1(items: &[ScoredPrediction]) -> Result<F1Score, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    Ok(f1_from_confusion(&Confusion::of(items)))
}

pub fn f1_from_confusion(c: &Confusion) -> F1Score {
    let zero_division = c.tp + c.fp == 0 || c.tp + c.fn_ == 0;
    let denom = 2 * c.tp + c.fp + c.fn_;
    let value = if c.tp == 0 { 0.0 } else { (2 * c.tp) as f64 / denom as f64 };
    F1Score { value, zero_division }
}

/// `x` in [0, 1] as a percentage with two decimals, e.g. `47.20`.
pub fn fmt_percent(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// `776 (47.20%)`. An empty total reports 0.00%.
pub fn count_with_percent(n: usize, total: usize) -> String {
    let frac = if total == 0 { 0.0 } else { n as f64 / total as f64 };
    format!("{n} ({}%)", fmt_percent(frac))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Hardness class name, or `overall`.
    pub group: String,
    pub n: usize,
    /// Absent when the group lacks one of the two classes.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub f1: f64,
    pub f1_zero_division: bool,
}

impl MetricRow {
    fn compute(group: &str, items: &[ScoredPrediction]) -> Option<MetricRow> {
        let accuracy = accuracy(items).ok()?;
        let f = f1(items).ok()?;
        Some(MetricRow {
            group: group.to_string(),
            n: items.len(),
            auc: auc(items).ok(),
            accuracy,
            f1: f.value,
            f1_zero_division: f.zero_division,
        })
    }
}

/// Per-hardness rows followed by an `overall` row. Empty groups are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

pub fn grouped_report(items: &[ScoredPrediction]) -> MetricsReport {
    let mut rows = Vec::new();
    for h in Hardness::ALL {
        let group: Vec<ScoredPrediction> = items.iter().copied().filter(|p| p.hardness == h).collect();
        if let Some(row) = MetricRow::compute(h.as_str(), &group) {
            rows.push(row);
        }
    }
    if let Some(row) = MetricRow::compute("overall", items) {
        rows.push(row);
    }
    MetricsReport { rows }
}

impl MetricsReport {
    pub fn overall(&self) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.group == "overall")
    }

    /// Delimiter-separated table with a header line; metrics in percent.
    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "group{sep}n{sep}auc{sep}accuracy{sep}f1");
        for r in &self.rows {
            let auc = r.auc.map_or_else(|| "n/a".to_string(), fmt_percent);
            let _ = writeln!(
                out,
                "{}{sep}{}{sep}{}{sep}{}{sep}{}",
                r.group,
                r.n,
                auc,
                fmt_percent(r.accuracy),
                fmt_percent(r.f1)
            );
        }
        out
    }

    /// Structured form with percent strings alongside the raw fractions.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "group": r.group,
                    "n": r.n,
                    "auc": r.auc,
                    "accuracy": r.accuracy,
                    "f1": r.f1,
                    "f1_zero_division": r.f1_zero_division,
                    "percent": {
                        "auc": r.auc.map(fmt_percent),
                        "accuracy": fmt_percent(r.accuracy),
                        "f1": fmt_percent(r.f1),
                    }
                })
            })
            .collect();
        serde_json::json!({ "rows": rows })
    }
}
