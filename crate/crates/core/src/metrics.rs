//! Confusion counts, per-class F1 and rank-based AUC-ROC. CI is the positive
//! class throughout.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::SubjectRecord;
use crate::label::{Label, Prediction};
use crate::runner::PredictionRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction for unknown subject {0}")]
    UnknownSubject(String),
    #[error("AUC needs scored subjects of both classes (CI: {ci}, CN: {cn})")]
    SingleClass { ci: usize, cn: usize },
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// True-CI subjects whose prediction was Abstain.
    pub abstain_ci: usize,
    /// True-CN subjects whose prediction was Abstain.
    pub abstain_cn: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self { tp, fp, tn, fn_, abstain_ci: 0, abstain_cn: 0 }
    }

    pub fn add(&mut self, truth: Label, prediction: Prediction) {
        match (truth, prediction) {
            (Label::CI, Prediction::CI) => self.tp += 1,
            (Label::CI, Prediction::CN) => self.fn_ += 1,
            (Label::CI, Prediction::Abstain) => self.abstain_ci += 1,
            (Label::CN, Prediction::CN) => self.tn += 1,
            (Label::CN, Prediction::CI) => self.fp += 1,
            (Label::CN, Prediction::Abstain) => self.abstain_cn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.abstains()
    }

    pub fn abstains(&self) -> usize {
        self.abstain_ci + self.abstain_cn
    }

    /// The same counts with CN treated as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
            abstain_ci: self.abstain_cn,
            abstain_cn: self.abstain_ci,
        }
    }

    /// (hits, false alarms, misses) for `class`; abstains on its members are misses.
    fn one_vs_rest(&self, class: Label) -> (usize, usize, usize) {
        match class {
            Label::CI => (self.tp, self.fp, self.fn_ + self.abstain_ci),
            Label::CN => (self.tn, self.fn_, self.fp + self.abstain_cn),
        }
    }

    pub fn precision(&self, class: Label) -> f64 {
        let (hit, false_alarm, _) = self.one_vs_rest(class);
        ratio(hit, hit + false_alarm)
    }

    pub fn recall(&self, class: Label) -> f64 {
        let (hit, _, miss) = self.one_vs_rest(class);
        ratio(hit, hit + miss)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 of `class`, 0 when precision and recall are both 0.
pub fn f1_for_class(counts: &ConfusionCounts, class: Label) -> f64 {
    let (hit, false_alarm, miss) = counts.one_vs_rest(class);
    ratio(2 * hit, 2 * hit + false_alarm + miss)
}

/// AUC as the exact fraction `numerator / denominator`, where the numerator
/// counts each CI-over-CN win twice and each tie once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Auc {
    pub numerator: u64,
    pub denominator: u64,
}

impl Auc {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

/// Probability that a random CI subject outscores a random CN subject,
/// counting ties as one half.
pub fn auc_roc(scored: &[(Label, f64)]) -> Result<Auc, MetricsError> {
    if scored.iter().any(|(_, s)| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let ci = scored.iter().filter(|(l, _)| *l == Label::CI).count();
    let cn = scored.len() - ci;
    if ci == 0 || cn == 0 {
        return Err(MetricsError::SingleClass { ci, cn });
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (mut numerator, mut cn_below) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut group_ci, mut group_cn) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].1 == sorted[i].1 {
            match sorted[j].0 {
                Label::CI => group_ci += 1,
                Label::CN => group_cn += 1,
            }
            j += 1;
        }
        numerator += group_ci * (2 * cn_below + group_cn);
        cn_below += group_cn;
        i = j;
    }
    Ok(Auc { numerator, denominator: 2 * ci as u64 * cn as u64 })
}

/// Tallies predictions against the corpus labels.
pub fn confusion(records: &[PredictionRecord], truth: &[SubjectRecord]) -> Result<ConfusionCounts, MetricsError> {
    let labels: HashMap<&str, Label> = truth.iter().map(|r| (r.subject_id.as_str(), r.diagnosis)).collect();
    let mut counts = ConfusionCounts::default();
    for rec in records {
        let truth =
            labels.get(rec.subject_id.as_str()).ok_or_else(|| MetricsError::UnknownSubject(rec.subject_id.clone()))?;
        counts.add(*truth, rec.final_label);
    }
    Ok(counts)
}

/// Confusion counts from the labels stored in the records themselves.
pub fn confusion_from_records(records: &[PredictionRecord]) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for rec in records {
        counts.add(rec.true_label, rec.final_label);
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub n: Option<usize>,
    pub counts: ConfusionCounts,
    pub f1_ci: f64,
    pub f1_cn: f64,
    pub precision_ci: f64,
    pub recall_ci: f64,
    pub auc: Option<f64>,
    /// Records left out of the AUC for lacking a CI probability.
    pub auc_excluded: usize,
}

impl ReportRow {
    pub fn from_records(strategy: &str, n: Option<usize>, records: &[PredictionRecord]) -> Self {
        let counts = confusion_from_records(records);
        let scored: Vec<(Label, f64)> = records.iter().filter_map(|r| r.p_ci.map(|p| (r.true_label, p))).collect();
        let auc = if scored.is_empty() { None } else { auc_roc(&scored).ok().map(|a| a.value()) };
        Self {
            strategy: strategy.to_string(),
            n,
            counts,
            f1_ci: f1_for_class(&counts, Label::CI),
            f1_cn: f1_for_class(&counts, Label::CN),
            precision_ci: counts.precision(Label::CI),
            recall_ci: counts.recall(Label::CI),
            auc,
            auc_excluded: if scored.is_empty() { 0 } else { records.len() - scored.len() },
        }
    }
}

/// Writes the metrics table: one row per strategy, highest F1(CI) first.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<(), MetricsError> {
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.f1_ci.total_cmp(&a.f1_ci).then_with(|| a.strategy.cmp(&b.strategy)));
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Report(e.to_string());
    w.write_record(["strategy", "n", "F1_CI", "F1_CN", "precision_CI", "recall_CI", "AUC", "abstains"]).map_err(err)?;
    for row in sorted {
        w.write_record([
            row.strategy.clone(),
            row.n.map(|n| n.to_string()).unwrap_or_default(),
            format!("{:.4}", row.f1_ci),
            format!("{:.4}", row.f1_cn),
            format!("{:.4}", row.precision_ci),
            format!("{:.4}", row.recall_ci),
            row.auc.map(|a| format!("{a:.4}")).unwrap_or_default(),
            row.counts.abstains().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Report(e.to_string()))
}
