//! Binary classification metrics with true impacts as the positive class.
//!
//! A metric whose denominator is zero is reported as `None` ("undefined"),
//! which serializes to JSON `null`. It is never coerced to zero.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Events whose ground truth is a true impact.
    pub fn actual_positive(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn actual_negative(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn predicted_negative(&self) -> u64 {
        self.tn + self.fn_
    }
}

/// Counts outcomes of `predictions` against `labels`.
pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (Label::TrueImpact, Label::TrueImpact) => cm.tp += 1,
            (Label::TrueImpact, Label::FalseImpact) => cm.fp += 1,
            (Label::FalseImpact, Label::FalseImpact) => cm.tn += 1,
            (Label::FalseImpact, Label::TrueImpact) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Weighted harmonic mean of precision and recall.
///
/// `beta` > 1 favours recall. Returns `None` when both inputs are zero or
/// `beta` is not positive.
pub fn f_score(precision: f64, recall: f64, beta: f64) -> Option<f64> {
    if !(beta > 0.0) {
        return None;
    }
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return None;
    }
    Some((1.0 + b2) * precision * recall / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub accuracy: Option<f64>,
    pub counts: ConfusionMatrix,
}

impl MetricsReport {
    /// F2 with undefined mapped to 0, for ranking checkpoints.
    pub fn f2_or_zero(&self) -> f64 {
        self.f2.unwrap_or(0.0)
    }
}

pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    let ppv = ratio(cm.tp, cm.predicted_positive());
    let npv = ratio(cm.tn, cm.predicted_negative());
    let recall = ratio(cm.tp, cm.actual_positive());
    let f = |beta| match (ppv, recall) {
        (Some(p), Some(r)) => f_score(p, r, beta),
        _ => None,
    };
    MetricsReport {
        ppv,
        npv,
        precision: ppv,
        recall,
        f1: f(1.0),
        f2: f(2.0),
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        counts: *cm,
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "TP {}  FP {}  TN {}  FN {}", c.tp, c.fp, c.tn, c.fn_)?;
        writeln!(f, "PPV       {}", fmt_metric(self.ppv))?;
        writeln!(f, "NPV       {}", fmt_metric(self.npv))?;
        writeln!(f, "Recall    {}", fmt_metric(self.recall))?;
        writeln!(f, "F1        {}", fmt_metric(self.f1))?;
        writeln!(f, "F2        {}", fmt_metric(self.f2))?;
        write!(f, "Accuracy  {}", fmt_metric(self.accuracy))
    }
}

/// Reported throughput of manual video review, events per hour.
pub const MANUAL_EVENTS_PER_HOUR: f64 = 20.0;
/// Reported lower bound on detector throughput, events per hour.
pub const AUTO_EVENTS_PER_HOUR: f64 = 1e6;
/// Hours to train a video analyst.
pub const MANUAL_TRAINING_HOURS: f64 = 2.0;
/// Hours to train the detector.
pub const AUTO_TRAINING_HOURS: f64 = 5.0;
/// Manual processing time printed in the published comparison table.
pub const REPORTED_MANUAL_PROCESSING_HOURS: f64 = 12.0;

/// Published F1/F2 of other mouthguard impact detectors, used as fixed
/// reference points in reports.
pub const REFERENCE_DETECTORS: [(&str, &str, f64, f64); 4] = [
    ("Domel et al. 2020", "Convolutional Neural Network", 0.79, 0.75),
    ("Gabler et al. 2020", "AdaBoost CART Decision Tree", 0.89, 0.84),
    ("Wu et al. 2018", "Support Vector Machine", 0.90, 0.88),
    ("Physics-informed CNN (published)", "Physics-informed CNN", 0.95, 0.98),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSide {
    pub events_per_hour: f64,
    pub processing_hours: f64,
    pub training_hours: f64,
    pub true_impacts_found: u64,
    pub false_impacts_found: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowReport {
    pub n_events: u64,
    /// Video review, taken as ground truth.
    pub manual: WorkflowSide,
    pub automated: WorkflowSide,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub metrics: MetricsReport,
    /// Manual processing hours as printed in the published table, shown next
    /// to the arithmetic above.
    pub reported_manual_processing_hours: f64,
}

/// Compares manual video review with the automated detector on the events
/// summarised by `cm`.
pub fn compare_workflows(
    cm: &ConfusionMatrix,
    n_events: u64,
    manual_rate_per_hour: f64,
    auto_rate_per_hour: f64,
    manual_training_h: f64,
    auto_training_h: f64,
) -> Result<WorkflowReport> {
    if !(manual_rate_per_hour > 0.0 && auto_rate_per_hour > 0.0) {
        return Err(Error::invalid("workflow rates must be positive"));
    }
    let n = n_events as f64;
    Ok(WorkflowReport {
        n_events,
        manual: WorkflowSide {
            events_per_hour: manual_rate_per_hour,
            processing_hours: n / manual_rate_per_hour,
            training_hours: manual_training_h,
            true_impacts_found: cm.actual_positive(),
            false_impacts_found: cm.actual_negative(),
        },
        automated: WorkflowSide {
            events_per_hour: auto_rate_per_hour,
            processing_hours: n / auto_rate_per_hour,
            training_hours: auto_training_h,
            true_impacts_found: cm.tp,
            false_impacts_found: cm.tn,
        },
        false_positives: cm.fp,
        false_negatives: cm.fn_,
        metrics: report(cm),
        reported_manual_processing_hours: REPORTED_MANUAL_PROCESSING_HOURS,
    })
}

impl fmt::Display for WorkflowReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (m, a) = (&self.manual, &self.automated);
        writeln!(f, "{:<24}{:>22}{:>22}", "", "Manual video analysis", "Impact detector")?;
        writeln!(
            f,
            "{:<24}{:>22}{:>22}",
            "Hours processing",
            format!("{:.3} ({} ev/h)", m.processing_hours, m.events_per_hour),
            format!("{:.2e} ({:.0e} ev/h)", a.processing_hours, a.events_per_hour)
        )?;
        writeln!(f, "{:<24}{:>22}{:>22}", "Hours training", m.training_hours, a.training_hours)?;
        writeln!(f, "{:<24}{:>22}{:>22}", "True impacts found", m.true_impacts_found, a.true_impacts_found)?;
        writeln!(f, "{:<24}{:>22}{:>22}", "False impacts found", m.false_impacts_found, a.false_impacts_found)?;
        writeln!(f, "{:<24}{:>22}{:>22}", "False positives", "", self.false_positives)?;
        writeln!(f, "{:<24}{:>22}{:>22}", "False negatives", "", self.false_negatives)?;
        writeln!(
            f,
            "(published table lists ~{} manual hours for this comparison; {} events at {} ev/h is {:.1} h)",
            self.reported_manual_processing_hours, self.n_events, m.events_per_hour, m.processing_hours
        )?;
        write!(f, "{}", self.metrics)
    }
}
