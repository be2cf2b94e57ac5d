//! Evaluation arithmetic: accuracy, MAE, recognition rate, detection matching,
//! precision-recall curves and average precision.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detect::{BoundingBox, ClassLabel, Detection, iou};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Adds one outcome; `predicted` and `actual` are positive-class flags.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// (TP + TN) / (TP + TN + FP + FN).
pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy of an empty confusion matrix"));
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// Paired predictions and targets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

impl LossSample {
    pub fn new(predicted: Vec<f64>, actual: Vec<f64>) -> Self {
        LossSample { predicted, actual }
    }

    pub fn push(&mut self, predicted: f64, actual: f64) {
        self.predicted.push(predicted);
        self.actual.push(actual);
    }
}

/// Mean absolute error.
pub fn mae(s: &LossSample) -> Result<f64> {
    if s.predicted.len() != s.actual.len() {
        return Err(Error::Argument(format!(
            "loss sample has {} predictions but {} targets",
            s.predicted.len(),
            s.actual.len()
        )));
    }
    if s.predicted.is_empty() {
        return Err(Error::UndefinedMetric("mean absolute error of an empty sample"));
    }
    if s.predicted.iter().chain(&s.actual).any(|v| !v.is_finite()) {
        return Err(Error::Argument("loss sample contains non-finite values".into()));
    }
    let sum: f64 = s.predicted.iter().zip(&s.actual).map(|(p, a)| (a - p).abs()).sum();
    Ok(sum / s.predicted.len() as f64)
}

pub fn recognition_rate(detected: u64, total: u64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Argument("recognition rate needs at least one target".into()));
    }
    if detected > total {
        return Err(Error::Argument(format!("detected count {detected} exceeds total {total}")));
    }
    Ok(detected as f64 / total as f64)
}

/// A detection's confidence and whether it matched a truth box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlaggedDetection {
    pub confidence: f64,
    pub true_positive: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchOutcome {
    /// In matching order (descending confidence).
    pub flagged: Vec<FlaggedDetection>,
    pub false_negatives: usize,
}

impl MatchOutcome {
    pub fn true_positives(&self) -> usize {
        self.flagged.iter().filter(|f| f.true_positive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.flagged.len() - self.true_positives()
    }
}

/// Greedy one-to-one matching by descending confidence. Each detection takes
/// its best-IoU unconsumed truth box if that IoU reaches `iou_thresh`.
pub fn match_detections(dets: &[Detection], truth: &[BoundingBox], iou_thresh: f64) -> MatchOutcome {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox.x.total_cmp(&b.bbox.x))
            .then(a.bbox.y.total_cmp(&b.bbox.y))
    });
    let mut consumed = vec![false; truth.len()];
    let flagged = order
        .into_iter()
        .map(|d| {
            let best = truth
                .iter()
                .enumerate()
                .filter(|(i, _)| !consumed[*i])
                .map(|(i, t)| (i, iou(&d.bbox, t)))
                .fold(None, |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            let true_positive = match best {
                Some((i, v)) if v >= iou_thresh => {
                    consumed[i] = true;
                    true
                }
                _ => false,
            };
            FlaggedDetection { confidence: d.confidence, true_positive }
        })
        .collect();
    MatchOutcome { flagged, false_negatives: consumed.iter().filter(|c| !**c).count() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

/// Precision and recall at each distinct confidence cut, highest first.
/// Recall is 0 throughout when `total_truth` is 0.
pub fn pr_curve(flagged: &[FlaggedDetection], total_truth: usize) -> Vec<PrPoint> {
    let mut sorted = flagged.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let cut = sorted[i].confidence;
        while i < sorted.len() && sorted[i].confidence == cut {
            tp += sorted[i].true_positive as usize;
            seen += 1;
            i += 1;
        }
        let recall = if total_truth == 0 { 0.0 } else { tp as f64 / total_truth as f64 };
        points.push(PrPoint { precision: tp as f64 / seen as f64, recall, threshold: cut });
    }
    points
}

/// All-point interpolated area under a curve given in cut order.
pub fn average_precision(pr: &[PrPoint]) -> f64 {
    // Running maximum of precision from the right gives the interpolated
    // envelope at every point.
    let mut envelope = vec![0.0f64; pr.len()];
    let mut best = 0.0f64;
    for (i, p) in pr.iter().enumerate().rev() {
        best = best.max(p.precision);
        envelope[i] = best;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in pr.iter().zip(envelope) {
        ap += (p.recall - prev_recall).max(0.0) * env;
        prev_recall = prev_recall.max(p.recall);
    }
    ap.clamp(0.0, 1.0)
}

/// Tallies (predicted, actual) pairs with Objects as the positive class.
pub fn confusion_from_classifications(results: &[(ClassLabel, ClassLabel)]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for &(predicted, actual) in results {
        c.record(predicted == ClassLabel::Objects, actual == ClassLabel::Objects);
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
}

/// Aggregate result of running the pipeline over a labelled set.
///
/// `counts` is seat-level with SuspectedOccupancy as the positive class and
/// `accuracy` is computed from it. `state_agreement` is the fraction of seats
/// whose four-way state matches ground truth exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames: usize,
    pub seats: usize,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub state_agreement: f64,
    pub classifier: ClassifierSummary,
    /// Per-frame person count error.
    pub mae: Option<f64>,
    pub pr: Vec<PrPoint>,
    pub ap: Option<f64>,
    pub recognition_rate: Option<f64>,
}

impl EvaluationReport {
    /// Plain-text confusion table followed by the derived metrics.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let c = &self.counts;
        let _ = writeln!(out, "Seat verdicts (positive = suspected occupancy), {} frames, {} seats", self.frames, self.seats);
        out.push_str(&confusion_table(c));
        let _ = writeln!(out);
        let _ = writeln!(out, "Classifier decisions (positive = objects)");
        out.push_str(&confusion_table(&self.classifier.counts));
        let _ = writeln!(out);
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "{:<22}{:.6}", "accuracy", self.accuracy);
        let _ = writeln!(out, "{:<22}{:.6}", "state agreement", self.state_agreement);
        let _ = writeln!(out, "{:<22}{}", "classifier accuracy", fmt(self.classifier.accuracy));
        let _ = writeln!(out, "{:<22}{}", "person count MAE", fmt(self.mae));
        let _ = writeln!(out, "{:<22}{}", "person AP", fmt(self.ap));
        let _ = writeln!(out, "{:<22}{}", "recognition rate", fmt(self.recognition_rate));
        out
    }

    pub fn pr_csv(&self) -> String {
        pr_csv(&self.pr)
    }
}

pub fn confusion_table(c: &ConfusionCounts) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18}{:>20}{:>20}", "", "predicted positive", "predicted negative");
    let _ = writeln!(out, "{:<18}{:>20}{:>20}", "actual positive", format!("TP {}", c.tp), format!("FN {}", c.fn_));
    let _ = writeln!(out, "{:<18}{:>20}{:>20}", "actual negative", format!("FP {}", c.fp), format!("TN {}", c.tn));
    out
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
    }
    out
}
