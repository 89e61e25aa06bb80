//! Confusion matrices, per-class metrics and binary threshold sweeps.
//!
//! Matrices are laid out predicted x actual: `counts[p][a]` is the number of
//! samples of actual class `a` predicted as `p`. Row sums are prediction
//! totals, column sums are class supports.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    labels: Vec<String>,
}

impl ConfusionMatrix {
    /// An all-zero `k x k` matrix with labels `0..k`.
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; k]; k], labels: (0..k).map(|i| i.to_string()).collect() }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>, labels: Vec<String>) -> Result<Self> {
        let k = counts.len();
        if k == 0 {
            return Err(Error::Empty("confusion matrix"));
        }
        if let Some(row) = counts.iter().find(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(format!("confusion matrix row of length {} in a {k}x{k} matrix", row.len())));
        }
        if labels.len() != k {
            return Err(Error::LengthMismatch(labels.len(), k));
        }
        Ok(ConfusionMatrix { counts, labels })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.k() {
            return Err(Error::LengthMismatch(labels.len(), self.k()));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, predicted: usize, actual: usize) -> u64 {
        self.counts[predicted][actual]
    }

    pub fn predicted_total(&self, p: usize) -> u64 {
        self.counts[p].iter().sum()
    }

    pub fn support(&self, a: usize) -> u64 {
        self.counts.iter().map(|r| r[a]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `trace / total`, or `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("predicted\\actual");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .chain(self.labels.iter().map(|l| l.len()))
            .max()
            .unwrap_or(1)
            .max(2);
        let mut out = format!("{:>width$}", "Pr\\Ac");
        for l in &self.labels {
            let _ = write!(out, " {l:>width$}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            let _ = write!(out, "{l:>w$}", w = width.max(5));
            for c in row {
                let _ = write!(out, " {c:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    /// Sums counts; both matrices must have the same size.
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.k(), rhs.k(), "confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn confusion(preds: &[usize], actuals: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != actuals.len() {
        return Err(Error::LengthMismatch(preds.len(), actuals.len()));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &a) in preds.iter().zip(actuals) {
        for label in [p, a] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        cm.counts[p][a] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class has no samples.
    pub recall: Option<f64>,
    /// `2TP / (2TP + FP + FN)`; `None` when the class was neither present nor predicted.
    pub f1: Option<f64>,
    pub support: u64,
    pub predicted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
    /// Mean F1 over classes with non-zero support.
    pub macro_f1: Option<f64>,
    pub accuracy: f64,
    pub total: u64,
    /// Classes left out of the macro average.
    pub excluded: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix has no counts"));
    }
    let mut classes = Vec::with_capacity(cm.k());
    let mut excluded = Vec::new();
    let mut f1_sum = 0.0;
    let mut f1_n = 0usize;
    for c in 0..cm.k() {
        let tp = cm.get(c, c);
        let predicted = cm.predicted_total(c);
        let support = cm.support(c);
        let fp = predicted - tp;
        let fn_ = support - tp;
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        match f1 {
            Some(v) if support > 0 => {
                f1_sum += v;
                f1_n += 1;
            }
            _ => {
                log::warn!("class `{}` has no samples; precision/recall undefined, excluded from macro-F1", cm.labels[c]);
                excluded.push(cm.labels[c].clone());
            }
        }
        classes.push(ClassMetrics {
            label: cm.labels[c].clone(),
            precision: ratio(tp, predicted),
            recall: ratio(tp, support),
            f1,
            support,
            predicted,
        });
    }
    Ok(MetricReport {
        classes,
        macro_f1: (f1_n > 0).then(|| f1_sum / f1_n as f64),
        accuracy: cm.trace() as f64 / total as f64,
        total,
        excluded,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

fn full(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

impl MetricReport {
    /// Full-precision values; undefined entries are written as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,support,predicted,precision,recall,f1\n");
        for c in &self.classes {
            let _ = writeln!(out, "{},{},{},{},{},{}", c.label, c.support, c.predicted, full(c.precision), full(c.recall), full(c.f1));
        }
        let _ = writeln!(out, "macro_f1,{},,,,{}", self.total, full(self.macro_f1));
        let _ = writeln!(out, "accuracy,{},,,,{}", self.total, self.accuracy);
        out
    }

    /// Percentages to two decimals.
    pub fn to_table(&self) -> String {
        let lw = self.classes.iter().map(|c| c.label.len()).max().unwrap_or(0).max(8);
        let mut out = format!("{:<lw$} {:>9} {:>10} {:>10} {:>10}\n", "class", "support", "precision", "recall", "f1");
        for c in &self.classes {
            let _ = writeln!(out, "{:<lw$} {:>9} {:>10} {:>10} {:>10}", c.label, c.support, pct(c.precision), pct(c.recall), pct(c.f1));
        }
        let _ = writeln!(out, "{:<lw$} {:>9} {:>10} {:>10} {:>10}", "macro-F1", self.total, "", "", pct(self.macro_f1));
        let _ = writeln!(out, "{:<lw$} {:>9} {:>10} {:>10} {:>10}", "accuracy", self.total, "", "", pct(Some(self.accuracy)));
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "excluded from macro-F1 (no samples): {}", self.excluded.join(", "));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Sensitivity and specificity at each threshold; a score `>= t` counts as positive (label 1).
pub fn sweep_at(scores: &[f64], actuals: &[usize], thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    if scores.len() != actuals.len() {
        return Err(Error::LengthMismatch(scores.len(), actuals.len()));
    }
    if let Some(&label) = actuals.iter().find(|&&a| a > 1) {
        return Err(Error::LabelOutOfRange { label, classes: 2 });
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::param("scores", format!("must lie in [0, 1], got {s}")));
    }
    let positives = actuals.iter().filter(|&&a| a == 1).count();
    let negatives = actuals.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Empty("threshold sweep needs both positive and negative samples"));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut tn) = (0usize, 0usize);
            for (&s, &a) in scores.iter().zip(actuals) {
                match (s >= t, a == 1) {
                    (true, true) => tp += 1,
                    (false, false) => tn += 1,
                    _ => {}
                }
            }
            SweepPoint { threshold: t, sensitivity: tp as f64 / positives as f64, specificity: tn as f64 / negatives as f64 }
        })
        .collect())
}

/// Sweep over `n_thresholds` evenly spaced thresholds from 0 to 1 inclusive.
pub fn threshold_sweep(scores: &[f64], actuals: &[usize], n_thresholds: usize) -> Result<Vec<SweepPoint>> {
    if n_thresholds < 2 {
        return Err(Error::param("n_thresholds", format!("must be at least 2, got {n_thresholds}")));
    }
    let thresholds: Vec<f64> = (0..n_thresholds).map(|i| i as f64 / (n_thresholds - 1) as f64).collect();
    sweep_at(scores, actuals, &thresholds)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,sensitivity,specificity\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.sensitivity, p.specificity);
    }
    out
}
