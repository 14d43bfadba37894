//! Confusion matrices and the precision / recall / F1 / accuracy report.
//!
//! Every metric is a ratio of integer counts, kept as a [`Ratio`] so that
//! reported percentages come from exact integer arithmetic:
//!
//! * precision `TP / (TP + FP)`
//! * recall `TP / (TP + FN)`
//! * F1 `2·P·R / (P + R)`, which equals `2TP / (2TP + FP + FN)`
//! * accuracy `trace / total`, i.e. `(TP + TN) / (TP + TN + FP + FN)` in
//!   the two-class case.
//!
//! A ratio with a zero denominator evaluates to 0 and the report carries a
//! warning for it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::error::{Error, Result};

/// A non-negative rational `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// The ratio as a percentage, truncated to `0.1` resolution and expressed
    /// in tenths of a percent: 231/232 gives 995, i.e. "99.5".
    pub fn permille(self) -> u64 {
        (self.num * 1000).checked_div(self.den).unwrap_or(0)
    }

    /// Truncated to whole percent.
    pub fn percent(self) -> u64 {
        (self.num * 100).checked_div(self.den).unwrap_or(0)
    }

    /// `"99.5"` style rendering of [`Ratio::permille`].
    pub fn percent_string(self) -> String {
        let p = self.permille();
        format!("{}.{}", p / 10, p % 10)
    }
}

/// `C×C` counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Builds a matrix from row-major counts.
    pub fn from_counts(names: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let c = names.len();
        if c == 0 {
            return Err(Error::Empty("confusion matrix"));
        }
        if counts.len() != c * c {
            return Err(Error::InvalidShape {
                op: "confusion matrix",
                shape: vec![counts.len()],
                reason: format!("expected {c}x{c} counts"),
            });
        }
        Ok(Self { names, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.names.len() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.count(i, i)).sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.count(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.num_classes()).filter(|&t| t != class).map(|t| self.count(t, class)).sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.num_classes()).filter(|&p| p != class).map(|p| self.count(class, p)).sum()
    }

    pub fn true_negatives(&self, class: usize) -> u64 {
        self.total() - self.true_positives(class) - self.false_positives(class) - self.false_negatives(class)
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio {
            num: self.trace(),
            den: self.total(),
        }
    }
}

/// Default class names `"0"`, `"1"`, ...
pub fn index_names(classes: usize) -> Vec<String> {
    (0..classes).map(|i| format!("{i}")).collect()
}

/// Tallies `(truth, prediction)` pairs.
pub fn confusion(truth: &[usize], predicted: &[usize], names: Vec<String>) -> Result<ConfusionMatrix> {
    let c = names.len();
    if truth.len() != predicted.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: vec![truth.len()],
            rhs: vec![predicted.len()],
        });
    }
    let mut counts = vec![0u64; c * c];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= c {
                return Err(Error::LabelOutOfRange { label, classes: c });
            }
        }
        counts[t * c + p] += 1;
    }
    ConfusionMatrix::from_counts(names, counts)
}

/// One-vs-rest metrics of a single class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub support: u64,
}

/// Per-class metrics and overall accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: Ratio,
    /// One entry per metric that hit a zero denominator.
    pub warnings: Vec<String>,
}

impl ClassReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Aligned plain-text table with percentages at 0.1 resolution.
    pub fn to_table(&self) -> String {
        let width = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(5).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
                c.name,
                c.precision.percent_string(),
                c.recall.percent_string(),
                c.f1.percent_string(),
                c.support
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  ({}/{})",
            "accuracy",
            self.accuracy.percent_string(),
            self.accuracy.num,
            self.accuracy.den
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    /// `class,precision,recall,f1` rows followed by an `accuracy` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1\n");
        for c in &self.classes {
            let _ = writeln!(out, "{},{},{},{}", c.name, c.precision.value(), c.recall.value(), c.f1.value());
        }
        let _ = writeln!(out, "accuracy,{},,", self.accuracy.value());
        out
    }
}

/// Precision, recall and F1 per class (one-vs-rest) and overall accuracy.
pub fn kpis(cm: &ConfusionMatrix) -> Result<ClassReport> {
    if cm.total() == 0 {
        return Err(Error::Empty("kpis"));
    }
    let mut warnings = Vec::new();
    let mut classes = Vec::with_capacity(cm.num_classes());
    for (i, name) in cm.names().iter().enumerate() {
        let tp = cm.true_positives(i);
        let fp = cm.false_positives(i);
        let fn_ = cm.false_negatives(i);
        let precision = Ratio { num: tp, den: tp + fp };
        let recall = Ratio { num: tp, den: tp + fn_ };
        // 2PR/(P+R) is zero whenever P or R is; the count form then has
        // numerator 0 as well.
        let f1 = Ratio {
            num: 2 * tp,
            den: 2 * tp + fp + fn_,
        };
        for (metric, r) in [("precision", precision), ("recall", recall), ("f1", f1)] {
            if r.den == 0 {
                warnings.push(format!("{metric} of class {name} is undefined (0/0), reported as 0"));
            }
        }
        classes.push(ClassMetrics {
            name: name.clone(),
            precision,
            recall,
            f1,
            support: tp + fn_,
        });
    }
    Ok(ClassReport {
        classes,
        accuracy: cm.accuracy(),
        warnings,
    })
}

/// Folds every class other than `positive` into a single negative class.
///
/// The positive class keeps index 0 when it was class 0 and index 1
/// otherwise, so a two-class matrix folds onto itself.
pub fn binary_collapse(cm: &ConfusionMatrix, positive: usize) -> Result<ConfusionMatrix> {
    let c = cm.num_classes();
    if c < 2 {
        return Err(Error::Config("binary collapse needs at least 2 classes".into()));
    }
    if positive >= c {
        return Err(Error::LabelOutOfRange { label: positive, classes: c });
    }
    let pos_index = usize::from(positive != 0);
    let fold = |k: usize| if k == positive { pos_index } else { 1 - pos_index };
    let mut counts = vec![0u64; 4];
    for t in 0..c {
        for p in 0..c {
            counts[fold(t) * 2 + fold(p)] += cm.count(t, p);
        }
    }
    let negative_name = if c == 2 {
        cm.names()[1 - positive].clone()
    } else {
        format!("not {}", cm.names()[positive])
    };
    let mut names = vec![negative_name.clone(), negative_name];
    names[pos_index] = cm.names()[positive].clone();
    ConfusionMatrix::from_counts(names, counts)
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half (the Mann–Whitney form of the ROC area).
pub fn auc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::Empty("auc"));
    }
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (positives.len() * negatives.len()) as f64)
}
