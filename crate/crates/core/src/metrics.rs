//! Classification metrics: confusion matrix, per-class and averaged
//! precision/recall/F1, and one-vs-rest AUROC.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(predicted: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut cm = Self::new(num_classes);
        for (&p, &y) in predicted.iter().zip(labels) {
            for v in [p, y] {
                if v >= num_classes {
                    return Err(Error::IndexOutOfRange {
                        index: v,
                        limit: num_classes,
                    });
                }
            }
            cm.counts[y][p] += 1;
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// True count per class.
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Header `true\predicted,<labels...>` followed by one row per true class.
    pub fn to_csv(&self, class_labels: &[String]) -> String {
        let name = |i: usize| class_labels.get(i).cloned().unwrap_or_else(|| i.to_string());
        let quote = |s: String| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s
            }
        };
        let mut out = String::from("true\\predicted");
        for j in 0..self.num_classes() {
            out.push(',');
            out.push_str(&quote(name(j)));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&quote(name(i)));
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Absent when the evaluated labels contain only one side of this class.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: u64,
    pub accuracy: f64,
    pub macro_avg: Averages,
    /// Support-weighted; the headline figures.
    pub weighted_avg: Averages,
    /// Mean over classes whose AUROC is defined.
    pub auroc_macro: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl EvalReport {
    /// Rates from counts alone; AUROC fields are left absent.
    pub fn from_confusion(confusion: ConfusionMatrix, class_labels: &[String]) -> Self {
        let k = confusion.num_classes();
        let total = confusion.total();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion.get(c, c);
                let precision = ratio(tp, confusion.predicted_count(c));
                let recall = ratio(tp, confusion.support(c));
                ClassMetrics {
                    label: class_labels.get(c).cloned().unwrap_or_else(|| c.to_string()),
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support: confusion.support(c),
                    auroc: None,
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            if total == 0 {
                0.0
            } else {
                per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
            }
        };
        Self {
            samples: total,
            accuracy: ratio(confusion.trace(), total),
            macro_avg: Averages {
                precision: mean(|m| m.precision),
                recall: mean(|m| m.recall),
                f1: mean(|m| m.f1),
            },
            weighted_avg: Averages {
                precision: weighted(|m| m.precision),
                recall: weighted(|m| m.recall),
                f1: weighted(|m| m.f1),
            },
            auroc_macro: None,
            per_class,
            confusion,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "samples   {}", self.samples);
        let _ = writeln!(out, "accuracy  {:.4}", self.accuracy);
        let _ = writeln!(out, "auroc     {}", opt(self.auroc_macro));
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9}", "average", "precision", "recall", "f1");
        for (name, a) in [("weighted", &self.weighted_avg), ("macro", &self.macro_avg)] {
            let _ = writeln!(out, "{name:<12} {:>9.4} {:>9.4} {:>9.4}", a.precision, a.recall, a.f1);
        }
        let _ = writeln!(out);
        let width = self.per_class.iter().map(|m| m.label.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "{:<width$} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "class", "precision", "recall", "f1", "auroc", "support"
        );
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>9}",
                m.label,
                m.precision,
                m.recall,
                m.f1,
                opt(m.auroc),
                m.support
            );
        }
        out
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half, via average ranks. `None` without both classes.
pub fn auroc_ovr(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("AUROC score is NaN".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Rank sums are kept doubled so they stay integral.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean; doubled: i + j + 2
        let avg2 = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&r| positive[r]).count() as u128;
        pos_rank_sum2 += avg2 * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(Some(u2 as f64 / (2 * p * n) as f64))
}

/// Full report from class probabilities. Predictions are the row argmax
/// with ties going to the lowest class index.
pub fn evaluate(probabilities: &Matrix, labels: &[usize], class_labels: &[String]) -> Result<EvalReport> {
    let (b, k) = probabilities.shape();
    if b == 0 {
        return Err(Error::Shape("cannot evaluate an empty set".into()));
    }
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} probability rows", labels.len())));
    }
    let predicted = probabilities.argmax_rows();
    let confusion = ConfusionMatrix::from_predictions(&predicted, labels, k)?;
    let mut report = EvalReport::from_confusion(confusion, class_labels);
    let mut defined = Vec::new();
    for c in 0..k {
        let scores: Vec<f64> = (0..b).map(|i| probabilities.get(i, c)).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let auc = auroc_ovr(&scores, &positive)?;
        report.per_class[c].auroc = auc;
        defined.extend(auc);
    }
    if !defined.is_empty() {
        report.auroc_macro = Some(defined.iter().sum::<f64>() / defined.len() as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_built_two_class_matrix() {
        let cm = ConfusionMatrix::from_counts(vec![vec![8, 2], vec![3, 7]]).unwrap();
        let r = EvalReport::from_confusion(cm, &names(2));
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].precision, 8.0 / 11.0);
        assert_eq!(r.per_class[0].recall, 0.8);
        assert_eq!(r.per_class[1].precision, 7.0 / 9.0);
        assert_eq!(r.per_class[1].recall, 0.7);
    }

    #[test]
    fn perfect_predictions() {
        let p = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.7, 0.3]]).unwrap();
        let r = evaluate(&p, &[0, 1, 0], &names(2)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(r.confusion.counts(), &[vec![2, 0], vec![0, 1]]);
        assert_eq!(r.auroc_macro, Some(1.0));
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let p = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.6, 0.4]]).unwrap();
        let r = evaluate(&p, &[0, 1], &names(2)).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        // weighted recall equals accuracy
        assert_eq!(r.weighted_avg.recall, r.accuracy);
    }

    #[test]
    fn argmax_ties_pick_lowest_class() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let r = evaluate(&p, &[1], &names(2)).unwrap();
        assert_eq!(r.confusion.get(1, 0), 1);
        assert_eq!(r.auroc_macro, None);
    }

    #[test]
    fn auroc_examples() {
        let a = auroc_ovr(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert_eq!(a, Some(0.75));
        assert_eq!(auroc_ovr(&[0.3; 5], &[true, false, true, false, false]).unwrap(), Some(0.5));
        assert_eq!(auroc_ovr(&[1.0, 2.0], &[false, true]).unwrap(), Some(1.0));
        assert_eq!(auroc_ovr(&[1.0, 2.0], &[true, true]).unwrap(), None);
    }

    #[test]
    fn label_out_of_range() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(evaluate(&p, &[2], &names(2)).is_err());
    }

    #[test]
    fn confusion_csv_layout() {
        let cm = ConfusionMatrix::from_counts(vec![vec![8, 2], vec![3, 7]]).unwrap();
        let csv = cm.to_csv(&["home".into(), "left, unseen".into()]);
        assert_eq!(csv, "true\\predicted,home,\"left, unseen\"\nhome,8,2\n\"left, unseen\",3,7\n");
    }
}
