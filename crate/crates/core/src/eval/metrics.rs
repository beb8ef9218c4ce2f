//! Field voting, per-class metrics and confusion matrices.

use std::collections::HashMap;

use super::EvalError;
use crate::hierarchy::ClassId;

/// Replaces every prediction inside a field by the field's modal class.
/// Ties go to the lowest class id; pixels with field id 0 are left alone.
pub fn majority_vote(pred: &[ClassId], field_ids: &[u32]) -> Vec<ClassId> {
    assert_eq!(pred.len(), field_ids.len(), "aligned maps");
    let mut tallies: HashMap<u32, HashMap<ClassId, usize>> = HashMap::new();
    for (&p, &f) in pred.iter().zip(field_ids) {
        if f > 0 {
            *tallies.entry(f).or_default().entry(p).or_default() += 1;
        }
    }
    let winners: HashMap<u32, ClassId> = tallies
        .into_iter()
        .map(|(f, t)| {
            let best = t
                .into_iter()
                .max_by(|(ca, na), (cb, nb)| na.cmp(nb).then(cb.cmp(ca)))
                .map(|(c, _)| c)
                .expect("non-empty tally");
            (f, best)
        })
        .collect();
    pred.iter()
        .zip(field_ids)
        .map(|(&p, f)| winners.get(f).copied().unwrap_or(p))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Pixels of this class in the truth.
    pub support: u64,
    pub predicted: u64,
    /// Precision had no predicted pixels and was set to 0.
    pub precision_undefined: bool,
    /// Recall had no true pixels and was set to 0.
    pub recall_undefined: bool,
}

impl ClassMetrics {
    /// Whether the class takes part in macro averages.
    pub fn counted(&self) -> bool {
        self.support > 0 || self.predicted > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub classes: usize,
    pub pixels: u64,
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean of per-class F1.
    pub macro_f1: f64,
    /// Harmonic mean of macro precision and macro recall.
    pub harmonic_f1: f64,
    /// `confusion[truth][pred]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    /// Confusion rows scaled to sum to 1; rows without true pixels stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.confusion
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter().map(|&v| if n == 0 { 0.0 } else { v as f64 / n as f64 }).collect()
            })
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(pred: &[ClassId], truth: &[ClassId], mask: &[bool], classes: usize) -> Result<Metrics, EvalError> {
    if pred.len() != truth.len() || mask.len() != truth.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions, {} labels, {} mask entries",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut pixels = 0u64;
    for ((&p, &t), _) in pred.iter().zip(truth).zip(mask).filter(|(_, &m)| m) {
        let (pi, ti) = (p as usize, t as usize);
        if pi >= classes || ti >= classes {
            return Err(EvalError::ClassRange {
                class: pi.max(ti),
                classes,
            });
        }
        confusion[ti][pi] += 1;
        pixels += 1;
    }
    if pixels == 0 {
        return Err(EvalError::EmptyMask);
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let (precision, precision_undefined) = ratio(tp, predicted);
            let (recall, recall_undefined) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                predicted,
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let counted: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.counted()).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| counted.iter().map(|m| f(m)).sum::<f64>() / counted.len() as f64;
    let macro_precision = mean(|m| m.precision);
    let macro_recall = mean(|m| m.recall);
    let macro_f1 = mean(|m| m.f1);
    let harmonic_f1 = if macro_precision + macro_recall > 0.0 {
        2.0 * macro_precision * macro_recall / (macro_precision + macro_recall)
    } else {
        0.0
    };
    Ok(Metrics {
        classes,
        pixels,
        overall_accuracy: correct as f64 / pixels as f64,
        per_class,
        macro_precision,
        macro_recall,
        macro_f1,
        harmonic_f1,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_examples() {
        assert_eq!(majority_vote(&[0, 0, 1], &[1, 1, 1]), vec![0, 0, 0]);
        assert_eq!(majority_vote(&[3, 3, 1, 1], &[2, 2, 2, 2]), vec![1, 1, 1, 1]);
        assert_eq!(majority_vote(&[4, 2, 2], &[0, 5, 0]), vec![4, 2, 2]);
    }

    #[test]
    fn perfect_and_constant() {
        let t = [0, 1, 2, 1];
        let m = compute_metrics(&t, &t, &[true; 4], 3).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        let n = m.row_normalized();
        for (i, row) in n.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let m = compute_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], &[true; 4], 2).unwrap();
        assert_eq!(m.overall_accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!(m.per_class[1].precision_undefined);
    }

    #[test]
    fn absent_classes_dropped_and_errors() {
        let m = compute_metrics(&[0, 1], &[0, 1], &[true, true], 5).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert!(matches!(compute_metrics(&[0], &[0], &[false], 2), Err(EvalError::EmptyMask)));
        assert!(matches!(compute_metrics(&[3], &[0], &[true], 2), Err(EvalError::ClassRange { .. })));
    }
}
