//! Pixel-level confusion matrices, per-class F1, balanced accuracy, fold
//! aggregation and ensemble prediction.

mod predict;
mod tables;

pub use predict::{ensemble_predict, predict_probabilities, predict_quarter, ProbabilityMap, PREDICT_BATCH};
pub use tables::{comparison_table, damage_map, dual_table, format_table, write_damage_map, ReportRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{ClassScheme, LabelMask, UNLABELED};

/// `counts[t * classes + p]` = pixels of truth `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    #[inline]
    pub fn add(&mut self, truth: usize, pred: usize, n: u64) {
        self.counts[truth * self.classes + pred] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Pixels whose truth is `class`.
    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Regroups rows and columns from `from` classes onto a coarser scheme.
    pub fn coarsen(&self, from: ClassScheme, to: ClassScheme) -> Result<ConfusionMatrix> {
        if from.num_classes() != self.classes {
            return Err(Error::InvalidArgument(format!(
                "matrix has {} classes, scheme {from:?} has {}",
                self.classes,
                from.num_classes()
            )));
        }
        let mut out = ConfusionMatrix::new(to.num_classes());
        for t in 0..self.classes {
            for p in 0..self.classes {
                let map = |c: usize| {
                    from.coarsen(c as u8, to)
                        .map(|v| v as usize)
                        .ok_or_else(|| Error::InvalidArgument(format!("{to:?} is finer than {from:?}")))
                };
                out.add(map(t)?, map(p)?, self.get(t, p));
            }
        }
        Ok(out)
    }
}

/// Counts (truth, prediction) pairs over pixels where the truth is labeled.
pub fn confusion(pred: &LabelMask, truth: &LabelMask, classes: usize) -> Result<ConfusionMatrix> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        if t == UNLABELED {
            continue;
        }
        if t as usize >= classes || p as usize >= classes {
            return Err(Error::LabelOutOfRange {
                code: if t as usize >= classes { t } else { p },
                classes,
            });
        }
        cm.add(t as usize, p as usize, 1);
    }
    Ok(cm)
}

/// `2TP / (2TP + FP + FN)` per class; zero where the denominator vanishes.
pub fn f1_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes())
        .map(|i| {
            let tp = cm.get(i, i);
            let fp: u64 = (0..cm.classes()).filter(|&t| t != i).map(|t| cm.get(t, i)).sum();
            let fn_: u64 = (0..cm.classes()).filter(|&p| p != i).map(|p| cm.get(i, p)).sum();
            let den = 2 * tp + fp + fn_;
            if den == 0 {
                0.0
            } else {
                (2 * tp) as f64 / den as f64
            }
        })
        .collect()
}

/// Classes with neither truth nor predicted pixels; their F1 is reported as 0.
pub fn absent_classes(cm: &ConfusionMatrix) -> Vec<bool> {
    (0..cm.classes())
        .map(|i| cm.support(i) == 0 && (0..cm.classes()).all(|t| cm.get(t, i) == 0))
        .collect()
}

/// Mean recall over classes with at least one truth pixel. Classes without
/// support are excluded with a warning; no support at all gives 0.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..cm.classes() {
        let support = cm.support(i);
        if support == 0 {
            log::warn!("class {i} has no labeled pixels; excluded from balanced accuracy");
            continue;
        }
        sum += cm.get(i, i) as f64 / support as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Which fold a report describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldTag {
    Fold(usize),
    Mean,
    All,
}

impl std::fmt::Display for FoldTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FoldTag::Fold(k) => write!(f, "fold {k}"),
            FoldTag::Mean => f.write_str("mean"),
            FoldTag::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: ClassScheme,
    pub fold: FoldTag,
    pub per_class_f1: Vec<f64>,
    /// Classes without truth or predictions in this report.
    pub absent: Vec<bool>,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
    /// `None` for averaged reports.
    pub confusion: Option<ConfusionMatrix>,
}

/// Metrics of one confusion matrix under `scheme`.
pub fn report(cm: &ConfusionMatrix, scheme: ClassScheme, fold: FoldTag) -> Result<MetricsReport> {
    if cm.classes() != scheme.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "{}-class matrix reported under {scheme:?}",
            cm.classes()
        )));
    }
    let per_class_f1 = f1_per_class(cm);
    let macro_f1 = per_class_f1.iter().sum::<f64>() / per_class_f1.len() as f64;
    Ok(MetricsReport {
        scheme,
        fold,
        absent: absent_classes(cm),
        macro_f1,
        balanced_accuracy: balanced_accuracy(cm),
        per_class_f1,
        confusion: Some(cm.clone()),
    })
}

/// Arithmetic mean of fold reports, metric by metric.
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let Some(first) = reports.first() else {
        return Err(Error::InvalidArgument("no reports to average".into()));
    };
    if reports
        .iter()
        .any(|r| r.scheme != first.scheme || r.per_class_f1.len() != first.per_class_f1.len())
    {
        return Err(Error::InvalidArgument(
            "fold reports use different class schemes".into(),
        ));
    }
    let n = reports.len() as f64;
    let c = first.per_class_f1.len();
    let per_class_f1 = (0..c)
        .map(|i| reports.iter().map(|r| r.per_class_f1[i]).sum::<f64>() / n)
        .collect();
    Ok(MetricsReport {
        scheme: first.scheme,
        fold: FoldTag::Mean,
        per_class_f1,
        absent: (0..c).map(|i| reports.iter().all(|r| r.absent[i])).collect(),
        macro_f1: reports.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        balanced_accuracy: reports.iter().map(|r| r.balanced_accuracy).sum::<f64>() / n,
        confusion: None,
    })
}

/// Confusion of a prediction made under `model_scheme`, evaluated under the
/// same or a coarser `scheme`. `truth` holds four-class codes.
pub fn evaluate_prediction(
    pred: &LabelMask,
    model_scheme: ClassScheme,
    truth: &LabelMask,
    scheme: ClassScheme,
) -> Result<ConfusionMatrix> {
    let cm = confusion(
        pred,
        &crate::geodata::merge_classes(truth, model_scheme),
        model_scheme.num_classes(),
    )?;
    if model_scheme == scheme {
        Ok(cm)
    } else {
        cm.coarsen(model_scheme, scheme)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_f1() {
        // class 0: TP 2, FP 1, FN 1
        let cm = ConfusionMatrix::from_counts(2, vec![2, 1, 1, 0]).unwrap();
        assert!((f1_per_class(&cm)[0] - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction() {
        let m = LabelMask::from_raw(4, 1, vec![0, 1, 2, UNLABELED]).unwrap();
        let cm = confusion(&m, &m, 3).unwrap();
        assert_eq!(cm.total(), 3);
        assert_eq!(f1_per_class(&cm), vec![1.0; 3]);
        assert_eq!(balanced_accuracy(&cm), 1.0);
    }

    #[test]
    fn empty_support() {
        let t = LabelMask::unlabeled(3, 3);
        let p = LabelMask::from_raw(3, 3, vec![1; 9]).unwrap();
        let cm = confusion(&p, &t, 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(balanced_accuracy(&cm), 0.0);
        assert_eq!(absent_classes(&cm), vec![true, true]);
    }

    #[test]
    fn recalls_one_and_half() {
        let cm = ConfusionMatrix::from_counts(2, vec![4, 0, 3, 3]).unwrap();
        assert!((balanced_accuracy(&cm) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mean_of_folds() {
        let mk = |f: f64| MetricsReport {
            scheme: ClassScheme::TwoClass,
            fold: FoldTag::Fold(0),
            per_class_f1: vec![f, f],
            absent: vec![false; 2],
            macro_f1: f,
            balanced_accuracy: f,
            confusion: None,
        };
        let m = mean_report(&[mk(0.5), mk(0.6), mk(0.7), mk(0.6)]).unwrap();
        assert!((m.macro_f1 - 0.6).abs() < 1e-12);
        assert_eq!(m.fold, FoldTag::Mean);
        let mut other = mk(0.1);
        other.scheme = ClassScheme::ThreeClass;
        assert!(mean_report(&[mk(0.5), other]).is_err());
    }

    #[test]
    fn coarsened_matrix_sums_blocks() {
        let cm = ConfusionMatrix::from_counts(3, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let two = cm.coarsen(ClassScheme::ThreeClass, ClassScheme::TwoClass).unwrap();
        assert_eq!(two, ConfusionMatrix::from_counts(2, vec![1, 5, 11, 28]).unwrap());
        assert!(two.coarsen(ClassScheme::TwoClass, ClassScheme::ThreeClass).is_err());
    }

    #[test]
    fn out_of_range_prediction_rejected() {
        let t = LabelMask::from_raw(1, 1, vec![0]).unwrap();
        let p = LabelMask::from_raw(1, 1, vec![3]).unwrap();
        assert!(confusion(&p, &t, 3).is_err());
    }
}
