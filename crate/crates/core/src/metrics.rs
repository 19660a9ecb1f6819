//! Classification metrics: accuracy, confusion matrix, one-vs-rest and
//! micro/macro-averaged ROC curves with trapezoidal AUC.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Array2;
use crate::error::{Error, Result};

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::LabelOutOfRange { label: p.max(l), classes });
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Score cut reached at each point; the first is `+inf`.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5).sum()
}

/// Threshold sweep over descending unique scores. Samples sharing a score
/// move the curve in one diagonal step.
pub fn binary_roc(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let cut = scores[order[i]];
        while i < order.len() && scores[order[i]] == cut {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(cut);
    }
    let auc = trapezoid(&points);
    Some(RocCurve { points, thresholds, auc })
}

pub fn roc_one_vs_rest(scores: &Array2, labels: &[usize], class: usize) -> Result<RocCurve> {
    let column: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, class)).collect();
    let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
    binary_roc(&column, &positive).ok_or(Error::DegenerateClass(class))
}

/// One binary ROC over every `(sample, class)` pair.
pub fn micro_average_roc(scores: &Array2, labels: &[usize]) -> Result<RocCurve> {
    let mut flat = Vec::with_capacity(scores.rows() * scores.cols());
    let mut positive = Vec::with_capacity(flat.capacity());
    for (r, &l) in labels.iter().enumerate() {
        for c in 0..scores.cols() {
            flat.push(scores.get(r, c));
            positive.push(c == l);
        }
    }
    binary_roc(&flat, &positive).ok_or_else(|| Error::InvalidArgument("micro-average needs >= 2 classes and >= 1 sample".into()))
}

/// Lowest and highest tpr of a curve at fpr `x` (they differ on vertical
/// segments), interpolating linearly between vertices.
fn tpr_range(curve: &RocCurve, x: f64) -> (f64, f64) {
    let pts = &curve.points;
    let lo = pts.partition_point(|p| p.0 < x);
    let hi = pts.partition_point(|p| p.0 <= x);
    if lo < hi {
        return (pts[lo].1, pts[hi - 1].1);
    }
    let (a, b) = (pts[lo - 1], pts[lo]);
    let y = a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0);
    (y, y)
}

/// Pointwise mean of per-class curves over the union of their fpr values.
pub fn macro_average_roc(curves: &[&RocCurve]) -> Option<RocCurve> {
    if curves.is_empty() {
        return None;
    }
    let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let k = curves.len() as f64;
    let mut points = Vec::with_capacity(grid.len() * 2);
    for &x in &grid {
        let (lo, hi) = curves.iter().map(|c| tpr_range(c, x)).fold((0.0, 0.0), |acc, r| (acc.0 + r.0, acc.1 + r.1));
        points.push((x, lo / k));
        if hi != lo {
            points.push((x, hi / k));
        }
    }
    let thresholds = vec![f64::NAN; points.len()];
    let auc = trapezoid(&points);
    Some(RocCurve { points, thresholds, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    /// `None` for classes without positives or negatives.
    pub per_class_auc: Vec<Option<f64>>,
    pub micro_auc: f64,
    pub macro_auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

/// Report plus the curves behind it: per-class (absent for degenerate
/// classes), micro and macro.
pub struct Evaluated {
    pub report: MetricsReport,
    pub per_class: Vec<Option<RocCurve>>,
    pub micro: RocCurve,
    pub macro_avg: Option<RocCurve>,
}

pub fn evaluate_scores(scores: &Array2, preds: &[usize], labels: &[usize]) -> Result<Evaluated> {
    let classes = scores.cols();
    let per_class: Vec<Option<RocCurve>> = (0..classes).map(|c| roc_one_vs_rest(scores, labels, c).ok()).collect();
    let micro = micro_average_roc(scores, labels)?;
    let valid: Vec<&RocCurve> = per_class.iter().flatten().collect();
    let macro_avg = macro_average_roc(&valid);
    let report = MetricsReport {
        samples: labels.len(),
        accuracy: accuracy(preds, labels),
        per_class_auc: per_class.iter().map(|c| c.as_ref().map(|c| c.auc)).collect(),
        micro_auc: micro.auc,
        macro_auc: macro_avg.as_ref().map(|c| c.auc),
        confusion: confusion(preds, labels, classes)?,
    };
    Ok(Evaluated { report, per_class, micro, macro_avg })
}

pub fn write_roc_csv<W: Write>(mut w: W, curve: &RocCurve) -> std::io::Result<()> {
    writeln!(w, "fpr,tpr,threshold")?;
    for (&(fpr, tpr), &t) in curve.points.iter().zip(&curve.thresholds) {
        writeln!(w, "{fpr},{tpr},{t}")?;
    }
    Ok(())
}

/// Writes `metrics.json`, `roc_class<k>.csv`, `roc_micro.csv` and
/// `roc_macro.csv` into `dir`.
pub fn export_metrics(dir: impl AsRef<Path>, evaluated: &Evaluated) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: String, bytes: Vec<u8>| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    let mut json = serde_json::to_vec_pretty(&evaluated.report)?;
    json.push(b'\n');
    write("metrics.json".into(), json)?;
    let csv = |curve: &RocCurve| {
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, curve).expect("writing to a Vec");
        buf
    };
    for (k, curve) in evaluated.per_class.iter().enumerate() {
        if let Some(curve) = curve {
            write(format!("roc_class{k}.csv"), csv(curve))?;
        }
    }
    write("roc_micro.csv".into(), csv(&evaluated.micro))?;
    if let Some(m) = &evaluated.macro_avg {
        write("roc_macro.csv".into(), csv(m))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]), 1.0);
        assert_eq!(accuracy(&[1, 2, 0], &[0, 1, 2]), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 2, 1]), 0.75);
    }

    #[test]
    fn confusion_layout() {
        let c = confusion(&[0], &[1], 3).unwrap();
        assert_eq!(c.counts[1][0], 1);
        assert_eq!(c.total(), 1);
        let perfect = confusion(&[0, 1, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(perfect.trace(), 4);
        assert_eq!(perfect.support(), vec![1, 2, 1]);
        assert!(confusion(&[3], &[0], 3).is_err());
    }

    #[test]
    fn separated_and_tied_scores() {
        let roc = binary_roc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));

        let tied = binary_roc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(tied.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(tied.auc, 0.5);
        assert!(binary_roc(&[0.1, 0.2], &[true, true]).is_none());
    }

    #[test]
    fn degenerate_class_is_reported() {
        let scores = Array2::from_vec(2, 2, vec![0.7, 0.3, 0.4, 0.6]).unwrap();
        assert!(matches!(roc_one_vs_rest(&scores, &[0, 0], 1), Err(Error::DegenerateClass(1))));
    }

    #[test]
    fn micro_average_extremes() {
        let one_hot = Array2::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(micro_average_roc(&one_hot, &[0, 1, 2]).unwrap().auc, 1.0);
        let uniform = Array2::filled(4, 3, 1.0 / 3.0);
        assert_eq!(micro_average_roc(&uniform, &[0, 1, 2, 1]).unwrap().auc, 0.5);
    }

    #[test]
    fn macro_average_of_identical_curves_is_that_curve() {
        let roc = binary_roc(&[0.9, 0.6, 0.5, 0.1, 0.3], &[true, false, true, false, true]).unwrap();
        let avg = macro_average_roc(&[&roc, &roc]).unwrap();
        assert!((avg.auc - roc.auc).abs() < 1e-15);
    }

    #[test]
    fn export_is_deterministic() {
        let scores = Array2::from_vec(4, 2, vec![0.8, 0.2, 0.4, 0.6, 0.55, 0.45, 0.1, 0.9]).unwrap();
        let labels = [0, 1, 0, 1];
        let preds = [0, 1, 0, 1];
        let ev = evaluate_scores(&scores, &preds, &labels).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        export_metrics(a.path(), &ev).unwrap();
        export_metrics(b.path(), &ev).unwrap();
        for f in ["metrics.json", "roc_class0.csv", "roc_class1.csv", "roc_micro.csv", "roc_macro.csv"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let text = std::fs::read_to_string(a.path().join("roc_micro.csv")).unwrap();
        assert_eq!(text.lines().count() - 1, ev.micro.points.len());
        let parsed: MetricsReport = serde_json::from_str(&std::fs::read_to_string(a.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(parsed, ev.report);
    }
}
