//! ROC curves and the area beneath them.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples scoring at least this value are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From `(0, 0)` at threshold `+∞` to `(1, 1)` at the lowest score.
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

/// Trapezoidal area under a polyline of `(fpr, tpr)` points.
pub fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Sweeps the sorted unique scores as thresholds; label 1 is the positive class.
///
/// Tied scores move the curve diagonally, which credits half of each tied
/// positive/negative pair.
pub fn roc_auroc(scores: &[f64], labels: &[usize]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidShape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc scores"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(DataError::SingleClass.into());
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auroc = trapezoid(&points);
    Ok(RocCurve { points, auroc })
}

/// `threshold,fpr,tpr` rows, the first threshold written as `inf`.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "fpr", "tpr"]).expect("in-memory csv");
    for p in &curve.points {
        let t = if p.threshold.is_infinite() {
            "inf".to_string()
        } else {
            p.threshold.to_string()
        };
        w.write_record([t, p.fpr.to_string(), p.tpr.to_string()])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is UTF-8")
}
