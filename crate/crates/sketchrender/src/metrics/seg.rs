//! Segmentation quality: sensitivity, accuracy, and ROC AUC.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Confusion-matrix summaries of a binary prediction. Sensitivity is
/// absent (not zero) when the ground truth has no positive pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScores {
    pub sen: Option<f64>,
    pub acc: f64,
}

fn ensure_binary(op: &'static str, t: &Tensor) -> Result<()> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(op, "map must be two-valued {0,1}"));
    }
    Ok(())
}

/// Sensitivity TP/(TP+FN) and accuracy (TP+TN)/total of a binary
/// prediction against a binary ground truth.
pub fn seg_confusion(pred: &Tensor, gt: &Tensor) -> Result<SegScores> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "seg_confusion",
            format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        ));
    }
    if pred.numel() == 0 {
        return Err(Error::invalid("seg_confusion", "empty maps"));
    }
    ensure_binary("seg_confusion", pred)?;
    ensure_binary("seg_confusion", gt)?;
    let (mut tp, mut tn, mut fp, mut fnn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
        }
    }
    let sen = if tp + fnn > 0 {
        Some(tp as f64 / (tp + fnn) as f64)
    } else {
        None
    };
    let acc = (tp + tn) as f64 / (tp + tn + fp + fnn) as f64;
    Ok(SegScores { sen, acc })
}

/// Area under the ROC curve by rank statistics (Mann-Whitney U with
/// average ranks for ties): P(score_pos > score_neg) + P(tie)/2.
/// Being purely rank-based, the value is exactly invariant under any
/// strictly increasing transform of the scores.
pub fn auc(scores: &Tensor, gt: &Tensor) -> Result<f64> {
    if scores.shape() != gt.shape() {
        return Err(Error::shape(
            "auc",
            format!("{:?} vs {:?}", scores.shape(), gt.shape()),
        ));
    }
    ensure_binary("auc", gt)?;
    if scores.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "auc" });
    }
    let n = scores.numel();
    let pos = gt.data().iter().filter(|&&g| g == 1.0).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "auc",
            "ground truth must contain both classes",
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.data()[a].total_cmp(&scores.data()[b]));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores.data()[order[j + 1]] == scores.data()[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if gt.data()[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos as f64 * (pos as f64 + 1.0)) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}
