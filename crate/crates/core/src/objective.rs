//! Joint objective: classification loss plus pixel-wise cross-entropy
//! against cue labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::clamped_ln;
use crate::tensor::{ClassId, LabelMap, ScoreVolume, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossStatus {
    Ok,
    /// Every target pixel was ignore; the value is 0 by convention.
    AllIgnored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationLoss {
    pub value: f64,
    pub pixels: u64,
    pub status: LossStatus,
}

/// Mean over non-ignored pixels of `-ln p_target(m)`, with probabilities
/// clamped as in the classification loss. `pred_softmax` must hold one
/// channel per label `0..num_labels`.
pub fn segmentation_loss(
    pred_softmax: &ScoreVolume,
    target: &LabelMap,
) -> Result<SegmentationLoss> {
    if pred_softmax.dims() != target.dims() {
        return Err(Error::DimensionMismatch {
            expected: pred_softmax.dims(),
            actual: target.dims(),
        });
    }
    let num_labels = pred_softmax.len();
    for c in 0..num_labels as ClassId {
        if pred_softmax.get(c).is_none() {
            return Err(Error::MissingClass(c));
        }
    }
    target.validate(num_labels)?;
    let channels: Vec<&[f32]> = (0..num_labels as ClassId)
        .map(|c| pred_softmax.get(c).expect("checked above").data())
        .collect();
    let mut total = 0f64;
    let mut pixels = 0u64;
    for (i, &t) in target.data().iter().enumerate() {
        if t == IGNORE {
            continue;
        }
        total -= clamped_ln(channels[t as usize][i] as f64);
        pixels += 1;
    }
    Ok(if pixels == 0 {
        SegmentationLoss {
            value: 0.0,
            pixels,
            status: LossStatus::AllIgnored,
        }
    } else {
        SegmentationLoss {
            value: total / pixels as f64,
            pixels,
            status: LossStatus::Ok,
        }
    })
}

/// Unweighted sum of the two losses.
pub fn combined_loss(cls: f64, seg: f64) -> f64 {
    cls + seg
}

/// `cls_weight * cls + seg_weight * seg`; the default objective uses 1:1.
pub fn combined_loss_weighted(cls: f64, seg: f64, cls_weight: f64, seg_weight: f64) -> f64 {
    cls_weight * cls + seg_weight * seg
}
