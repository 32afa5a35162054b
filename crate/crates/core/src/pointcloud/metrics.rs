use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Intersection and union counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassIou {
    pub intersection: u64,
    pub union: u64,
}

impl ClassIou {
    /// `None` when the class is absent from both prediction and ground truth.
    pub fn iou(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

/// Per-class intersection/union counts.
pub fn confusion_iou(pred: &[u32], gt: &[u32], num_classes: usize) -> Result<Vec<ClassIou>> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    let mut out = vec![ClassIou::default(); num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        for label in [p, g] {
            if label as usize >= num_classes {
                return Err(Error::LabelOutOfRange { label, classes: num_classes });
            }
        }
        if p == g {
            out[p as usize].intersection += 1;
            out[p as usize].union += 1;
        } else {
            out[p as usize].union += 1;
            out[g as usize].union += 1;
        }
    }
    Ok(out)
}

/// Mean IoU over the classes that occur in `pred` or `gt`.
pub fn miou(pred: &[u32], gt: &[u32], num_classes: usize) -> Result<f64> {
    mean_iou(&confusion_iou(pred, gt, num_classes)?)
}

/// Mean IoU over classes present in prediction or ground truth.
pub fn mean_iou(classes: &[ClassIou]) -> Result<f64> {
    let present: Vec<f64> = classes.iter().filter_map(ClassIou::iou).collect();
    if present.is_empty() {
        return Err(Error::InvalidCloud("mIoU of an empty labelling".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
