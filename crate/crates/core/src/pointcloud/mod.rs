//! Point-cloud data model, synthetic scenes, preprocessing and the mIoU metric.

mod augment;
mod grid;
pub mod io;
mod metrics;
mod scene;

pub use augment::{augment, AugmentConfig};
pub use grid::{fnv1a_64, grid_sample, quantize};
pub use metrics::{confusion_iou, mean_iou, miou, ClassIou};
pub use scene::{generate_scene, ComponentTopology, Scene, SceneShape, SceneSpec};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// N points in meters with optional intensity and class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    coords: Vec<[f64; 3]>,
    intensity: Option<Vec<f64>>,
    labels: Option<Vec<u32>>,
    num_classes: usize,
}

impl PointCloud {
    /// Validating constructor. `num_classes` is only checked when labels are present.
    pub fn new(
        coords: Vec<[f64; 3]>,
        intensity: Option<Vec<f64>>,
        labels: Option<Vec<u32>>,
        num_classes: usize,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidCloud("a cloud needs at least one point".into()));
        }
        if let Some(i) = coords.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(intensity) = &intensity {
            if intensity.len() != coords.len() {
                return Err(Error::LengthMismatch(intensity.len(), coords.len()));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != coords.len() {
                return Err(Error::LengthMismatch(labels.len(), coords.len()));
            }
            if num_classes == 0 {
                return Err(Error::InvalidCloud("labelled cloud with zero classes".into()));
            }
            if let Some(&label) = labels.iter().find(|&&l| l as usize >= num_classes) {
                return Err(Error::LabelOutOfRange { label, classes: num_classes });
            }
        }
        Ok(Self { coords, intensity, labels, num_classes })
    }

    /// Unlabelled cloud from bare coordinates.
    pub fn from_coords(coords: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(coords, None, None, 0)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidCloud(format!("index {bad} out of range")));
        }
        let coords = indices.iter().map(|&i| self.coords[i]).collect();
        let intensity = self.intensity.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        let labels = self.labels.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        Self::new(coords, intensity, labels, self.num_classes)
    }

    pub(crate) fn with_coords(&self, coords: Vec<[f64; 3]>) -> Self {
        debug_assert_eq!(coords.len(), self.coords.len());
        Self { coords, ..self.clone() }
    }

    /// Coordinates centered on the centroid. The centroid is summed in
    /// sorted order, so it does not depend on the order of the points.
    pub fn centered_coords(&self) -> Vec<[f64; 3]> {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        let mut axis: Vec<f64> = Vec::with_capacity(self.len());
        for (a, slot) in c.iter_mut().enumerate() {
            axis.clear();
            axis.extend(self.coords.iter().map(|p| p[a]));
            axis.sort_unstable_by(f64::total_cmp);
            *slot = axis.iter().sum::<f64>() / n;
        }
        self.coords.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect()
    }
}
