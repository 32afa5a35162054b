//! Topology-aware, gradient-guided knowledge distillation for point-cloud
//! semantic segmentation at desk scale.
//!
//! Modules, bottom-up:
//! - [`pointcloud`]: data model, synthetic scenes, preprocessing, mIoU
//! - [`autodiff`]: reverse-mode gradients with a finite-difference checker
//! - [`net`]: per-point teacher/student segmentation networks
//! - [`tda`]: Vietoris–Rips persistence with critical-simplex provenance
//! - [`diagmetrics`]: Chamfer and exact 2-Wasserstein diagram distances
//! - [`kd`]: distillation losses and their composition
//! - [`harness`]: training, ablation and evaluation orchestration

pub mod autodiff;
pub mod diagmetrics;
pub mod harness;
pub mod kd;
pub mod net;
mod error;
pub mod pointcloud;
pub mod tda;

pub use error::{Error, Result};
