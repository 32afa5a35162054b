use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::{Error, Result};

/// Training-time geometric augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Half-width of the z-rotation range, in degrees.
    pub rotation_degrees: f64,
    pub rotation_prob: f64,
    pub scale_range: [f64; 2],
    /// Probability of mirroring along each horizontal axis independently.
    pub flip_prob: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_degrees: 1.0,
            rotation_prob: 0.5,
            scale_range: [0.9, 1.1],
            flip_prob: 0.5,
            jitter_sigma: 0.005,
            jitter_clip: 0.02,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration.
    pub fn identity() -> Self {
        Self {
            rotation_degrees: 0.0,
            rotation_prob: 0.0,
            scale_range: [1.0, 1.0],
            flip_prob: 0.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.rotation_prob) || !prob_ok(self.flip_prob) {
            return Err(Error::Config("augment probabilities must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid scale range [{lo}, {hi}]")));
        }
        if !(self.jitter_clip >= 0.0) || !(self.jitter_sigma >= 0.0) {
            return Err(Error::Config("jitter sigma and clip must be non-negative".into()));
        }
        if !self.rotation_degrees.is_finite() {
            return Err(Error::Config("rotation range must be finite".into()));
        }
        Ok(())
    }
}

/// Applies rotation about z, uniform scaling, axis flips and clipped Gaussian jitter,
/// in that order. Labels and point count are unchanged.
pub fn augment(cloud: &PointCloud, cfg: &AugmentConfig, seed: u64) -> Result<PointCloud> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = cloud.coords().to_vec();

    if cfg.rotation_prob > 0.0 && rng.random_bool(cfg.rotation_prob) {
        let theta = rng.random_range(-cfg.rotation_degrees..=cfg.rotation_degrees).to_radians();
        let (s, c) = theta.sin_cos();
        for p in &mut coords {
            let (x, y) = (p[0], p[1]);
            p[0] = c * x - s * y;
            p[1] = s * x + c * y;
        }
    }

    let [lo, hi] = cfg.scale_range;
    if lo != 1.0 || hi != 1.0 {
        let factor = rng.random_range(lo..=hi);
        coords.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    if cfg.flip_prob > 0.0 {
        for axis in 0..2 {
            if rng.random_bool(cfg.flip_prob) {
                coords.iter_mut().for_each(|p| p[axis] = -p[axis]);
            }
        }
    }

    if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sigma)
            .map_err(|e| Error::Config(format!("jitter distribution: {e}")))?;
        let clip = cfg.jitter_clip;
        for v in coords.iter_mut().flatten() {
            let old = *v;
            let mut new = old + normal.sample(&mut rng).clamp(-clip, clip);
            // rounding of the sum may push the realised offset past the clip
            while (new - old).abs() > clip {
                new = if new > old { new.next_down() } else { new.next_up() };
            }
            *v = new;
        }
    }

    Ok(cloud.with_coords(coords))
}
