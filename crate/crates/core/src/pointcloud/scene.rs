//! Synthetic labelled scenes with known topology.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneShape {
    /// `count` axis-aligned cubes of half-width `spread`, centers `separation` apart along x.
    Clusters { count: usize, points_per_cluster: usize, separation: f64, spread: f64 },
    /// Evenly spaced samples of a circle in the z = 0 plane.
    Circle { radius: f64, points: usize, noise: f64 },
    /// The z = 0 cross-section of a torus: two concentric circles.
    TorusSlice { major_radius: f64, minor_radius: f64, points: usize, noise: f64 },
    /// Ground plane, one wall on a random side, spheres and poles standing on the ground.
    PlanesObjects { points: usize, objects: usize, extent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: SceneShape,
    pub num_classes: usize,
    pub seed: u64,
}

/// Betti numbers (β₀, β₁, β₂) of one labelled component of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentTopology {
    pub label: u32,
    pub betti: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub spec: SceneSpec,
    pub cloud: PointCloud,
    pub components: Vec<ComponentTopology>,
    /// Scale at which the sampled components realise their recorded topology.
    pub generating_scale: f64,
}

impl Scene {
    /// Total β₀ over all components.
    pub fn component_count(&self) -> usize {
        self.components.iter().map(|c| c.betti[0]).sum()
    }
}

fn degenerate(msg: impl Into<String>) -> Error {
    Error::InvalidScene(msg.into())
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.num_classes == 0 {
        return Err(degenerate("class count must be positive"));
    }
    let k = spec.num_classes as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut components = Vec::new();

    let generating_scale = match spec.shape {
        SceneShape::Clusters { count, points_per_cluster, separation, spread } => {
            if count == 0 || points_per_cluster == 0 {
                return Err(degenerate("clusters need at least one cluster and one point each"));
            }
            if !(spread > 0.0) {
                return Err(degenerate("cluster spread must be positive"));
            }
            let diameter = 2.0 * 3f64.sqrt() * spread;
            if !(separation > 2.0 * diameter) {
                return Err(degenerate(format!(
                    "separation {separation} does not separate clusters of diameter {diameter}"
                )));
            }
            for c in 0..count {
                let center = c as f64 * separation;
                let label = c as u32 % k;
                for _ in 0..points_per_cluster {
                    coords.push([
                        center + rng.random_range(-spread..=spread),
                        rng.random_range(-spread..=spread),
                        rng.random_range(-spread..=spread),
                    ]);
                    labels.push(label);
                }
                components.push(ComponentTopology { label, betti: [1, 0, 0] });
            }
            // above the cube diameter, below the narrowest inter-cluster gap
            0.5 * separation
        }
        SceneShape::Circle { radius, points, noise } => {
            check_ring(radius, points, noise)?;
            sample_ring(&mut rng, radius, points, noise, &mut coords)?;
            labels.resize(points, 0);
            components.push(ComponentTopology { label: 0, betti: [1, 1, 0] });
            2.0 * chord(radius, points)
        }
        SceneShape::TorusSlice { major_radius, minor_radius, points, noise } => {
            if !(minor_radius > 0.0 && major_radius > minor_radius) {
                return Err(degenerate("torus slice needs 0 < minor radius < major radius"));
            }
            let inner_n = points / 2;
            let outer_n = points - inner_n;
            let (inner, outer) = (major_radius - minor_radius, major_radius + minor_radius);
            check_ring(inner, inner_n, noise)?;
            check_ring(outer, outer_n, noise)?;
            sample_ring(&mut rng, inner, inner_n, noise, &mut coords)?;
            sample_ring(&mut rng, outer, outer_n, noise, &mut coords)?;
            labels.extend(std::iter::repeat_n(0, inner_n));
            labels.extend(std::iter::repeat_n(1 % k, outer_n));
            components.push(ComponentTopology { label: 0, betti: [1, 1, 0] });
            components.push(ComponentTopology { label: 1 % k, betti: [1, 1, 0] });
            2.0 * chord(inner, inner_n).max(chord(outer, outer_n))
        }
        SceneShape::PlanesObjects { points, objects, extent } => {
            planes_objects(&mut rng, points, objects, extent, k, &mut coords, &mut labels, &mut components)?
        }
    };

    let cloud = PointCloud::new(coords, None, Some(labels), spec.num_classes)?;
    Ok(Scene { spec: spec.clone(), cloud, components, generating_scale })
}

fn chord(radius: f64, n: usize) -> f64 {
    2.0 * radius * (PI / n as f64).sin()
}

fn check_ring(radius: f64, points: usize, noise: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(degenerate("radius must be positive"));
    }
    if points < 3 {
        return Err(degenerate("a ring needs at least 3 points"));
    }
    if !(noise >= 0.0) {
        return Err(degenerate("noise must be non-negative"));
    }
    Ok(())
}

fn sample_ring(rng: &mut ChaCha8Rng, radius: f64, n: usize, noise: f64, out: &mut Vec<[f64; 3]>) -> Result<()> {
    let normal = Normal::new(0.0, noise).map_err(|e| degenerate(e.to_string()))?;
    for j in 0..n {
        let (s, c) = (TAU * j as f64 / n as f64).sin_cos();
        let (dx, dy) = if noise > 0.0 { (normal.sample(rng), normal.sample(rng)) } else { (0.0, 0.0) };
        out.push([radius * c + dx, radius * s + dy, 0.0]);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn planes_objects(
    rng: &mut ChaCha8Rng,
    points: usize,
    objects: usize,
    extent: f64,
    k: u32,
    coords: &mut Vec<[f64; 3]>,
    labels: &mut Vec<u32>,
    components: &mut Vec<ComponentTopology>,
) -> Result<f64> {
    if !(extent > 2.0) {
        return Err(degenerate("planes+objects extent must exceed 2 m"));
    }
    if objects < 2 {
        return Err(degenerate("planes+objects needs at least one sphere and one pole"));
    }
    if points < 8 {
        return Err(degenerate("planes+objects needs at least 8 points"));
    }
    let quota = points / 4;
    let ground_n = points - 3 * quota;

    for _ in 0..ground_n {
        coords.push([rng.random_range(-extent..=extent), rng.random_range(-extent..=extent), 0.0]);
        labels.push(0);
    }
    components.push(ComponentTopology { label: 0, betti: [1, 0, 0] });

    // wall on one of the four sides
    let side = rng.random_range(0..4u8);
    for _ in 0..quota {
        let t = rng.random_range(-extent..=extent);
        let z = rng.random_range(0.0..=2.0);
        let p = match side {
            0 => [extent, t, z],
            1 => [-extent, t, z],
            2 => [t, extent, z],
            _ => [t, -extent, z],
        };
        coords.push(p);
        labels.push(1 % k);
    }
    components.push(ComponentTopology { label: 1 % k, betti: [1, 0, 0] });

    // footprints kept apart so objects stay disjoint
    let margin = extent - 1.0;
    let mut placed: Vec<([f64; 2], f64)> = Vec::with_capacity(objects);
    for o in 0..objects {
        let is_sphere = o % 2 == 0;
        let r = if is_sphere { rng.random_range(0.4..=0.6) } else { rng.random_range(0.1..=0.2) };
        let mut center = [0.0; 2];
        for attempt in 0..1000 {
            center = [rng.random_range(-margin..=margin), rng.random_range(-margin..=margin)];
            let clear = placed.iter().all(|(c, rr)| {
                ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt() > r + rr + 0.3
            });
            if clear {
                break;
            }
            if attempt == 999 {
                return Err(degenerate("could not place objects without overlap; enlarge the extent"));
            }
        }
        placed.push((center, r));
    }

    let spheres: Vec<_> = placed.iter().step_by(2).copied().collect();
    let poles: Vec<_> = placed.iter().skip(1).step_by(2).copied().collect();
    let sphere_label = 2 % k;
    let pole_label = 3 % k;
    for j in 0..quota {
        let (c, r) = spheres[j % spheres.len()];
        // uniform on the sphere
        let z = rng.random_range(-1.0..=1.0f64);
        let phi = rng.random_range(0.0..TAU);
        let rho = (1.0 - z * z).sqrt();
        coords.push([c[0] + r * rho * phi.cos(), c[1] + r * rho * phi.sin(), r + r * z]);
        labels.push(sphere_label);
    }
    let heights: Vec<f64> = poles.iter().map(|_| rng.random_range(1.5..=2.5)).collect();
    for j in 0..quota {
        let idx = j % poles.len();
        let (c, r) = poles[idx];
        let phi = rng.random_range(0.0..TAU);
        let z = rng.random_range(0.0..=heights[idx]);
        coords.push([c[0] + r * phi.cos(), c[1] + r * phi.sin(), z]);
        labels.push(pole_label);
    }
    components.extend(spheres.iter().map(|_| ComponentTopology { label: sphere_label, betti: [1, 0, 1] }));
    components.extend(poles.iter().map(|_| ComponentTopology { label: pole_label, betti: [1, 1, 0] }));

    let area = 4.0 * extent * extent;
    Ok(2.0 * (area / ground_n as f64).sqrt())
}
