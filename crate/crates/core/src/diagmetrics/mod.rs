//! Distances between persistence diagrams.
//!
//! Both distances are computed per homology dimension and summed. Only the
//! finite, non-zero-persistence points of a diagram take part
//! ([`PersistenceDiagram::distance_support`]); infinite bars would make every
//! squared distance diverge.

mod assignment;

pub use assignment::solve as solve_assignment;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tda::{DiagramPoint, PersistenceDiagram};
use crate::{Error, Result};

/// Largest combined support the exact solver accepts.
pub const EXACT_SIZE_LIMIT: usize = 64;

fn sq_dist(p: &DiagramPoint, q: &DiagramPoint) -> f64 {
    (p.birth - q.birth).powi(2) + (p.death - q.death).powi(2)
}

/// Squared distance to the orthogonal projection onto the diagonal.
pub fn diagonal_sq_dist(p: &DiagramPoint) -> f64 {
    0.5 * (p.death - p.birth).powi(2)
}

/// Support indices grouped by dimension.
fn by_dimension(d: &PersistenceDiagram) -> Vec<Vec<usize>> {
    let support = d.distance_support();
    let top = support.iter().map(|&i| d.points[i].dim).max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); top];
    for i in support {
        out[d.points[i].dim].push(i);
    }
    out
}

/// Nearest-neighbour assignment of one diagram point; `None` is the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearestPair {
    pub from: usize,
    pub to: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chamfer {
    pub value: f64,
    /// Each supported point of the first diagram and its nearest partner in the second.
    pub forward: Vec<NearestPair>,
    /// Each supported point of the second diagram and its nearest partner in the first.
    pub backward: Vec<NearestPair>,
}

fn nearest(from: &[usize], d_from: &PersistenceDiagram, to: &[usize], d_to: &PersistenceDiagram) -> (f64, Vec<NearestPair>) {
    let mut total = 0.0;
    let mut pairs = Vec::with_capacity(from.len());
    for &i in from {
        let p = &d_from.points[i];
        if to.is_empty() {
            total += diagonal_sq_dist(p);
            pairs.push(NearestPair { from: i, to: None });
            continue;
        }
        let mut best = (f64::INFINITY, to[0]);
        for &j in to {
            let c = sq_dist(p, &d_to.points[j]);
            if c < best.0 {
                best = (c, j);
            }
        }
        total += best.0;
        pairs.push(NearestPair { from: i, to: Some(best.1) });
    }
    (total, pairs)
}

/// Bidirectional nearest-neighbour (Chamfer) distance.
///
/// Σ_{p∈D1} min_q ‖p−q‖² + Σ_{q∈D2} min_p ‖q−p‖². When one side of a
/// dimension is empty, each point of the other side contributes its squared
/// distance to the diagonal. Ties go to the lowest point index.
pub fn chamfer(d1: &PersistenceDiagram, d2: &PersistenceDiagram) -> Chamfer {
    let (g1, g2) = (by_dimension(d1), by_dimension(d2));
    let empty = Vec::new();
    let mut out = Chamfer { value: 0.0, forward: Vec::new(), backward: Vec::new() };
    for dim in 0..g1.len().max(g2.len()) {
        let a = g1.get(dim).unwrap_or(&empty);
        let b = g2.get(dim).unwrap_or(&empty);
        let (fwd, fp) = nearest(a, d1, b, d2);
        let (bwd, bp) = nearest(b, d2, a, d1);
        out.value += fwd + bwd;
        out.forward.extend(fp);
        out.backward.extend(bp);
    }
    out
}

/// An optimal partial matching; `None` on either side is the diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(Option<usize>, Option<usize>)>,
    pub cost: f64,
}

/// Exact 2-Wasserstein distance with diagonal augmentation.
///
/// Each dimension with `n1` and `n2` supported points becomes an
/// (n1+n2)-square assignment problem: point-point costs are squared
/// distances, point-diagonal costs the squared distance to the projection,
/// diagonal-diagonal costs zero.
pub fn wasserstein2_exact(d1: &PersistenceDiagram, d2: &PersistenceDiagram) -> Result<(f64, Matching)> {
    let (g1, g2) = (by_dimension(d1), by_dimension(d2));
    let total: usize = g1.iter().chain(&g2).map(Vec::len).sum();
    if total > EXACT_SIZE_LIMIT {
        return Err(Error::SizeGuard(total, EXACT_SIZE_LIMIT));
    }
    let empty = Vec::new();
    let mut matching = Matching { pairs: Vec::new(), cost: 0.0 };
    for dim in 0..g1.len().max(g2.len()) {
        let a = g1.get(dim).unwrap_or(&empty);
        let b = g2.get(dim).unwrap_or(&empty);
        let (n1, n2) = (a.len(), b.len());
        let n = n1 + n2;
        if n == 0 {
            continue;
        }
        let mut cost = vec![vec![0.0; n]; n];
        for r in 0..n {
            for c in 0..n {
                cost[r][c] = match (r < n1, c < n2) {
                    (true, true) => sq_dist(&d1.points[a[r]], &d2.points[b[c]]),
                    (true, false) => diagonal_sq_dist(&d1.points[a[r]]),
                    (false, true) => diagonal_sq_dist(&d2.points[b[c]]),
                    (false, false) => 0.0,
                };
            }
        }
        for (r, c) in assignment::solve(&cost).into_iter().enumerate() {
            let pair = (a.get(r).copied(), b.get(c).copied());
            if pair != (None, None) {
                matching.cost += cost[r][c];
                matching.pairs.push(pair);
            }
        }
    }
    Ok((matching.cost.sqrt(), matching))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub chamfer: f64,
    pub w2: f64,
    pub satisfied: bool,
    /// √chamfer − W₂; negative on violation.
    pub gap: f64,
}

/// Checks W₂ ≤ √(Chamfer). Violations are logged, never raised.
pub fn bound_check(d1: &PersistenceDiagram, d2: &PersistenceDiagram) -> Result<BoundReport> {
    let cd = chamfer(d1, d2).value;
    let (w2, _) = wasserstein2_exact(d1, d2)?;
    let bound = cd.sqrt();
    let satisfied = w2 <= bound + 1e-12;
    if !satisfied {
        log::warn!("W2 {w2} exceeds sqrt(chamfer) {bound}; witness pair:\n{}---\n{}", d1.to_text(), d2.to_text());
    }
    Ok(BoundReport { chamfer: cd, w2, satisfied, gap: bound - w2 })
}

/// True when, in every dimension, both diagrams have the same number of
/// supported points and both nearest-neighbour maps are bijections. On such
/// pairs the forward map is itself a valid matching, so the bound must hold.
pub fn nearest_maps_are_bijections(d1: &PersistenceDiagram, d2: &PersistenceDiagram) -> bool {
    let (g1, g2) = (by_dimension(d1), by_dimension(d2));
    let empty = Vec::new();
    let c = chamfer(d1, d2);
    for dim in 0..g1.len().max(g2.len()) {
        let a = g1.get(dim).unwrap_or(&empty);
        let b = g2.get(dim).unwrap_or(&empty);
        if a.len() != b.len() {
            return false;
        }
        let injective = |pairs: &[NearestPair], domain: &[usize]| {
            let mut targets: Vec<usize> =
                pairs.iter().filter(|p| domain.contains(&p.from)).filter_map(|p| p.to).collect();
            let before = targets.len();
            targets.sort_unstable();
            targets.dedup();
            targets.len() == before && before == domain.len()
        };
        if !injective(&c.forward, a) || !injective(&c.backward, b) {
            return false;
        }
    }
    true
}

/// Pass-rate summary over many bound checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub checked: usize,
    pub passed: usize,
    /// Serialized witness pairs for every violation.
    pub counterexamples: Vec<(String, String)>,
}

impl BoundSummary {
    pub fn record(&mut self, d1: &PersistenceDiagram, d2: &PersistenceDiagram, report: &BoundReport) {
        self.checked += 1;
        if report.satisfied {
            self.passed += 1;
        } else {
            self.counterexamples.push((d1.to_text(), d2.to_text()));
        }
    }

    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Random finite diagram: `points` pairs spread over dimensions
/// `0..dims`, births in [0, 1), persistence in (0, 1].
pub fn random_diagram<R: Rng>(rng: &mut R, points: usize, dims: usize) -> PersistenceDiagram {
    let dims = dims.max(1);
    PersistenceDiagram::new(
        (0..points)
            .map(|_| {
                let birth = rng.random::<f64>();
                DiagramPoint {
                    dim: rng.random_range(0..dims),
                    birth,
                    death: birth + 1.0 - rng.random::<f64>(),
                    birth_simplex: Vec::new(),
                    death_simplex: None,
                }
            })
            .collect(),
    )
}

/// Copy of `d` with each coordinate moved by up to `eps`; deaths are then
/// kept at least `eps` above their births.
pub fn jitter_diagram<R: Rng>(rng: &mut R, d: &PersistenceDiagram, eps: f64) -> PersistenceDiagram {
    let mut out = d.clone();
    for p in &mut out.points {
        p.birth += rng.random_range(-eps..=eps);
        p.death = (p.death + rng.random_range(-eps..=eps)).max(p.birth + eps);
    }
    out
}
