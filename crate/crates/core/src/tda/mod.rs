//! Vietoris–Rips persistent homology.

mod diagram;
mod filtration;
mod reduction;

pub use diagram::{DiagramPoint, PersistenceDiagram};
pub use filtration::{build_filtration, default_threshold, diameter, euclidean, Filtration, Simplex, MAX_HOMOLOGY_DIM};
pub use reduction::reduce;

use ndarray::{ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Filtration + reduction in one call.
pub fn persistence(points: ArrayView2<f64>, maxdim: usize, threshold: f64) -> Result<PersistenceDiagram> {
    Ok(reduce(&build_filtration(points, maxdim, threshold)?))
}

/// Persistence with the default threshold (diameter × 1.05).
pub fn persistence_default(points: ArrayView2<f64>, maxdim: usize) -> Result<PersistenceDiagram> {
    persistence(points, maxdim, default_threshold(points))
}

/// Minimal union-find with path halving and union by size.
#[derive(Clone, Debug)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// H₀ diagram from single-linkage merging of edges sorted by length.
///
/// Independent of the boundary-matrix path; every merge kills one
/// component at the edge length, survivors become infinite bars.
pub fn h0_unionfind(points: ArrayView2<f64>, threshold: f64) -> Result<PersistenceDiagram> {
    let m = points.nrows();
    if m == 0 {
        return Err(Error::Config("need at least one point".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    let mut edges = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let d = euclidean(points.row(i), points.row(j));
            if d <= threshold {
                edges.push((d, i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut sets = DisjointSet::new(m);
    let mut points_out = Vec::new();
    for (d, i, j) in edges {
        let (ri, rj) = (sets.find(i), sets.find(j));
        if sets.union(i, j) {
            points_out.push(DiagramPoint {
                dim: 0,
                birth: 0.0,
                death: d,
                birth_simplex: vec![ri.max(rj)],
                death_simplex: Some(vec![i, j]),
            });
        }
    }
    let mut roots: Vec<usize> = (0..m).map(|v| sets.find(v)).collect();
    roots.sort_unstable();
    roots.dedup();
    for r in roots {
        points_out.push(DiagramPoint { dim: 0, birth: 0.0, death: f64::INFINITY, birth_simplex: vec![r], death_simplex: None });
    }
    Ok(PersistenceDiagram::new(points_out))
}

/// Betti numbers of the Vietoris–Rips complex at fixed scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotProfile {
    pub scales: Vec<f64>,
    /// `betti[s][d]` is βd at `scales[s]`.
    pub betti: Vec<Vec<usize>>,
}

/// Betti numbers at each scale. The complex truncated at ε has exactly the
/// classes of the full filtration born at or before ε and dying after it,
/// so one reduction at the largest scale serves every snapshot.
pub fn snapshot_betti(points: ArrayView2<f64>, scales: &[f64], maxdim: usize) -> Result<SnapshotProfile> {
    let Some(&largest) = scales.last() else {
        return Err(Error::Config("empty scale list".into()));
    };
    if scales.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("scales must be strictly increasing".into()));
    }
    if scales.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("scales must be finite".into()));
    }
    let diagram = if largest > 0.0 {
        persistence(points, maxdim, largest)?
    } else {
        // below every positive distance: the complex is the vertex set
        persistence(points, maxdim, f64::MIN_POSITIVE)?
    };
    let betti = scales.iter().map(|&eps| (0..=maxdim).map(|d| diagram.betti_at(d, eps)).collect()).collect();
    Ok(SnapshotProfile { scales: scales.to_vec(), betti })
}

/// Seeded uniform sample of `m` rows without replacement, in ascending
/// row order. Reusing the seed reproduces the index list, so teacher and
/// student features of one input are subsampled identically.
pub fn subsample_for_tda(features: &Tensor, m: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    let n = features.nrows();
    if m > n {
        return Err(Error::Config(format!("cannot subsample {m} of {n} rows")));
    }
    let indices = subsample_indices(n, m, seed);
    Ok((features.select(Axis(0), &indices), indices))
}

pub fn subsample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}
