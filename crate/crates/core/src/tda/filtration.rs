use std::cmp::Ordering;

use ndarray::ArrayView2;

use crate::{Error, Result};

/// Highest homology dimension the complex builder accepts.
pub const MAX_HOMOLOGY_DIM: usize = 2;

/// A simplex on at most four vertices, with its filtration value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Simplex {
    vertices: [u32; 4],
    dim: u8,
    pub value: f64,
}

impl Simplex {
    fn new(verts: &[u32], value: f64) -> Self {
        let mut vertices = [0; 4];
        vertices[..verts.len()].copy_from_slice(verts);
        Self { vertices, dim: (verts.len() - 1) as u8, value }
    }

    /// Sorted vertex indices.
    pub fn vertices(&self) -> &[u32] {
        &self.vertices[..=self.dim as usize]
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    fn order(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(self.dim.cmp(&other.dim))
            .then_with(|| self.vertices().cmp(other.vertices()))
    }
}

/// Vietoris–Rips filtration, sorted by (value, dimension, vertex tuple).
#[derive(Clone, Debug)]
pub struct Filtration {
    simplices: Vec<Simplex>,
    threshold: f64,
    maxdim: usize,
    num_points: usize,
    distances: Vec<f64>,
}

impl Filtration {
    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn maxdim(&self) -> usize {
        self.maxdim
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    /// Pairwise distance between two input points.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances[a * self.num_points + b]
    }

    /// The longest edge of a simplex, which carries its filtration value.
    /// Ties go to the lexicographically smallest edge; vertices have none.
    pub fn critical_edge(&self, vertices: &[usize]) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (x, &a) in vertices.iter().enumerate() {
            for &b in &vertices[x + 1..] {
                let d = self.distance(a, b);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some(((a, b), d));
                }
            }
        }
        best.map(|(e, _)| e)
    }
}

pub fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn distance_matrix(points: ArrayView2<f64>) -> Vec<f64> {
    let m = points.nrows();
    let mut d = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = euclidean(points.row(i), points.row(j));
            d[i * m + j] = v;
            d[j * m + i] = v;
        }
    }
    d
}

/// Largest pairwise distance.
pub fn diameter(points: ArrayView2<f64>) -> f64 {
    distance_matrix(points).into_iter().fold(0.0, f64::max)
}

/// Diameter × 1.05, or 1 when all points coincide.
pub fn default_threshold(points: ArrayView2<f64>) -> f64 {
    let d = diameter(points);
    if d > 0.0 {
        d * 1.05
    } else {
        1.0
    }
}

/// All simplices of dimension ≤ `maxdim + 1` whose diameter is ≤ `threshold`.
pub fn build_filtration(points: ArrayView2<f64>, maxdim: usize, threshold: f64) -> Result<Filtration> {
    let m = points.nrows();
    if m == 0 {
        return Err(Error::Config("filtration needs at least one point".into()));
    }
    if maxdim > MAX_HOMOLOGY_DIM {
        return Err(Error::Config(format!("maxdim {maxdim} exceeds the supported {MAX_HOMOLOGY_DIM}")));
    }
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite point coordinate".into()));
    }
    let distances = distance_matrix(points);
    let d = |a: usize, b: usize| distances[a * m + b];

    let mut simplices: Vec<Simplex> = (0..m as u32).map(|v| Simplex::new(&[v], 0.0)).collect();
    // upper neighbours within the threshold
    let nbrs: Vec<Vec<usize>> = (0..m).map(|i| (i + 1..m).filter(|&j| d(i, j) <= threshold).collect()).collect();
    let adjacent = |a: usize, b: usize| d(a, b) <= threshold;

    for i in 0..m {
        for &j in &nbrs[i] {
            let dij = d(i, j);
            simplices.push(Simplex::new(&[i as u32, j as u32], dij));
            if maxdim < 1 {
                continue;
            }
            for &k in nbrs[j].iter().filter(|&&k| adjacent(i, k)) {
                let dijk = dij.max(d(i, k)).max(d(j, k));
                simplices.push(Simplex::new(&[i as u32, j as u32, k as u32], dijk));
                if maxdim < 2 {
                    continue;
                }
                for &l in nbrs[k].iter().filter(|&&l| adjacent(i, l) && adjacent(j, l)) {
                    let v = dijk.max(d(i, l)).max(d(j, l)).max(d(k, l));
                    simplices.push(Simplex::new(&[i as u32, j as u32, k as u32, l as u32], v));
                }
            }
        }
    }
    simplices.sort_by(Simplex::order);
    Ok(Filtration { simplices, threshold, maxdim, num_points: m, distances })
}
