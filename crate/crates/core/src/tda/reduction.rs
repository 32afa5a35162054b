//! Column reduction of the Z/2 boundary matrix.

use super::diagram::{DiagramPoint, PersistenceDiagram};
use super::filtration::Filtration;

/// Maps a sorted vertex tuple to a dense index via the combinatorial number system.
struct SimplexIndex {
    binom: Vec<Vec<usize>>,
    /// position in filtration order, per dimension, keyed by combinatorial index
    position: Vec<Vec<u32>>,
}

impl SimplexIndex {
    fn new(filtration: &Filtration, face_dims: usize) -> Self {
        let m = filtration.num_points();
        let kmax = face_dims + 1;
        let binom: Vec<Vec<usize>> = (0..=m)
            .map(|n| {
                let mut row = vec![0usize; kmax + 1];
                row[0] = 1;
                for k in 1..=kmax.min(n) {
                    row[k] = row[k - 1] * (n - k + 1) / k;
                }
                row
            })
            .collect();
        let mut position: Vec<Vec<u32>> = (0..=face_dims).map(|d| vec![u32::MAX; binom[m][d + 1]]).collect();
        let mut idx = Self { binom, position: Vec::new() };
        for (pos, s) in filtration.simplices().iter().enumerate() {
            if s.dim() <= face_dims {
                let key = idx.key(s.vertices());
                position[s.dim()][key] = pos as u32;
            }
        }
        idx.position = position;
        idx
    }

    fn key(&self, verts: &[u32]) -> usize {
        verts.iter().enumerate().map(|(t, &v)| self.binom[v as usize][t + 1]).sum()
    }

    fn lookup(&self, verts: &[u32]) -> u32 {
        self.position[verts.len() - 1][self.key(verts)]
    }
}

/// Symmetric difference of two ascending index lists.
fn add_columns(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Persistence pairs of a filtration.
///
/// Standard left-to-right reduction, run one dimension at a time from the
/// top down so that columns already known to be pivots can be cleared.
/// Pairs of equal birth and death are kept; `DiagramPoint::is_zero_persistence`
/// flags them. Essential classes are reported for dimensions ≤ `maxdim`.
pub fn reduce(filtration: &Filtration) -> PersistenceDiagram {
    let simplices = filtration.simplices();
    let n = simplices.len();
    let maxdim = filtration.maxdim();
    let top_dim = simplices.iter().map(|s| s.dim()).max().unwrap_or(0);
    let index = SimplexIndex::new(filtration, top_dim.saturating_sub(1));

    let mut pivot_owner: Vec<u32> = vec![u32::MAX; n];
    let mut reduced: Vec<Option<Vec<u32>>> = vec![None; n];
    let mut is_low = vec![false; n];
    let mut is_death = vec![false; n];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut col = Vec::new();
    let mut scratch = Vec::new();
    let mut face = [0u32; 3];

    for dim in (1..=top_dim).rev() {
        for j in 0..n {
            let s = &simplices[j];
            if s.dim() != dim || is_low[j] {
                continue;
            }
            let verts = s.vertices();
            col.clear();
            for skip in 0..verts.len() {
                let mut w = 0;
                for (k, &v) in verts.iter().enumerate() {
                    if k != skip {
                        face[w] = v;
                        w += 1;
                    }
                }
                col.push(index.lookup(&face[..w]));
            }
            col.sort_unstable();

            while let Some(&low) = col.last() {
                let owner = pivot_owner[low as usize];
                if owner == u32::MAX {
                    break;
                }
                let other = reduced[owner as usize].as_ref().expect("pivot column is stored");
                add_columns(&col, other, &mut scratch);
                std::mem::swap(&mut col, &mut scratch);
            }

            if let Some(&low) = col.last() {
                let low = low as usize;
                pivot_owner[low] = j as u32;
                is_low[low] = true;
                is_death[j] = true;
                pairs.push((low, j));
                reduced[j] = Some(col.clone());
            }
        }
    }

    let verts = |i: usize| simplices[i].vertices().iter().map(|&v| v as usize).collect::<Vec<_>>();
    let mut points: Vec<DiagramPoint> = pairs
        .into_iter()
        .filter(|&(b, _)| simplices[b].dim() <= maxdim)
        .map(|(b, d)| DiagramPoint {
            dim: simplices[b].dim(),
            birth: simplices[b].value,
            death: simplices[d].value,
            birth_simplex: verts(b),
            death_simplex: Some(verts(d)),
        })
        .collect();
    for (i, s) in simplices.iter().enumerate() {
        if s.dim() <= maxdim && !is_low[i] && !is_death[i] {
            points.push(DiagramPoint {
                dim: s.dim(),
                birth: s.value,
                death: f64::INFINITY,
                birth_simplex: verts(i),
                death_simplex: None,
            });
        }
    }
    points.sort_by(|a, b| {
        a.dim.cmp(&b.dim).then(a.birth.total_cmp(&b.birth)).then(a.death.total_cmp(&b.death))
    });
    PersistenceDiagram::new(points)
}
