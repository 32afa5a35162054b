use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::diagmetrics::{chamfer, NearestPair};
use crate::tda::{build_filtration, default_threshold, persistence_default, reduce, subsample_indices, DiagramPoint};
use crate::{Error, Result};

/// Size of the coordinate probe used to detect unstable critical pairs.
const PROBE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct TopoLoss {
    pub value: f64,
    /// ∂loss/∂student features, same shape as the student input.
    pub grad: Tensor,
    /// Diagram points whose gradient was zeroed because the probe changed
    /// their critical simplices.
    pub tie_events: usize,
    /// Rows that entered the diagrams.
    pub indices: Vec<usize>,
}

type Signature = (usize, Vec<usize>, Option<Vec<usize>>);

fn signature(p: &DiagramPoint) -> Signature {
    (p.dim, p.birth_simplex.clone(), p.death_simplex.clone())
}

/// Chamfer loss between the teacher and student diagrams of two point sets
/// with the same number of rows, and its gradient with respect to the
/// student points. The teacher diagram is a constant. Each student diagram
/// point passes its coordinate adjoints to the two endpoints of the longest
/// edge of its birth and death simplices.
pub fn topo_loss_on(teacher: ArrayView2<f64>, student: ArrayView2<f64>, maxdim: usize, probe_seed: u64) -> Result<TopoLoss> {
    if teacher.nrows() != student.nrows() {
        return Err(Error::LengthMismatch(teacher.nrows(), student.nrows()));
    }
    let d_t = persistence_default(teacher, maxdim)?;
    let filt = build_filtration(student, maxdim, default_threshold(student))?;
    let d_s = reduce(&filt);
    let cd = chamfer(&d_t, &d_s);

    // adjoints of (birth, death) per student diagram point
    let mut adj = vec![(0.0, 0.0); d_s.len()];
    let mut pull = |q: usize, target: Option<&DiagramPoint>| {
        let s = &d_s.points[q];
        match target {
            Some(p) => {
                adj[q].0 += 2.0 * (s.birth - p.birth);
                adj[q].1 += 2.0 * (s.death - p.death);
            }
            None => {
                let pers = s.death - s.birth;
                adj[q].0 -= pers;
                adj[q].1 += pers;
            }
        }
    };
    for &NearestPair { from, to } in &cd.backward {
        pull(from, to.map(|p| &d_t.points[p]));
    }
    for &NearestPair { from, to } in &cd.forward {
        if let Some(q) = to {
            pull(q, Some(&d_t.points[from]));
        }
    }

    let mut tie_events = 0;
    if adj.iter().any(|&(b, d)| b != 0.0 || d != 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
        let probed = student.mapv(|v| v + rng.random_range(-PROBE..=PROBE));
        let d_probe = persistence_default(probed.view(), maxdim)?;
        let stable: HashSet<Signature> = d_probe.points.iter().map(signature).collect();
        for (q, a) in adj.iter_mut().enumerate() {
            if (a.0 != 0.0 || a.1 != 0.0) && !stable.contains(&signature(&d_s.points[q])) {
                *a = (0.0, 0.0);
                tie_events += 1;
            }
        }
    }

    let mut grad = Array2::zeros(student.dim());
    let mut route = |simplex: &[usize], g: f64| {
        if g == 0.0 {
            return;
        }
        let Some((a, b)) = filt.critical_edge(simplex) else { return };
        let len = filt.distance(a, b);
        if len > 0.0 {
            for c in 0..student.ncols() {
                let dir = (student[[a, c]] - student[[b, c]]) / len;
                grad[[a, c]] += g * dir;
                grad[[b, c]] -= g * dir;
            }
        }
    };
    for (p, &(gb, gd)) in d_s.points.iter().zip(&adj) {
        route(&p.birth_simplex, gb);
        if let Some(ds) = &p.death_simplex {
            route(ds, gd);
        }
    }
    Ok(TopoLoss { value: cd.value, grad, tie_events, indices: (0..student.nrows()).collect() })
}

/// Topology loss on a shared seeded subsample of `m` rows of both feature
/// maps; the gradient is scattered back to the full student feature map.
pub fn topo_loss(teacher: &Tensor, student: &Tensor, m: usize, maxdim: usize, seed: u64) -> Result<TopoLoss> {
    if teacher.nrows() != student.nrows() {
        return Err(Error::LengthMismatch(teacher.nrows(), student.nrows()));
    }
    let idx = subsample_indices(student.nrows(), m, seed);
    let t = teacher.select(ndarray::Axis(0), &idx);
    let s = student.select(ndarray::Axis(0), &idx);
    let sub = topo_loss_on(t.view(), s.view(), maxdim, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut grad = Array2::zeros(student.dim());
    for (r, &i) in idx.iter().enumerate() {
        grad.row_mut(i).assign(&sub.grad.row(r));
    }
    Ok(TopoLoss { value: sub.value, grad, tie_events: sub.tie_events, indices: idx })
}
