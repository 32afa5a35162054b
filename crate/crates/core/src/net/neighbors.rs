/// k-nearest-neighbour lists (self excluded), nearest first, ties by index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbors {
    k: usize,
    flat: Vec<usize>,
}

impl Neighbors {
    /// Clamps `k` to N−1 with a warning; a single point is its own neighbour.
    pub fn compute(coords: &[[f64; 3]], k: usize) -> Self {
        let n = coords.len();
        if n <= 1 {
            return Self { k: 1, flat: (0..n).collect() };
        }
        let k = if k > n - 1 {
            log::warn!("neighbourhood size {k} exceeds N-1 = {}; clamping", n - 1);
            n - 1
        } else {
            k.max(1)
        };
        let mut flat = Vec::with_capacity(n * k);
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for (i, p) in coords.iter().enumerate() {
            cand.clear();
            cand.extend(coords.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                (d, j)
            }));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_unstable_by(cmp);
            flat.extend(cand.iter().map(|c| c.1));
        }
        Self { k, flat }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_points(&self) -> usize {
        self.flat.len() / self.k
    }

    /// Row-major N×k neighbour indices.
    pub fn flat(&self) -> &[usize] {
        &self.flat
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.flat[i * self.k..(i + 1) * self.k]
    }
}
