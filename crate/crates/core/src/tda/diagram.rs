use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// One (birth, death) pair with the simplices that created and destroyed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramPoint {
    pub dim: usize,
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
    pub birth_simplex: Vec<usize>,
    pub death_simplex: Option<Vec<usize>>,
}

impl DiagramPoint {
    pub fn is_finite(&self) -> bool {
        self.death.is_finite()
    }

    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_zero_persistence(&self) -> bool {
        self.death == self.birth
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub points: Vec<DiagramPoint>,
}

impl PersistenceDiagram {
    pub fn new(points: Vec<DiagramPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dimension(&self, dim: usize) -> impl Iterator<Item = &DiagramPoint> {
        self.points.iter().filter(move |p| p.dim == dim)
    }

    pub fn max_dim(&self) -> Option<usize> {
        self.points.iter().map(|p| p.dim).max()
    }

    /// Number of classes still alive at the end of the filtration, per dimension.
    pub fn essential_count(&self, dim: usize) -> usize {
        self.dimension(dim).filter(|p| !p.is_finite()).count()
    }

    /// Number of classes alive at scale `eps` (born at or before, dying after).
    pub fn betti_at(&self, dim: usize, eps: f64) -> usize {
        self.dimension(dim).filter(|p| p.birth <= eps && p.death > eps).count()
    }

    /// Sorted (birth, death) pairs of one dimension, for multiset comparison.
    pub fn sorted_pairs(&self, dim: usize) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self.dimension(dim).map(|p| (p.birth, p.death)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v
    }

    /// Indices of the points that enter diagram distances: finite and with
    /// non-zero persistence.
    pub fn distance_support(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.points[i].is_finite() && !self.points[i].is_zero_persistence())
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.points.iter().map(|p| format!("{p}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }
}

fn write_simplex(f: &mut fmt::Formatter<'_>, s: &[usize]) -> fmt::Result {
    write!(f, "[")?;
    for (i, v) in s.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{v}")?;
    }
    write!(f, "]")
}

/// `dim birth death [birth-simplex] [death-simplex]`, `inf` for infinite deaths.
impl fmt::Display for DiagramPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} ", self.dim, self.birth)?;
        if self.death.is_finite() {
            write!(f, "{:?}", self.death)?;
        } else {
            write!(f, "inf")?;
        }
        if !self.birth_simplex.is_empty() || self.death_simplex.is_some() {
            write!(f, " ")?;
            write_simplex(f, &self.birth_simplex)?;
        }
        if let Some(d) = &self.death_simplex {
            write!(f, " ")?;
            write_simplex(f, d)?;
        }
        Ok(())
    }
}

fn parse_simplex(s: &str) -> Result<Vec<usize>, Error> {
    let inner = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Format(format!("bad simplex {s:?}")))?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|v| v.trim().parse().map_err(|_| Error::Format(format!("bad vertex {v:?}")))).collect()
}

impl FromStr for DiagramPoint {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self, Error> {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if !(3..=5).contains(&cols.len()) {
            return Err(Error::Format(format!("diagram line needs 3 to 5 fields: {line:?}")));
        }
        let num = |s: &str| -> Result<f64, Error> {
            match s {
                "inf" | "+inf" => Ok(f64::INFINITY),
                _ => s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))),
            }
        };
        let dim = cols[0].parse().map_err(|_| Error::Format(format!("bad dimension {:?}", cols[0])))?;
        let birth = num(cols[1])?;
        let death = num(cols[2])?;
        if death < birth {
            return Err(Error::Format(format!("death {death} precedes birth {birth}")));
        }
        let birth_simplex = cols.get(3).map(|s| parse_simplex(s)).transpose()?.unwrap_or_default();
        let death_simplex = cols.get(4).map(|s| parse_simplex(s)).transpose()?;
        Ok(Self { dim, birth, death, birth_simplex, death_simplex })
    }
}
