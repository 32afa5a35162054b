use std::collections::HashMap;

use super::PointCloud;
use crate::{Error, Result};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a digest.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Integer cell coordinates `floor(coord / grid)` per axis.
pub fn quantize(p: &[f64; 3], grid: f64) -> [i64; 3] {
    [(p[0] / grid).floor() as i64, (p[1] / grid).floor() as i64, (p[2] / grid).floor() as i64]
}

fn cell_hash(cell: &[i64; 3]) -> u64 {
    let mut buf = [0u8; 24];
    for (chunk, v) in buf.chunks_exact_mut(8).zip(cell) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    fnv1a_64(&buf)
}

/// Keeps one point per occupied grid cell.
///
/// Cells are keyed by the FNV-1a hash of the three quantized coordinates
/// (little-endian i64). The representative is the lowest original index in
/// the cell and the output preserves ascending original order. Hash
/// collisions between distinct cells are resolved by comparing the cells.
pub fn grid_sample(cloud: &PointCloud, grid: f64) -> Result<PointCloud> {
    if !(grid > 0.0) || !grid.is_finite() {
        return Err(Error::Config(format!("grid size must be positive, got {grid}")));
    }
    let mut buckets: HashMap<u64, Vec<[i64; 3]>> = HashMap::with_capacity(cloud.len());
    let mut keep = Vec::new();
    for (i, p) in cloud.coords().iter().enumerate() {
        let cell = quantize(p, grid);
        let slot = buckets.entry(cell_hash(&cell)).or_default();
        if !slot.contains(&cell) {
            slot.push(cell);
            keep.push(i);
        }
    }
    cloud.select(&keep)
}
