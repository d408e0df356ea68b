//! Z-order (Morton) keys and sorting.

use std::path::Path;

use rayon::prelude::*;

use super::{source::BatchSource, IoError};
use crate::octree::{CubeBounds, Point};

pub const DEFAULT_BITS: u32 = 21;

/// Spreads the low 21 bits of `v` so that bit `i` lands on bit `3i`.
#[inline]
pub fn spread3(v: u32) -> u64 {
    let mut x = (v as u64) & 0x1f_ffff;
    x = (x | x << 32) & 0x1f00000000ffff;
    x = (x | x << 16) & 0x1f0000ff0000ff;
    x = (x | x << 8) & 0x100f00f00f00f00f;
    x = (x | x << 4) & 0x10c30c30c30c30c3;
    x = (x | x << 2) & 0x1249249249249249;
    x
}

/// Interleaves quantized coordinates: x at bit `3i`, y at `3i+1`, z at `3i+2`.
#[inline]
pub fn encode(x: u32, y: u32, z: u32) -> u64 {
    spread3(x) | spread3(y) << 1 | spread3(z) << 2
}

/// Integer cell of `p` on a `2^bits` grid over `bounds`.
pub fn quantize(p: &Point, bounds: &CubeBounds, bits: u32) -> [u32; 3] {
    let cells = (1u64 << bits) as f64;
    let max = (1u64 << bits) - 1;
    let rel = (p.position - bounds.min).as_dvec3() / bounds.size as f64;
    let q = |v: f64| ((v * cells).floor().max(0.0) as u64).min(max) as u32;
    [q(rel.x), q(rel.y), q(rel.z)]
}

pub fn morton_key(p: &Point, bounds: &CubeBounds, bits: u32) -> u64 {
    debug_assert!(bits <= 21);
    let [x, y, z] = quantize(p, bounds, bits);
    encode(x, y, z)
}

/// Stable sort by Morton key.
pub fn sort_points(points: &mut [Point], bounds: &CubeBounds) {
    points.par_sort_by_cached_key(|p| morton_key(p, bounds, DEFAULT_BITS));
}

/// Reads any supported point file and writes a Morton-ordered SIM copy.
pub fn morton_sort(input: &Path, output: &Path, bounds: Option<CubeBounds>) -> Result<CubeBounds, IoError> {
    let mut source = BatchSource::open(input, bounds, 1 << 22)?;
    let bounds = *source.bounds();
    let mut points = Vec::new();
    while let Some(batch) = source.read_batch()? {
        points.extend(batch.points);
    }
    sort_points(&mut points, &bounds);
    super::sim::sim_write(output, &points)?;
    Ok(bounds)
}
