//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use glam::Vec3;
use lodstream::octree::{CubeBounds, NodeId, Octree, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Path = Vec<u8>;

/// Inner nodes map to `None`, leaves to their sorted point bit patterns.
pub type Signature = BTreeMap<Path, Option<Vec<[u32; 4]>>>;

fn octant(min: Vec3, size: f32, p: Vec3) -> u8 {
    let c = min + Vec3::splat(size * 0.5);
    (p.x >= c.x) as u8 | ((p.y >= c.y) as u8) << 1 | ((p.z >= c.z) as u8) << 2
}

fn child_min(min: Vec3, size: f32, o: u8) -> Vec3 {
    let c = min + Vec3::splat(size * 0.5);
    Vec3::new(
        if o & 1 != 0 { c.x } else { min.x },
        if o & 2 != 0 { c.y } else { min.y },
        if o & 4 != 0 { c.z } else { min.z },
    )
}

fn key(p: &Point) -> [u32; 4] {
    [p.position.x.to_bits(), p.position.y.to_bits(), p.position.z.to_bits(), u32::from_le_bytes(p.color)]
}

/// Recursive top-down construction from the complete point set: a node with
/// more than `t` points below `max_depth` gets eight children.
pub fn reference_signature(points: &[Point], bounds: CubeBounds, t: usize, max_depth: u32) -> Signature {
    let mut out = Signature::new();
    let all: Vec<&Point> = points.iter().collect();
    build(&all, bounds.min, bounds.size, 0, t, max_depth, &mut Vec::new(), &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn build(pts: &[&Point], min: Vec3, size: f32, level: u32, t: usize, max_depth: u32, path: &mut Path, out: &mut Signature) {
    if pts.len() <= t || level >= max_depth {
        let mut keys: Vec<_> = pts.iter().map(|p| key(p)).collect();
        keys.sort_unstable();
        out.insert(path.clone(), Some(keys));
        return;
    }
    out.insert(path.clone(), None);
    let mut parts: [Vec<&Point>; 8] = Default::default();
    for p in pts {
        parts[octant(min, size, p.position) as usize].push(p);
    }
    for (o, part) in parts.iter().enumerate() {
        path.push(o as u8);
        build(part, child_min(min, size, o as u8), size * 0.5, level + 1, t, max_depth, path, out);
        path.pop();
    }
}

pub fn node_path(tree: &Octree, mut id: NodeId) -> Path {
    let mut path = Vec::new();
    while let Some(parent) = tree.node(id).parent() {
        path.push(tree.node(id).octant());
        id = parent;
    }
    path.reverse();
    path
}

pub fn tree_signature(tree: &Octree) -> Signature {
    tree.nodes()
        .iter()
        .map(|n| {
            let leaf = n.is_leaf().then(|| {
                let mut keys: Vec<_> = tree.samples(n.id()).iter().map(key).collect();
                keys.sort_unstable();
                keys
            });
            (node_path(tree, n.id()), leaf)
        })
        .collect()
}

/// True when every parent-to-child step on the way to `id` is the step the
/// routing rule picks for `p`.
pub fn routed_to(tree: &Octree, id: NodeId, p: Vec3) -> bool {
    let path = node_path(tree, id);
    let b = tree.bounds();
    let (mut min, mut size) = (b.min, b.size);
    for &o in &path {
        if octant(min, size, p) != o {
            return false;
        }
        min = child_min(min, size, o);
        size *= 0.5;
    }
    true
}

fn cell(min: Vec3, size: f32, g: u32, p: Vec3) -> u32 {
    let axis = |v: f32, lo: f32| ((g as f32 * (v - lo) / size).floor().max(0.0) as u32).min(g - 1);
    axis(p.x, min.x) + g * (axis(p.y, min.y) + g * axis(p.z, min.z))
}

/// First-come voxels of a sequential replay: for every inner node of the
/// final tree, the color of the earliest point in each sampling cell.
pub fn replay_voxels(tree: &Octree, points: &[Point]) -> BTreeMap<Path, BTreeMap<u32, [u8; 4]>> {
    let inner: std::collections::BTreeSet<Path> =
        tree.nodes().iter().filter(|n| !n.is_leaf()).map(|n| node_path(tree, n.id())).collect();
    let g = tree.grid_resolution();
    let mut out: BTreeMap<Path, BTreeMap<u32, [u8; 4]>> = inner.iter().map(|p| (p.clone(), BTreeMap::new())).collect();
    for p in points {
        let b = tree.bounds();
        let (mut min, mut size) = (b.min, b.size);
        let mut path = Vec::new();
        while inner.contains(&path) {
            out.get_mut(&path).unwrap().entry(cell(min, size, g, p.position)).or_insert(p.color);
            let o = octant(min, size, p.position);
            min = child_min(min, size, o);
            size *= 0.5;
            path.push(o);
        }
    }
    out
}

/// Stored voxels per inner node, keyed by sampling cell.
pub fn stored_voxels(tree: &Octree) -> BTreeMap<Path, Vec<(u32, [u8; 4])>> {
    let g = tree.grid_resolution();
    tree.nodes()
        .iter()
        .filter(|n| !n.is_leaf())
        .map(|n| {
            let b = n.bounds();
            let v = tree
                .samples(n.id())
                .iter()
                .map(|s| (cell(b.min, b.size, g, s.position), s.color))
                .collect();
            (node_path(tree, n.id()), v)
        })
        .collect()
}

/// Uniform points in the unit cube.
pub fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(rng.random(), rng.random(), rng.random(), rng.random()))
        .collect()
}

/// Clustered points on a few noisy planes, with duplicates.
pub fn surface_like(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let planes: Vec<(Vec3, Vec3, Vec3)> = (0..3)
        .map(|_| {
            let o = Vec3::new(rng.random(), rng.random(), rng.random()) * 0.5;
            let a = Vec3::new(rng.random(), rng.random(), rng.random()).normalize_or(Vec3::X) * 0.5;
            let b = a.any_orthonormal_vector() * 0.5;
            (o, a, b)
        })
        .collect();
    let mut pts: Vec<Point> = Vec::with_capacity(n);
    while pts.len() < n {
        if !pts.is_empty() && rng.random::<f32>() < 0.02 {
            let dup = pts[rng.random_range(0..pts.len())];
            pts.push(dup);
            continue;
        }
        let (o, a, b) = planes[rng.random_range(0..planes.len())];
        let p = o + a * rng.random::<f32>() + b * rng.random::<f32>() + Vec3::splat(rng.random_range(-0.003..0.003));
        pts.push(Point {
            position: p.clamp(Vec3::ZERO, Vec3::ONE),
            color: rng.random(),
        });
    }
    pts
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
