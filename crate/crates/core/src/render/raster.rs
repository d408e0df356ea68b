use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use super::{Camera, Image, VisibleSet};
use crate::octree::{NodeId, Octree, Point};

/// Empty cell: all-ones depth and color.
pub const BACKGROUND: u64 = u64::MAX;

/// Depth in the high word (positive float bits order like the floats), color
/// in the low word, so a 64-bit minimum keeps the closest sample and breaks
/// depth ties by the lower color value.
#[inline]
pub fn pack(depth: f32, color: [u8; 4]) -> u64 {
    (depth.to_bits() as u64) << 32 | u32::from_le_bytes(color) as u64
}

pub fn unpack(cell: u64) -> Option<(f32, [u8; 4])> {
    (cell != BACKGROUND).then(|| (f32::from_bits((cell >> 32) as u32), (cell as u32).to_le_bytes()))
}

pub struct Framebuffer {
    width: u32,
    height: u32,
    cells: Vec<AtomicU64>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            cells: (0..width as usize * height as usize).map(|_| AtomicU64::new(BACKGROUND)).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn combine(&self, x: u32, y: u32, value: u64) {
        self.cells[(y * self.width + x) as usize].fetch_min(value, Ordering::Relaxed);
    }

    /// Projects a sample and keeps it if it is the closest so far.
    #[inline]
    pub fn splat(&self, camera: &Camera, p: &Point) {
        if let Some((x, y, depth)) = camera.project(p.position) {
            self.combine(x, y, pack(depth, p.color));
        }
    }

    pub fn cell(&self, x: u32, y: u32) -> u64 {
        self.cells[(y * self.width + x) as usize].load(Ordering::Relaxed)
    }

    /// Row-major snapshot, top row first.
    pub fn cells(&self) -> Vec<u64> {
        self.cells.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    pub fn covered(&self) -> usize {
        self.cells.iter().filter(|c| c.load(Ordering::Relaxed) != BACKGROUND).count()
    }

    pub fn to_image(&self, background: [u8; 3]) -> Image {
        let mut rgb = Vec::with_capacity(self.cells.len() * 3);
        for c in &self.cells {
            match unpack(c.load(Ordering::Relaxed)) {
                Some((_, color)) => rgb.extend_from_slice(&color[..3]),
                None => rgb.extend_from_slice(&background),
            }
        }
        Image::new(self.width, self.height, rgb)
    }
}

impl std::fmt::Debug for Framebuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Framebuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("covered", &self.covered())
            .finish()
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RasterStats {
    pub nodes: usize,
    pub points: u64,
    pub voxels: u64,
    /// Samples read per visible node, in visible-set order.
    #[serde(skip)]
    pub per_node: Vec<(NodeId, u64)>,
    #[serde(rename = "duration_ms", serialize_with = "crate::update::ser_ms")]
    pub duration: Duration,
}

/// Draws every sample of the visible nodes by walking their chunk lists.
/// Inner nodes contribute voxels, leaves their points.
pub fn rasterize(tree: &Octree, visible: &VisibleSet, camera: &Camera) -> (Framebuffer, RasterStats) {
    let start = Instant::now();
    let fb = Framebuffer::new(camera.width, camera.height);
    let cap = tree.chunk_capacity();
    let per_node: Vec<(NodeId, u64)> = visible
        .nodes
        .par_iter()
        .map(|&id| {
            let total = tree.node(id).count() as usize;
            let mut runs = Vec::with_capacity(total.div_ceil(cap));
            let mut cursor = tree.node(id).chunk_head();
            let mut seen = 0;
            while let (Some(h), true) = (cursor, seen < total) {
                let chunk = tree.chunk(h);
                let n = cap.min(total - seen);
                runs.push((chunk, n));
                seen += n;
                cursor = chunk.next();
            }
            let visited: usize = runs
                .par_iter()
                .map(|(chunk, n)| {
                    for slot in 0..*n {
                        fb.splat(camera, &chunk.read(slot));
                    }
                    *n
                })
                .sum();
            (id, visited as u64)
        })
        .collect();
    let mut stats = RasterStats {
        nodes: visible.len(),
        ..Default::default()
    };
    for &(id, n) in &per_node {
        if tree.node(id).is_leaf() {
            stats.points += n;
        } else {
            stats.voxels += n;
        }
    }
    stats.per_node = per_node;
    stats.duration = start.elapsed();
    (fb, stats)
}

/// Renders every point with the same projection and combine, no LOD.
pub fn brute_force_render(points: &[Point], camera: &Camera) -> Framebuffer {
    let fb = Framebuffer::new(camera.width, camera.height);
    points.par_iter().for_each(|p| fb.splat(camera, p));
    fb
}
