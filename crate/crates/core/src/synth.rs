//! Seeded synthetic point clouds.

use std::str::FromStr;

use glam::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::octree::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// Uniform in the unit cube.
    Uniform,
    /// Terrain-like height field plus a sphere shell, as scanned surfaces are.
    Surface,
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(SynthKind::Uniform),
            "surface" => Ok(SynthKind::Surface),
            other => Err(format!("unknown synthetic kind '{other}' (expected uniform or surface)")),
        }
    }
}

pub fn generate(kind: SynthKind, n: usize, seed: u64) -> Vec<Point> {
    match kind {
        SynthKind::Uniform => uniform(n, seed),
        SynthKind::Surface => surface(n, seed),
    }
}

pub fn uniform(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = Vec3::new(rng.random(), rng.random(), rng.random());
            Point {
                position: p,
                color: [(p.x * 255.0) as u8, (p.y * 255.0) as u8, (p.z * 255.0) as u8, 255],
            }
        })
        .collect()
}

fn height(x: f32, y: f32) -> f32 {
    0.25 + 0.08 * (x * 9.0).sin() * (y * 7.0).cos() + 0.04 * ((x + y) * 23.0).sin()
}

/// Points concentrated on 2D surfaces inside the unit cube.
pub fn surface(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.random::<f32>() < 0.7 {
                let (x, y) = (rng.random::<f32>(), rng.random::<f32>());
                let z = height(x, y) + rng.random_range(-0.002..0.002);
                let g = (z * 500.0).clamp(0.0, 255.0) as u8;
                Point::new(x, y, z, [40, g, 60, 255])
            } else {
                let dir = loop {
                    let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let len = v.length();
                    if len > 1e-3 && len <= 1.0 {
                        break v / len;
                    }
                };
                let p = Vec3::new(0.6, 0.5, 0.6) + dir * 0.25;
                Point {
                    position: p.clamp(Vec3::ZERO, Vec3::ONE),
                    color: [200, (dir.z * 100.0 + 120.0) as u8, 40, 255],
                }
            }
        })
        .collect()
}
