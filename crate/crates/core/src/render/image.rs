use std::path::Path;

use glam::{Vec2, Vec3};
use thiserror::Error;

use super::Camera;
use crate::octree::{NodeId, Octree};

#[derive(Debug, Error)]
pub enum PpmError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed PPM: {0}")]
    Malformed(&'static str),
}

/// 8-bit RGB image, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, rgb: Vec<u8>) -> Self {
        assert_eq!(rgb.len(), width as usize * height as usize * 3);
        Self { width, height, rgb }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    pub fn count_color(&self, c: [u8; 3]) -> usize {
        self.rgb.chunks_exact(3).filter(|p| *p == c).count()
    }

    /// Binary PPM (P6).
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), PpmError> {
        std::fs::write(path, self.encode_ppm())?;
        Ok(())
    }
}

/// Parses a binary PPM with maxval 255. Comments are not supported.
pub fn parse_ppm(bytes: &[u8]) -> Result<Image, PpmError> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PpmError::Malformed("header ends early"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| PpmError::Malformed("header is not text"))?);
    }
    if fields[0] != "P6" {
        return Err(PpmError::Malformed("not P6"));
    }
    let num = |s: &str| s.parse::<u32>().map_err(|_| PpmError::Malformed("bad number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(PpmError::Malformed("maxval must be 255"));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() != width as usize * height as usize * 3 {
        return Err(PpmError::Malformed("pixel data length"));
    }
    Ok(Image::new(width, height, body.to_vec()))
}

const EDGES: [(usize, usize); 12] = [
    (0, 1), (2, 3), (4, 5), (6, 7),
    (0, 2), (1, 3), (4, 6), (5, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
];

/// Draws the bounding-box edges of `nodes`; returns the number of pixels set.
pub fn draw_node_boxes(image: &mut Image, tree: &Octree, nodes: &[NodeId], camera: &Camera, color: [u8; 3]) -> usize {
    let mut drawn = 0;
    for &id in nodes {
        let corners = tree.node(id).bounds().corners().map(|c| camera.to_view(c));
        for (a, b) in EDGES {
            if let Some((a, b)) = clip_near(corners[a], corners[b], camera.near) {
                drawn += draw_line(image, camera.view_to_pixel(a), camera.view_to_pixel(b), color);
            }
        }
    }
    drawn
}

fn clip_near(a: Vec3, b: Vec3, near: f32) -> Option<(Vec3, Vec3)> {
    match (a.z > near, b.z > near) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let t = (near - a.z) / (b.z - a.z);
            let cut = a.lerp(b, t);
            let cut = Vec3::new(cut.x, cut.y, near.next_up());
            Some(if a_in { (a, cut) } else { (cut, b) })
        }
    }
}

fn clip_rect(a: Vec2, b: Vec2, w: f32, h: f32) -> Option<(Vec2, Vec2)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f32, 1.0f32);
    for (p, q) in [(-d.x, a.x), (d.x, w - a.x), (-d.y, a.y), (d.y, h - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then(|| (a + d * t0, a + d * t1))
}

fn draw_line(image: &mut Image, a: Vec2, b: Vec2, color: [u8; 3]) -> usize {
    let (w, h) = (image.width, image.height);
    let Some((a, b)) = clip_rect(a, b, w as f32, h as f32) else {
        return 0;
    };
    let steps = (b - a).abs().max_element().ceil().max(1.0) as usize;
    let mut drawn = 0;
    for i in 0..=steps {
        let p = a.lerp(b, i as f32 / steps as f32);
        let (x, y) = (p.x.floor() as i64, p.y.floor() as i64);
        if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h && image.pixel(x as u32, y as u32) != color {
            image.set_pixel(x as u32, y as u32, color);
            drawn += 1;
        }
    }
    drawn
}
