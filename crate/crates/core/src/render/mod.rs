//! View-dependent node selection and closest-sample point rasterization.

mod image;
mod raster;

pub use image::{draw_node_boxes, parse_ppm, Image, PpmError};
pub use raster::{brute_force_render, pack, rasterize, unpack, Framebuffer, RasterStats, BACKGROUND};

use glam::{Vec2, Vec3};
use thiserror::Error;

use crate::octree::{CubeBounds, NodeId, Octree};

/// Default refinement threshold in pixels.
pub const DEFAULT_THRESHOLD: f32 = 128.0;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("near and far must satisfy 0 < near < far (got {near}, {far})")]
    DepthRange { near: f32, far: f32 },
    #[error("vertical field of view must lie in (0, 180) degrees (got {0})")]
    FieldOfView(f32),
    #[error("viewport must be at least 1x1")]
    Viewport,
    #[error("camera position, target and up do not define a view direction")]
    Degenerate,
}

/// Pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_y: f32,
    pub near: f32,
    pub far: f32,
    pub width: u32,
    pub height: u32,
    right_axis: Vec3,
    up_axis: Vec3,
    forward: Vec3,
    /// `1 / tan(fov_y / 2)`.
    focal: f32,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f32,
        near: f32,
        far: f32,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        if !(near > 0.0 && near < far) {
            return Err(CameraError::DepthRange { near, far });
        }
        if !(fov_y > 0.0 && fov_y < 180.0) {
            return Err(CameraError::FieldOfView(fov_y));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::Viewport);
        }
        let forward = (target - position).normalize_or_zero();
        let right_axis = forward.cross(up).normalize_or_zero();
        if forward == Vec3::ZERO || right_axis == Vec3::ZERO {
            return Err(CameraError::Degenerate);
        }
        let up_axis = right_axis.cross(forward);
        Ok(Self {
            position,
            target,
            up,
            fov_y,
            near,
            far,
            width,
            height,
            right_axis,
            up_axis,
            forward,
            focal: 1.0 / (fov_y.to_radians() * 0.5).tan(),
        })
    }

    /// A camera that looks at the whole cube from outside, z up.
    pub fn overview(bounds: &CubeBounds, width: u32, height: u32) -> Self {
        let dir = Vec3::new(1.0, -1.4, 0.9).normalize();
        let center = bounds.center();
        let size = bounds.size.max(f32::MIN_POSITIVE);
        Self::new(
            center + dir * size * 1.8,
            center,
            Vec3::Z,
            60.0,
            size * 1e-3,
            size * 10.0,
            width,
            height,
        )
        .expect("overview parameters are valid")
    }

    pub fn aspect(&self) -> f32 {
        self.width as f32 / self.height as f32
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    /// View space: x right, y up, z = distance along the view direction.
    #[inline]
    pub fn to_view(&self, p: Vec3) -> Vec3 {
        let d = p - self.position;
        Vec3::new(d.dot(self.right_axis), d.dot(self.up_axis), d.dot(self.forward))
    }

    /// Continuous pixel coordinates of a view-space point in front of the eye,
    /// with y growing downwards.
    #[inline]
    pub fn view_to_pixel(&self, v: Vec3) -> Vec2 {
        let ndc_x = v.x * self.focal / (self.aspect() * v.z);
        let ndc_y = v.y * self.focal / v.z;
        Vec2::new(
            (ndc_x + 1.0) * 0.5 * self.width as f32,
            (1.0 - ndc_y) * 0.5 * self.height as f32,
        )
    }

    /// Pixel and depth of a world point, if it lands in the viewport with
    /// depth strictly between near and far.
    #[inline]
    pub fn project(&self, p: Vec3) -> Option<(u32, u32, f32)> {
        let v = self.to_view(p);
        if !(v.z > self.near && v.z < self.far) {
            return None;
        }
        let s = self.view_to_pixel(v);
        if s.x >= 0.0 && s.y >= 0.0 && s.x < self.width as f32 && s.y < self.height as f32 {
            Some((s.x as u32, s.y as u32, v.z))
        } else {
            None
        }
    }

    /// Conservative frustum test: false only if all corners lie outside one
    /// of the six planes.
    pub fn intersects(&self, bounds: &CubeBounds) -> bool {
        let slack = bounds.size * 1e-4;
        let ty = 1.0 / self.focal;
        let tx = ty * self.aspect();
        let corners = bounds.corners().map(|c| self.to_view(c));
        let planes: [&dyn Fn(Vec3) -> f32; 6] = [
            &|v| v.z - self.near,
            &|v| self.far - v.z,
            &|v| v.z * tx - v.x,
            &|v| v.z * tx + v.x,
            &|v| v.z * ty - v.y,
            &|v| v.z * ty + v.y,
        ];
        planes.iter().all(|plane| corners.iter().any(|&c| plane(c) >= -slack))
    }

    /// Projected size of a cube: the larger side of the pixel rectangle that
    /// bounds its corners.
    pub fn screen_size(&self, bounds: &CubeBounds) -> ScreenSize {
        let mut lo = Vec2::splat(f32::INFINITY);
        let mut hi = Vec2::splat(f32::NEG_INFINITY);
        for c in bounds.corners() {
            let v = self.to_view(c);
            if v.z <= self.near {
                return ScreenSize::Infinite;
            }
            let s = self.view_to_pixel(v);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        let ext = hi - lo;
        ScreenSize::Pixels(ext.x.max(ext.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScreenSize {
    Pixels(f32),
    /// Some corner is at or behind the near plane.
    Infinite,
}

impl ScreenSize {
    pub fn exceeds(self, threshold: f32) -> bool {
        match self {
            ScreenSize::Pixels(px) => px > threshold,
            ScreenSize::Infinite => true,
        }
    }
}

/// Nodes chosen for one frame; no node is an ancestor of another.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisibleSet {
    pub nodes: Vec<NodeId>,
}

impl VisibleSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Starts at the root, drops nodes outside the frustum and replaces inner
/// nodes larger than `threshold` pixels by their children.
pub fn select_visible(tree: &Octree, camera: &Camera, threshold: f32) -> VisibleSet {
    let root = tree.root();
    if root.is_leaf() && root.count() == 0 {
        return VisibleSet::default();
    }
    let mut nodes = Vec::new();
    let mut stack = Vec::new();
    if camera.intersects(root.bounds()) {
        stack.push(root.id());
    }
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        match node.children() {
            Some(children) if camera.screen_size(node.bounds()).exceeds(threshold) => {
                for &c in children.iter().rev() {
                    if camera.intersects(tree.node(c).bounds()) {
                        stack.push(c);
                    }
                }
            }
            _ => nodes.push(id),
        }
    }
    VisibleSet { nodes }
}
