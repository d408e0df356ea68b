//! Headless client-side reconstruction of a streamed octree.

use std::collections::BTreeMap;

use glam::Vec3;
use thiserror::Error;

use super::protocol::{Hello, MalformedMessage, StatsTick, StreamMessage, PROTOCOL_VERSION};
use crate::octree::{CubeBounds, NodeId, Octree, Point};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolViolation {
    #[error(transparent)]
    Malformed(#[from] MalformedMessage),
    #[error("first message must be Hello")]
    MissingHello,
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("invalid root bounds in Hello")]
    Bounds,
    #[error("message after end of stream")]
    AfterEnd,
    #[error("node {0} created out of order")]
    CreationOrder(u32),
    #[error("node {0} is not known")]
    UnknownNode(u32),
    #[error("node {0} created under a parent that was never split")]
    ParentNotSplit(u32),
    #[error("node {0} is already inner")]
    AlreadySplit(u32),
    #[error("points appended to inner node {0}")]
    PointsToInner(u32),
    #[error("voxels appended to leaf {0}")]
    VoxelsToLeaf(u32),
    #[error("voxel cell {cell} outside the {resolution}^3 grid")]
    Cell { cell: u32, resolution: u32 },
    #[error("server error: {0}")]
    Server(String),
}

#[derive(Debug, Clone)]
pub struct MirrorNode {
    pub id: u32,
    pub parent: Option<u32>,
    pub octant: u8,
    pub level: u8,
    pub bounds: CubeBounds,
    pub inner: bool,
    pub points: Vec<Point>,
    pub voxels: Vec<(u32, [u8; 4])>,
}

impl MirrorNode {
    pub fn sample_count(&self) -> usize {
        if self.inner { self.voxels.len() } else { self.points.len() }
    }
}

/// Applies messages in log order and keeps the resulting tree.
#[derive(Debug, Clone, Default)]
pub struct Mirror {
    hello: Option<Hello>,
    nodes: Vec<MirrorNode>,
    stats: Option<StatsTick>,
    ended: bool,
    messages: u64,
}

impl Mirror {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hello(&self) -> Option<&Hello> {
        self.hello.as_ref()
    }

    pub fn nodes(&self) -> &[MirrorNode] {
        &self.nodes
    }

    pub fn last_stats(&self) -> Option<&StatsTick> {
        self.stats.as_ref()
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    pub fn apply_bytes(&mut self, bytes: &[u8]) -> Result<(), ProtocolViolation> {
        self.apply(StreamMessage::decode(bytes)?)
    }

    pub fn apply(&mut self, msg: StreamMessage) -> Result<(), ProtocolViolation> {
        if self.ended {
            return Err(ProtocolViolation::AfterEnd);
        }
        let hello = match (&msg, self.hello) {
            (StreamMessage::Hello(h), None) => {
                if h.version != PROTOCOL_VERSION {
                    return Err(ProtocolViolation::Version(h.version));
                }
                if !(h.bounds.size > 0.0 && h.bounds.size.is_finite()) || h.grid_resolution == 0 {
                    return Err(ProtocolViolation::Bounds);
                }
                self.hello = Some(*h);
                self.messages += 1;
                return Ok(());
            }
            (_, None) | (StreamMessage::Hello(_), Some(_)) => return Err(ProtocolViolation::MissingHello),
            (_, Some(h)) => h,
        };
        match msg {
            StreamMessage::Hello(_) => unreachable!(),
            StreamMessage::NodeCreated { id, parent, octant, level } => {
                if id as usize != self.nodes.len() {
                    return Err(ProtocolViolation::CreationOrder(id));
                }
                let bounds = match parent {
                    None if id == 0 => hello.bounds,
                    None => return Err(ProtocolViolation::CreationOrder(id)),
                    Some(p) => {
                        let parent = self.nodes.get(p as usize).ok_or(ProtocolViolation::UnknownNode(p))?;
                        if !parent.inner {
                            return Err(ProtocolViolation::ParentNotSplit(id));
                        }
                        parent.bounds.child(octant as usize & 7)
                    }
                };
                self.nodes.push(MirrorNode {
                    id,
                    parent,
                    octant,
                    level,
                    bounds,
                    inner: false,
                    points: Vec::new(),
                    voxels: Vec::new(),
                });
            }
            StreamMessage::NodeSplit { id } => {
                let node = self.node_mut(id)?;
                if node.inner {
                    return Err(ProtocolViolation::AlreadySplit(id));
                }
                node.inner = true;
                node.points = Vec::new();
            }
            StreamMessage::PointsAppended { id, points } => {
                let node = self.node_mut(id)?;
                if node.inner {
                    return Err(ProtocolViolation::PointsToInner(id));
                }
                node.points.extend(points);
            }
            StreamMessage::VoxelsAppended { id, voxels } => {
                let g = hello.grid_resolution as u64;
                if let Some(&(cell, _)) = voxels.iter().find(|(c, _)| *c as u64 >= g * g * g) {
                    return Err(ProtocolViolation::Cell { cell, resolution: hello.grid_resolution });
                }
                let node = self.node_mut(id)?;
                if !node.inner {
                    return Err(ProtocolViolation::VoxelsToLeaf(id));
                }
                node.voxels.extend(voxels);
            }
            StreamMessage::StatsTick(s) => self.stats = Some(s),
            StreamMessage::EndOfStream => self.ended = true,
            StreamMessage::Error { message } => {
                self.ended = true;
                return Err(ProtocolViolation::Server(message));
            }
        }
        self.messages += 1;
        Ok(())
    }

    fn node_mut(&mut self, id: u32) -> Result<&mut MirrorNode, ProtocolViolation> {
        self.nodes.get_mut(id as usize).ok_or(ProtocolViolation::UnknownNode(id))
    }

    /// World positions and colors of a node's samples; voxels sit at their
    /// cell centers.
    pub fn node_samples(&self, id: u32) -> Vec<Point> {
        let node = &self.nodes[id as usize];
        if !node.inner {
            return node.points.clone();
        }
        let g = self.hello.map_or(1, |h| h.grid_resolution);
        node.voxels
            .iter()
            .map(|&(cell, color)| Point {
                position: node.bounds.voxel_center(cell, g),
                color,
            })
            .collect()
    }

    pub fn total_points(&self) -> u64 {
        self.nodes.iter().filter(|n| !n.inner).map(|n| n.points.len() as u64).sum()
    }

    pub fn total_voxels(&self) -> u64 {
        self.nodes.iter().map(|n| n.voxels.len() as u64).sum()
    }

    /// Compares node set, kinds, counts, voxel cell sets and leaf point
    /// multisets against a server-side tree.
    pub fn compare(&self, tree: &Octree) -> Result<(), String> {
        let root_empty = tree.root().is_leaf() && tree.root().count() == 0;
        if self.nodes.is_empty() && root_empty {
            return Ok(());
        }
        if self.nodes.len() != tree.len() {
            return Err(format!("node count {} vs {}", self.nodes.len(), tree.len()));
        }
        if let Some(h) = self.hello {
            if h.bounds != *tree.bounds() {
                return Err("root bounds differ".into());
            }
        }
        for (m, n) in self.nodes.iter().zip(tree.nodes()) {
            let id = m.id;
            if m.parent != n.parent().map(|p| p.0) || m.octant != n.octant() || m.level as u32 != n.level() {
                return Err(format!("node {id}: placement differs"));
            }
            if m.bounds != *n.bounds() {
                return Err(format!("node {id}: bounds differ"));
            }
            if m.inner == n.is_leaf() {
                return Err(format!("node {id}: kind differs"));
            }
            if m.sample_count() != n.count() as usize {
                return Err(format!("node {id}: {} samples vs {}", m.sample_count(), n.count()));
            }
            let samples = tree.samples(NodeId(id));
            if m.inner {
                let g = tree.grid_resolution();
                let cells: BTreeMap<u32, [u8; 4]> = m.voxels.iter().copied().collect();
                if cells.len() != m.voxels.len() {
                    return Err(format!("node {id}: duplicate voxel cells"));
                }
                let grid = n.grid().expect("inner node has a grid");
                let mut expected = grid.occupied_cells(tree.arena());
                expected.sort_unstable();
                if !cells.keys().copied().eq(expected) {
                    return Err(format!("node {id}: voxel cell sets differ"));
                }
                for s in &samples {
                    let cell = n.bounds().cell_of(s.position, g);
                    if cells.get(&cell) != Some(&s.color) {
                        return Err(format!("node {id}: voxel in cell {cell} differs"));
                    }
                }
            } else {
                let key = |p: &Point| p.bit_key();
                let mut a: Vec<_> = m.points.iter().map(key).collect();
                let mut b: Vec<_> = samples.iter().map(key).collect();
                a.sort_unstable();
                b.sort_unstable();
                if a != b {
                    return Err(format!("node {id}: point multisets differ"));
                }
            }
        }
        Ok(())
    }

    /// Lowest corner of the root, for display.
    pub fn origin(&self) -> Option<Vec3> {
        self.hello.map(|h| h.bounds.min)
    }
}
