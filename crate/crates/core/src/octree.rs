//! Octree nodes, spatial routing and occupancy grids.

use std::sync::atomic::{AtomicU32, Ordering};

use glam::Vec3;
use serde::Serialize;

use crate::config::LodConfig;
use crate::store::{Arena, ChunkHandle, ChunkPool, ChunkRef, Region};
use crate::update::{SpillBuffer, UpdateError};

/// Full-precision sample: position plus RGBA color. 16 bytes on disk.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub position: Vec3,
    pub color: [u8; 4],
}

impl Point {
    pub const BYTES: usize = 16;

    pub fn new(x: f32, y: f32, z: f32, color: [u8; 4]) -> Self {
        Self {
            position: Vec3::new(x, y, z),
            color,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
    }

    /// Little-endian XYZRGBA record.
    pub fn to_le_bytes(&self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[0..4].copy_from_slice(&self.position.x.to_le_bytes());
        out[4..8].copy_from_slice(&self.position.y.to_le_bytes());
        out[8..12].copy_from_slice(&self.position.z.to_le_bytes());
        out[12..16].copy_from_slice(&self.color);
        out
    }

    pub fn from_le_bytes(b: &[u8; 16]) -> Self {
        let f = |i: usize| f32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        Self::new(f(0), f(4), f(8), [b[12], b[13], b[14], b[15]])
    }

    pub(crate) fn to_words(self) -> (u64, u64) {
        let lo = self.position.x.to_bits() as u64 | ((self.position.y.to_bits() as u64) << 32);
        let hi = self.position.z.to_bits() as u64 | ((u32::from_le_bytes(self.color) as u64) << 32);
        (lo, hi)
    }

    pub(crate) fn from_words(lo: u64, hi: u64) -> Self {
        Self::new(
            f32::from_bits(lo as u32),
            f32::from_bits((lo >> 32) as u32),
            f32::from_bits(hi as u32),
            ((hi >> 32) as u32).to_le_bytes(),
        )
    }

    /// Bit-exact identity, usable for sorting and multiset comparison.
    pub fn bit_key(&self) -> [u32; 4] {
        [
            self.position.x.to_bits(),
            self.position.y.to_bits(),
            self.position.z.to_bits(),
            u32::from_le_bytes(self.color),
        ]
    }
}

/// Axis-aligned cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CubeBounds {
    #[serde(with = "vec3_serde")]
    pub min: Vec3,
    pub size: f32,
}

mod vec3_serde {
    use glam::Vec3;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.to_array())
    }
}

impl CubeBounds {
    pub fn new(min: Vec3, size: f32) -> Self {
        assert!(size > 0.0 && size.is_finite(), "cube size must be positive");
        Self { min, size }
    }

    pub fn unit() -> Self {
        Self::new(Vec3::ZERO, 1.0)
    }

    /// Smallest cube sharing the box center, growing the shorter axes
    /// symmetrically. Degenerate boxes get size 1.
    pub fn cubify(min: Vec3, max: Vec3) -> Self {
        let extent = max - min;
        let mut size = extent.max_element();
        if !(size > 0.0) {
            size = 1.0;
        }
        let center = (min + max) * 0.5;
        let mut cube_min = center - Vec3::splat(size * 0.5);
        // keep the exact min on the longest axis
        for axis in 0..3 {
            if extent[axis] == size {
                cube_min[axis] = min[axis];
            }
        }
        let mut bounds = Self::new(cube_min, size);
        // rounding may leave max just outside; widen by ulps until it fits
        while !(bounds.contains(max) && bounds.contains(min)) {
            bounds.size = next_up(bounds.size);
        }
        bounds
    }

    pub fn max(&self) -> Vec3 {
        self.min + Vec3::splat(self.size)
    }

    pub fn center(&self) -> Vec3 {
        self.min + Vec3::splat(self.size * 0.5)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.cmpge(self.min).all() && p.cmple(self.max()).all()
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        p.clamp(self.min, self.max())
    }

    /// Octant index with bit 0 = x, bit 1 = y, bit 2 = z; a coordinate equal
    /// to the center goes to the upper half.
    #[inline]
    pub fn octant_of(&self, p: Vec3) -> usize {
        let c = self.center();
        (p.x >= c.x) as usize | ((p.y >= c.y) as usize) << 1 | ((p.z >= c.z) as usize) << 2
    }

    pub fn child(&self, octant: usize) -> Self {
        let half = self.size * 0.5;
        let c = self.center();
        let pick = |bit: usize, lo: f32, mid: f32| if octant & bit != 0 { mid } else { lo };
        Self {
            min: Vec3::new(
                pick(1, self.min.x, c.x),
                pick(2, self.min.y, c.y),
                pick(4, self.min.z, c.z),
            ),
            size: half,
        }
    }

    #[inline]
    pub fn cell_coords(&self, p: Vec3, resolution: u32) -> [u32; 3] {
        let g = resolution as f32;
        let max = resolution - 1;
        let axis = |v: f32, lo: f32| {
            let c = (g * (v - lo) / self.size).floor();
            if c <= 0.0 {
                0
            } else {
                (c as u32).min(max)
            }
        };
        [
            axis(p.x, self.min.x),
            axis(p.y, self.min.y),
            axis(p.z, self.min.z),
        ]
    }

    /// Linear index `x + G*y + G²*z` of the sampling cell containing `p`.
    #[inline]
    pub fn cell_of(&self, p: Vec3, resolution: u32) -> u32 {
        let [x, y, z] = self.cell_coords(p, resolution);
        x + resolution * (y + resolution * z)
    }

    pub fn voxel_center(&self, cell: u32, resolution: u32) -> Vec3 {
        let g = resolution;
        let coords = Vec3::new((cell % g) as f32, ((cell / g) % g) as f32, (cell / (g * g)) as f32);
        self.min + (coords + Vec3::splat(0.5)) * (self.size / g as f32)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let s = self.size;
        std::array::from_fn(|i| {
            self.min
                + Vec3::new(
                    if i & 1 != 0 { s } else { 0.0 },
                    if i & 2 != 0 { s } else { 0.0 },
                    if i & 4 != 0 { s } else { 0.0 },
                )
        })
    }
}

fn next_up(v: f32) -> f32 {
    f32::from_bits(v.to_bits() + 1)
}

/// Result of probing an occupancy cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridProbe {
    WasEmpty,
    WasOccupied,
}

/// `G³` bits in the arena, one per sampling cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancyGrid {
    region: Region,
    resolution: u32,
}

impl OccupancyGrid {
    pub fn byte_len(resolution: u32) -> usize {
        (resolution as usize).pow(3).div_ceil(8)
    }

    pub fn allocate(arena: &Arena, resolution: u32) -> Result<Self, crate::store::OutOfArena> {
        let region = arena.alloc(Self::byte_len(resolution), 64)?;
        Ok(Self { region, resolution })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn test_and_set(&self, arena: &Arena, cell: u32) -> GridProbe {
        debug_assert!(cell < self.resolution.pow(3));
        let word = &arena.words(self.region)[(cell / 64) as usize];
        let mask = 1u64 << (cell % 64);
        if word.fetch_or(mask, Ordering::AcqRel) & mask == 0 {
            GridProbe::WasEmpty
        } else {
            GridProbe::WasOccupied
        }
    }

    pub fn is_set(&self, arena: &Arena, cell: u32) -> bool {
        let word = &arena.words(self.region)[(cell / 64) as usize];
        word.load(Ordering::Relaxed) & (1u64 << (cell % 64)) != 0
    }

    pub fn popcount(&self, arena: &Arena) -> u64 {
        arena
            .words(self.region)
            .iter()
            .map(|w| w.load(Ordering::Relaxed).count_ones() as u64)
            .sum()
    }

    pub fn occupied_cells(&self, arena: &Arena) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, w) in arena.words(self.region).iter().enumerate() {
            let mut bits = w.load(Ordering::Relaxed);
            while bits != 0 {
                let b = bits.trailing_zeros();
                out.push(i as u32 * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Leaf,
    /// Children are the eight consecutive ids starting at `first_child`.
    Inner {
        first_child: NodeId,
        grid: OccupancyGrid,
    },
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ChunkList {
    pub head: Option<ChunkHandle>,
    pub tail: Option<ChunkHandle>,
    pub len: u32,
}

#[derive(Debug)]
pub struct Node {
    id: NodeId,
    parent: Option<NodeId>,
    octant: u8,
    level: u32,
    bounds: CubeBounds,
    pub(crate) kind: NodeKind,
    /// Stored points (leaf) or voxels (inner).
    pub(crate) count: AtomicU32,
    /// Points or voxels counted for this update but not yet stored.
    pub(crate) pending: AtomicU32,
    pub(crate) chunks: ChunkList,
    pub(crate) is_final: bool,
    /// Chunks that receive this update's writes, starting at `window_base`.
    pub(crate) write_window: Vec<ChunkHandle>,
    pub(crate) window_base: u32,
}

impl Node {
    fn new(id: NodeId, parent: Option<NodeId>, octant: u8, level: u32, bounds: CubeBounds) -> Self {
        Self {
            id,
            parent,
            octant,
            level,
            bounds,
            kind: NodeKind::Leaf,
            count: AtomicU32::new(0),
            pending: AtomicU32::new(0),
            chunks: ChunkList::default(),
            is_final: false,
            write_window: Vec::new(),
            window_base: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn octant(&self) -> u8 {
        self.octant
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn bounds(&self) -> &CubeBounds {
        &self.bounds
    }

    pub fn kind(&self) -> &NodeKind {
        &self.kind
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }

    pub fn is_final(&self) -> bool {
        self.is_final
    }

    /// Points for a leaf, voxels for an inner node.
    pub fn count(&self) -> u32 {
        self.count.load(Ordering::Acquire)
    }

    pub fn pending(&self) -> u32 {
        self.pending.load(Ordering::Acquire)
    }

    pub fn chunk_count(&self) -> u32 {
        self.chunks.len
    }

    pub fn chunk_head(&self) -> Option<ChunkHandle> {
        self.chunks.head
    }

    pub fn grid(&self) -> Option<&OccupancyGrid> {
        match &self.kind {
            NodeKind::Inner { grid, .. } => Some(grid),
            NodeKind::Leaf => None,
        }
    }

    pub fn children(&self) -> Option<[NodeId; 8]> {
        match self.kind {
            NodeKind::Inner { first_child, .. } => {
                Some(std::array::from_fn(|i| NodeId(first_child.0 + i as u32)))
            }
            NodeKind::Leaf => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TreeStats {
    pub nodes: usize,
    pub inner_nodes: usize,
    pub leaf_nodes: usize,
    pub points: u64,
    pub voxels: u64,
    pub chunks: u64,
    pub max_level: u32,
}

/// Node graph plus the arena and chunk pool that back it.
#[derive(Debug)]
pub struct Octree {
    nodes: Vec<Node>,
    arena: Arena,
    pool: ChunkPool,
    bounds: CubeBounds,
    leaf_threshold: u32,
    grid_resolution: u32,
    max_depth: u32,
}

/// Outcome of [`Octree::split_node`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitOutcome {
    Split {
        first_child: NodeId,
        spilled: usize,
        released_chunks: usize,
    },
    /// The node sits at the depth cap and stays a leaf.
    AtMaxDepth,
}

impl Octree {
    pub fn new(bounds: CubeBounds, config: &LodConfig) -> Self {
        assert!(config.grid_resolution > 0, "grid resolution must be positive");
        Self {
            nodes: vec![Node::new(NodeId::ROOT, None, 0, 0, bounds)],
            arena: Arena::new(config.arena_bytes),
            pool: ChunkPool::new(config.chunk_capacity),
            bounds,
            leaf_threshold: config.leaf_threshold,
            grid_resolution: config.grid_resolution,
            max_depth: config.max_depth,
        }
    }

    pub fn bounds(&self) -> &CubeBounds {
        &self.bounds
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn pool(&self) -> &ChunkPool {
        &self.pool
    }

    pub fn chunk_capacity(&self) -> usize {
        self.pool.chunk_capacity()
    }

    pub fn leaf_threshold(&self) -> u32 {
        self.leaf_threshold
    }

    pub fn grid_resolution(&self) -> u32 {
        self.grid_resolution
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1 && self.root().count() == 0 && self.root().pending() == 0
    }

    /// Walks from the root to the leaf containing `p`, calling `visit_inner`
    /// for every inner node on the way.
    #[inline]
    pub fn descend(&self, p: Vec3, mut visit_inner: impl FnMut(&Node)) -> NodeId {
        let mut node = &self.nodes[0];
        loop {
            match node.kind {
                NodeKind::Leaf => return node.id,
                NodeKind::Inner { first_child, .. } => {
                    visit_inner(node);
                    let octant = node.bounds.octant_of(p);
                    node = &self.nodes[first_child.index() + octant];
                }
            }
        }
    }

    #[inline]
    pub fn leaf_of(&self, p: Vec3) -> NodeId {
        self.descend(p, |_| {})
    }

    pub fn chunk(&self, handle: ChunkHandle) -> ChunkRef<'_> {
        self.pool.chunk(&self.arena, handle)
    }

    /// Chunk handles of a node in list order.
    pub fn chunk_list(&self, id: NodeId) -> Vec<ChunkHandle> {
        let mut out = Vec::new();
        let mut cursor = self.node(id).chunks.head;
        while let Some(h) = cursor {
            out.push(h);
            cursor = self.chunk(h).next();
        }
        out
    }

    /// All stored samples of a node, walking the chunk list.
    pub fn samples(&self, id: NodeId) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.node(id).count() as usize);
        self.for_each_sample(id, |p| out.push(*p));
        out
    }

    /// Stored samples from slot `start` onwards.
    pub fn samples_from(&self, id: NodeId, start: usize) -> Vec<Point> {
        let total = self.node(id).count() as usize;
        let cap = self.chunk_capacity();
        let mut out = Vec::with_capacity(total.saturating_sub(start));
        let mut cursor = self.node(id).chunks.head;
        let mut index = 0;
        while let Some(h) = cursor {
            let chunk = self.chunk(h);
            let first = index * cap;
            if first + cap > start {
                for slot in start.max(first)..(first + cap).min(total) {
                    out.push(chunk.read(slot - first));
                }
            }
            if first + cap >= total {
                break;
            }
            index += 1;
            cursor = chunk.next();
        }
        out
    }

    pub fn for_each_sample(&self, id: NodeId, mut f: impl FnMut(&Point)) {
        let node = self.node(id);
        let total = node.count() as usize;
        let cap = self.chunk_capacity();
        let mut cursor = node.chunks.head;
        let mut seen = 0;
        while let (Some(h), true) = (cursor, seen < total) {
            let chunk = self.chunk(h);
            let n = cap.min(total - seen);
            for slot in 0..n {
                f(&chunk.read(slot));
            }
            seen += n;
            cursor = chunk.next();
        }
    }

    /// Appends a chunk at the tail of a node's list.
    pub(crate) fn append_chunk(&mut self, id: NodeId) -> Result<ChunkHandle, crate::store::OutOfArena> {
        let handle = self.pool.acquire(&self.arena)?;
        let tail = self.nodes[id.index()].chunks.tail;
        if let Some(t) = tail {
            self.pool.chunk(&self.arena, t).set_next(Some(handle));
        }
        let list = &mut self.nodes[id.index()].chunks;
        if list.head.is_none() {
            list.head = Some(handle);
        }
        list.tail = Some(handle);
        list.len += 1;
        Ok(handle)
    }

    /// Converts a leaf into an inner node with eight empty leaf children.
    ///
    /// The leaf's stored points move to `spill` and its chunks go back to the
    /// pool. At the depth cap the node is left untouched and marked final.
    pub fn split_node(&mut self, id: NodeId, spill: &mut SpillBuffer) -> Result<SplitOutcome, UpdateError> {
        let (level, bounds) = {
            let node = self.node(id);
            assert!(node.is_leaf(), "only leaves can be split");
            (node.level, node.bounds)
        };
        if level >= self.max_depth {
            self.node_mut(id).is_final = true;
            return Ok(SplitOutcome::AtMaxDepth);
        }

        let stored = self.samples(id);
        spill.extend(&stored)?;
        let grid = OccupancyGrid::allocate(&self.arena, self.grid_resolution)?;

        let head = self.node(id).chunks.head;
        let released = self.pool.release(&self.arena, head);

        let first_child = NodeId(self.nodes.len() as u32);
        for octant in 0..8 {
            let child_id = NodeId(first_child.0 + octant as u32);
            self.nodes.push(Node::new(child_id, Some(id), octant as u8, level + 1, bounds.child(octant)));
        }

        let node = self.node_mut(id);
        node.kind = NodeKind::Inner { first_child, grid };
        node.count.store(0, Ordering::Release);
        node.pending.store(0, Ordering::Release);
        node.chunks = ChunkList::default();
        Ok(SplitOutcome::Split {
            first_child,
            spilled: stored.len(),
            released_chunks: released,
        })
    }

    pub fn stats(&self) -> TreeStats {
        let mut s = TreeStats {
            nodes: self.nodes.len(),
            ..Default::default()
        };
        for n in &self.nodes {
            s.chunks += n.chunks.len as u64;
            s.max_level = s.max_level.max(n.level);
            if n.is_leaf() {
                s.leaf_nodes += 1;
                s.points += n.count() as u64;
            } else {
                s.inner_nodes += 1;
                s.voxels += n.count() as u64;
            }
        }
        s
    }

    /// Verifies structural invariants at a quiescent point.
    pub fn check_invariants(&self) -> Result<(), String> {
        let cap = self.chunk_capacity() as u64;
        let mut linked = 0u64;
        for n in &self.nodes {
            let count = n.count() as u64;
            let needed = count.div_ceil(cap);
            let walked = self.chunk_list(n.id);
            if walked.len() as u64 != n.chunks.len as u64 {
                return Err(format!("node {}: chunk list length {} != recorded {}", n.id.0, walked.len(), n.chunks.len));
            }
            if n.chunks.len as u64 != needed {
                return Err(format!("node {}: {} chunks for count {count}, expected {needed}", n.id.0, n.chunks.len));
            }
            for (i, h) in walked.iter().enumerate() {
                let occ = self.chunk(*h).occupied() as u64;
                let expect = if i + 1 < walked.len() { cap } else { count - cap * i as u64 };
                if occ != expect {
                    return Err(format!("node {}: chunk {i} holds {occ}, expected {expect}", n.id.0));
                }
            }
            linked += walked.len() as u64;
            if n.pending() != 0 || n.is_final {
                return Err(format!("node {}: transient state left over", n.id.0));
            }
            match &n.kind {
                NodeKind::Leaf => {
                    if count > self.leaf_threshold as u64 && n.level < self.max_depth {
                        return Err(format!("leaf {} holds {count} > threshold", n.id.0));
                    }
                }
                NodeKind::Inner { grid, first_child } => {
                    let pop = grid.popcount(&self.arena);
                    if pop != count {
                        return Err(format!("inner {}: popcount {pop} != voxel count {count}", n.id.0));
                    }
                    for o in 0..8u32 {
                        let child = self.node(NodeId(first_child.0 + o));
                        if child.parent != Some(n.id) || child.octant as u32 != o || child.level != n.level + 1 {
                            return Err(format!("inner {}: child {o} misconnected", n.id.0));
                        }
                    }
                }
            }
        }
        let pool = self.pool.stats();
        if pool.allocated_total != linked + pool.free as u64 {
            return Err(format!(
                "pool ledger: allocated {} != linked {linked} + free {}",
                pool.allocated_total, pool.free
            ));
        }
        Ok(())
    }
}
