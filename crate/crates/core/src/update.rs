//! Incremental per-frame octree update.
//!
//! A batch is inserted in four passes separated by full barriers:
//!
//! 1. **expand**: repeat a counting pass and a splitting pass until no leaf
//!    spills. Points of split leaves move to the spill buffer and are
//!    re-routed from the root together with the batch.
//! 2. **sample**: route every point again; each inner node on the way claims
//!    the point's sampling cell if it is still empty. Claimed cells go to the
//!    voxel backlog.
//! 3. **allocate**: grow the chunk list of every touched node to fit its
//!    stored plus pending samples.
//! 4. **store**: write points into leaves and backlog voxels into inner nodes.
//!
//! Work items are ordered spill first, then batch. In deterministic mode the
//! lowest work index wins a contested cell and slots are handed out in work
//! order, so the result does not depend on the number of threads.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::LodConfig;
use crate::octree::{CubeBounds, NodeId, Octree, Point, SplitOutcome};
use crate::store::OutOfArena;

const BLOCK: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error(transparent)]
    OutOfArena(#[from] OutOfArena),
    #[error("spill buffer overflow: {needed} points exceed capacity {capacity}")]
    SpillOverflow { needed: usize, capacity: usize },
    #[error("voxel backlog overflow: {needed} voxels exceed capacity {capacity}; raise the backlog capacity")]
    BacklogOverflow { needed: usize, capacity: usize },
    #[error("while inserting batch at point offset {offset}: {source}")]
    InBatch {
        offset: u64,
        #[source]
        source: Box<UpdateError>,
    },
}

/// A slice of the input stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub points: Vec<Point>,
    /// Index of the first point in global ingestion order.
    pub source_offset: u64,
}

impl Batch {
    pub fn new(points: Vec<Point>, source_offset: u64) -> Self {
        Self { points, source_offset }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Splits a point sequence into consecutive batches of at most `batch_size`.
pub fn partition(points: &[Point], batch_size: usize) -> VecDeque<Batch> {
    assert!(batch_size > 0);
    points
        .chunks(batch_size)
        .enumerate()
        .map(|(i, c)| Batch::new(c.to_vec(), (i * batch_size) as u64))
        .collect()
}

/// Points of split leaves awaiting re-insertion during the current update.
#[derive(Debug, Clone)]
pub struct SpillBuffer {
    points: Vec<Point>,
    capacity: usize,
}

impl SpillBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            points: Vec::new(),
            capacity,
        }
    }

    pub fn extend(&mut self, points: &[Point]) -> Result<(), UpdateError> {
        let needed = self.points.len() + points.len();
        if needed > self.capacity {
            return Err(UpdateError::SpillOverflow {
                needed,
                capacity: self.capacity,
            });
        }
        self.points.extend_from_slice(points);
        Ok(())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn clear(&mut self) {
        self.points.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BacklogEntry {
    pub node: NodeId,
    pub cell: u32,
    pub color: [u8; 4],
}

/// Voxels created during the current update, waiting for chunk space.
#[derive(Debug, Clone)]
pub struct VoxelBacklog {
    entries: Vec<BacklogEntry>,
    capacity: usize,
    high_water: usize,
}

impl VoxelBacklog {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: Vec::new(),
            capacity,
            high_water: 0,
        }
    }

    fn reserve_for(&self, additional: usize) -> Result<(), UpdateError> {
        let needed = self.entries.len() + additional;
        if needed > self.capacity {
            return Err(UpdateError::BacklogOverflow {
                needed,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    fn push_all(&mut self, entries: impl IntoIterator<Item = BacklogEntry>) {
        self.entries.extend(entries);
        self.high_water = self.high_water.max(self.entries.len());
    }

    pub fn entries(&self) -> &[BacklogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn high_water_mark(&self) -> usize {
        self.high_water
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Frame-local time budget. Checked between batches only.
#[derive(Debug, Clone, Copy)]
pub struct BudgetClock {
    budget: Duration,
    started: Instant,
}

impl BudgetClock {
    pub fn start(budget: Duration) -> Self {
        Self {
            budget,
            started: Instant::now(),
        }
    }

    pub fn budget(&self) -> Duration {
        self.budget
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn exhausted(&self) -> bool {
        self.elapsed() >= self.budget
    }
}

/// Structural change produced by an update, in causal order.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeEvent {
    NodeCreated {
        id: NodeId,
        parent: Option<NodeId>,
        octant: u8,
        level: u32,
    },
    NodeSplit {
        id: NodeId,
    },
    PointsAppended {
        id: NodeId,
        points: Vec<Point>,
    },
    VoxelsAppended {
        id: NodeId,
        /// `(cell index, color)` pairs.
        voxels: Vec<(u32, [u8; 4])>,
    },
}

/// Outcome of inserting one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BatchDelta {
    pub points: u64,
    pub rejected: u64,
    pub voxels: u64,
    pub splits: u64,
    pub nodes_created: u64,
    pub expand_iterations: u32,
    pub spilled: u64,
    pub new_chunks: u64,
    #[serde(serialize_with = "ser_ms")]
    pub duration: Duration,
}

/// Outcome of one frame's worth of updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FrameReport {
    pub batches: usize,
    pub points: u64,
    #[serde(serialize_with = "ser_ms")]
    pub elapsed: Duration,
}

pub(crate) fn ser_ms<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

/// Running totals across frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub frames: u64,
    pub batches: u64,
    pub points_inserted: u64,
    pub rejected_points: u64,
    pub voxels_created: u64,
    pub nodes_created: u64,
    pub splits: u64,
    pub total_update: Duration,
    pub max_frame: Duration,
    pub backlog_high_water: usize,
    pub spill_high_water: usize,
}

impl UpdateStats {
    pub fn avg_frame_ms(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.total_update.as_secs_f64() * 1e3 / self.frames as f64
        }
    }

    pub fn max_frame_ms(&self) -> f64 {
        self.max_frame.as_secs_f64() * 1e3
    }

    /// Million points per second of update time.
    pub fn throughput_mps(&self) -> f64 {
        let secs = self.total_update.as_secs_f64();
        if secs > 0.0 {
            self.points_inserted as f64 / secs / 1e6
        } else {
            0.0
        }
    }
}

/// `⌈count / capacity⌉`.
pub fn chunks_needed(count: u64, capacity: u64) -> u64 {
    (count + capacity - 1) / capacity
}

/// Work items of one update: spilled points first, then the batch.
#[derive(Clone, Copy)]
pub struct WorkSet<'a> {
    pub spill: &'a [Point],
    pub batch: &'a [Point],
}

impl<'a> WorkSet<'a> {
    pub fn len(&self) -> usize {
        self.spill.len() + self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> &'a Point {
        if i < self.spill.len() {
            &self.spill[i]
        } else {
            &self.batch[i - self.spill.len()]
        }
    }
}

fn runs_parallel(n: usize) -> bool {
    n > BLOCK && rayon::current_num_threads() > 1
}

/// Runs `f` over consecutive index blocks, in parallel for large inputs.
/// Results come back in block order.
fn blocks<R: Send>(n: usize, f: impl Fn(Range<usize>) -> R + Sync) -> Vec<R> {
    if !runs_parallel(n) {
        return vec![f(0..n)];
    }
    (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| f(b * BLOCK..((b + 1) * BLOCK).min(n)))
        .collect()
}

/// Adds one to the pending counter of every non-final leaf hit by a work
/// item. Returns the leaves whose counter left zero.
pub fn count_pass(tree: &Octree, work: WorkSet<'_>) -> Vec<NodeId> {
    let mut touched: Vec<NodeId> = blocks(work.len(), |range| {
        let mut out = Vec::new();
        for i in range {
            let leaf = tree.node(tree.leaf_of(work.get(i).position));
            if !leaf.is_final() && leaf.pending.fetch_add(1, Ordering::Relaxed) == 0 {
                out.push(leaf.id());
            }
        }
        out
    })
    .concat();
    touched.sort_unstable();
    touched
}

/// Splits every counted leaf whose stored + pending count exceeds the
/// threshold; marks the others final and appends them to `finals`.
pub fn split_pass(
    tree: &mut Octree,
    counted: &[NodeId],
    spill: &mut SpillBuffer,
    finals: &mut Vec<NodeId>,
    mut events: Option<&mut Vec<TreeEvent>>,
) -> Result<usize, UpdateError> {
    let threshold = tree.leaf_threshold() as u64;
    let mut splits = 0;
    for &id in counted {
        let node = tree.node(id);
        let prospective = node.count() as u64 + node.pending() as u64;
        if prospective > threshold {
            match tree.split_node(id, spill)? {
                SplitOutcome::Split { first_child, .. } => {
                    splits += 1;
                    if let Some(ev) = events.as_deref_mut() {
                        ev.push(TreeEvent::NodeSplit { id });
                        let level = tree.node(id).level() + 1;
                        for octant in 0..8u8 {
                            ev.push(TreeEvent::NodeCreated {
                                id: NodeId(first_child.0 + octant as u32),
                                parent: Some(id),
                                octant,
                                level,
                            });
                        }
                    }
                }
                SplitOutcome::AtMaxDepth => finals.push(id),
            }
        } else {
            tree.node_mut(id).is_final = true;
            finals.push(id);
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpandReport {
    pub iterations: u32,
    pub splits: usize,
    /// Leaves that will receive points this update, ascending.
    pub final_leaves: Vec<NodeId>,
}

/// Alternates counting and splitting until an iteration splits nothing.
pub fn expand(
    tree: &mut Octree,
    batch: &[Point],
    spill: &mut SpillBuffer,
    mut events: Option<&mut Vec<TreeEvent>>,
) -> Result<ExpandReport, UpdateError> {
    let mut report = ExpandReport::default();
    loop {
        report.iterations += 1;
        let counted = count_pass(
            tree,
            WorkSet {
                spill: spill.points(),
                batch,
            },
        );
        let splits = split_pass(tree, &counted, spill, &mut report.final_leaves, events.as_deref_mut())?;
        report.splits += splits;
        if splits == 0 {
            break;
        }
    }
    report.final_leaves.sort_unstable();
    Ok(report)
}

#[derive(Clone, Copy)]
struct Candidate {
    key: u64,
    index: u32,
    level: u32,
}

/// Voxel sampling. Every inner node on each work item's path claims the
/// item's cell if it is still empty. Returns the leaf of every work item.
pub fn sample_voxels(
    tree: &Octree,
    work: WorkSet<'_>,
    backlog: &mut VoxelBacklog,
    deterministic: bool,
) -> Result<Vec<NodeId>, UpdateError> {
    let g = tree.grid_resolution();
    let arena = tree.arena();

    // A sequential first-come pass is already in replay order.
    if !deterministic || !runs_parallel(work.len()) {
        let parts = blocks(work.len(), |range| {
            let mut leaves = Vec::with_capacity(range.len());
            let mut fresh = Vec::new();
            for i in range {
                let p = work.get(i);
                leaves.push(tree.descend(p.position, |node| {
                    let cell = node.bounds().cell_of(p.position, g);
                    let grid = node.grid().unwrap();
                    if grid.test_and_set(arena, cell) == crate::octree::GridProbe::WasEmpty {
                        node.pending.fetch_add(1, Ordering::Relaxed);
                        fresh.push(BacklogEntry {
                            node: node.id(),
                            cell,
                            color: p.color,
                        });
                    }
                }));
            }
            (leaves, fresh)
        });
        let mut leaf_of = Vec::with_capacity(work.len());
        let fresh_total: usize = parts.iter().map(|(_, f)| f.len()).sum();
        backlog.reserve_for(fresh_total)?;
        for (leaves, fresh) in parts {
            leaf_of.extend(leaves);
            backlog.push_all(fresh);
        }
        return Ok(leaf_of);
    }

    // Collect every (node, cell) that looks empty, then keep the lowest index per cell.
    let parts = blocks(work.len(), |range| {
        let mut leaves = Vec::with_capacity(range.len());
        let mut cands = Vec::new();
        for i in range {
            let p = work.get(i);
            leaves.push(tree.descend(p.position, |node| {
                let cell = node.bounds().cell_of(p.position, g);
                if !node.grid().unwrap().is_set(arena, cell) {
                    cands.push(Candidate {
                        key: (node.id().0 as u64) << 32 | cell as u64,
                        index: i as u32,
                        level: node.level(),
                    });
                }
            }));
        }
        (leaves, cands)
    });
    let mut leaf_of = Vec::with_capacity(work.len());
    let mut cands = Vec::new();
    for (leaves, c) in parts {
        leaf_of.extend(leaves);
        cands.extend(c);
    }
    if cands.len() > BLOCK {
        cands.par_sort_unstable_by_key(|c| (c.key, c.index));
    } else {
        cands.sort_unstable_by_key(|c| (c.key, c.index));
    }
    cands.dedup_by_key(|c| c.key);
    backlog.reserve_for(cands.len())?;
    // replay order: by work index, root to leaf
    cands.sort_unstable_by_key(|c| (c.index, c.level));

    let mut entries = Vec::with_capacity(cands.len());
    for c in &cands {
        let node = tree.node(NodeId((c.key >> 32) as u32));
        let cell = c.key as u32;
        let probe = node.grid().unwrap().test_and_set(arena, cell);
        debug_assert_eq!(probe, crate::octree::GridProbe::WasEmpty);
        node.pending.fetch_add(1, Ordering::Relaxed);
        entries.push(BacklogEntry {
            node: node.id(),
            cell,
            color: work.get(c.index as usize).color,
        });
    }
    backlog.push_all(entries);
    Ok(leaf_of)
}

/// Grows every touched node's chunk list to `chunks_needed(stored + pending)`
/// and prepares the write window for the store pass. Returns new chunk count.
pub fn allocate_chunks(tree: &mut Octree, touched: &[NodeId]) -> Result<u64, UpdateError> {
    let cap = tree.chunk_capacity() as u64;
    let mut added = 0;
    for &id in touched {
        let node = tree.node(id);
        let pending = node.pending() as u64;
        if pending == 0 {
            continue;
        }
        let stored = node.count() as u64;
        let needed = chunks_needed(stored + pending, cap);
        while (tree.node(id).chunk_count() as u64) < needed {
            tree.append_chunk(id)?;
            added += 1;
        }
        let base = (stored / cap) as usize;
        let window: Vec<_> = tree.chunk_list(id).split_off(base);
        let node = tree.node_mut(id);
        node.write_window = window;
        node.window_base = base as u32;
    }
    Ok(added)
}

fn write_sample(tree: &Octree, id: NodeId, slot: u32, sample: &Point) {
    let node = tree.node(id);
    let cap = tree.chunk_capacity() as u32;
    let handle = node.write_window[(slot / cap - node.window_base) as usize];
    let chunk = tree.chunk(handle);
    chunk.write((slot % cap) as usize, sample);
    chunk.bump_occupied();
}

/// Writes every work item into its leaf and every backlog voxel into its
/// inner node. `leaf_of` comes from [`sample_voxels`].
pub fn store_all(tree: &Octree, work: WorkSet<'_>, leaf_of: &[NodeId], backlog: &VoxelBacklog, deterministic: bool) {
    assert_eq!(leaf_of.len(), work.len());
    let g = tree.grid_resolution();

    if deterministic && runs_parallel(work.len().max(backlog.len())) {
        let slots: Vec<u32> = leaf_of
            .iter()
            .map(|id| tree.node(*id).count.fetch_add(1, Ordering::Relaxed))
            .collect();
        blocks(work.len(), |range| {
            for i in range {
                write_sample(tree, leaf_of[i], slots[i], work.get(i));
            }
        });
        let entries = backlog.entries();
        let slots: Vec<u32> = entries
            .iter()
            .map(|e| tree.node(e.node).count.fetch_add(1, Ordering::Relaxed))
            .collect();
        blocks(entries.len(), |range| {
            for i in range {
                let e = &entries[i];
                let center = tree.node(e.node).bounds().voxel_center(e.cell, g);
                write_sample(tree, e.node, slots[i], &Point { position: center, color: e.color });
            }
        });
    } else {
        blocks(work.len(), |range| {
            for i in range {
                let slot = tree.node(leaf_of[i]).count.fetch_add(1, Ordering::Relaxed);
                write_sample(tree, leaf_of[i], slot, work.get(i));
            }
        });
        let entries = backlog.entries();
        blocks(entries.len(), |range| {
            for e in &entries[range] {
                let node = tree.node(e.node);
                let slot = node.count.fetch_add(1, Ordering::Relaxed);
                let center = node.bounds().voxel_center(e.cell, g);
                write_sample(tree, e.node, slot, &Point { position: center, color: e.color });
            }
        });
    }
}

/// Owns an octree and the transient buffers needed to grow it.
#[derive(Debug)]
pub struct Updater {
    tree: Octree,
    config: LodConfig,
    spill: SpillBuffer,
    backlog: VoxelBacklog,
    stats: UpdateStats,
    events: Option<Vec<TreeEvent>>,
    root_announced: bool,
}

impl Updater {
    pub fn new(bounds: CubeBounds, config: LodConfig) -> Self {
        Self {
            tree: Octree::new(bounds, &config),
            spill: SpillBuffer::new(config.spill_capacity),
            backlog: VoxelBacklog::new(config.backlog_capacity),
            config,
            stats: UpdateStats::default(),
            events: None,
            root_announced: false,
        }
    }

    /// Records [`TreeEvent`]s for every structural change.
    pub fn with_events(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn tree(&self) -> &Octree {
        &self.tree
    }

    pub fn into_tree(self) -> Octree {
        self.tree
    }

    pub fn config(&self) -> &LodConfig {
        &self.config
    }

    pub fn stats(&self) -> &UpdateStats {
        &self.stats
    }

    pub fn spill(&self) -> &SpillBuffer {
        &self.spill
    }

    pub fn backlog(&self) -> &VoxelBacklog {
        &self.backlog
    }

    pub fn drain_events(&mut self) -> Vec<TreeEvent> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Inserts one batch: expand, sample, allocate, store.
    ///
    /// Points are clamped into the root cube; non-finite points are dropped
    /// and reported in [`BatchDelta::rejected`].
    pub fn insert_batch(&mut self, batch: Batch) -> Result<BatchDelta, UpdateError> {
        let offset = batch.source_offset;
        self.insert_inner(batch).map_err(|e| UpdateError::InBatch {
            offset,
            source: Box::new(e),
        })
    }

    fn insert_inner(&mut self, batch: Batch) -> Result<BatchDelta, UpdateError> {
        let started = Instant::now();
        debug_assert!(self.spill.is_empty() && self.backlog.is_empty());
        let bounds = *self.tree.bounds();
        let total = batch.points.len();
        let mut points = batch.points;
        points.retain(|p| p.is_finite());
        let rejected = (total - points.len()) as u64;
        if rejected > 0 {
            log::warn!("rejected {rejected} non-finite points in batch at offset {}", batch.source_offset);
        }
        for p in &mut points {
            p.position = bounds.clamp(p.position);
        }
        let mut delta = BatchDelta {
            rejected,
            ..Default::default()
        };
        if points.is_empty() {
            self.stats.rejected_points += rejected;
            return Ok(delta);
        }

        if let (Some(ev), false) = (self.events.as_mut(), self.root_announced) {
            ev.push(TreeEvent::NodeCreated {
                id: NodeId::ROOT,
                parent: None,
                octant: 0,
                level: 0,
            });
            self.root_announced = true;
        }

        let nodes_before = self.tree.len();
        let expanded = expand(&mut self.tree, &points, &mut self.spill, self.events.as_mut())?;
        let spill_len = self.spill.len();
        self.stats.spill_high_water = self.stats.spill_high_water.max(spill_len);

        let work = WorkSet {
            spill: self.spill.points(),
            batch: &points,
        };
        let leaf_of = sample_voxels(&self.tree, work, &mut self.backlog, self.config.deterministic)?;

        let mut voxel_nodes: Vec<NodeId> = self.backlog.entries().iter().map(|e| e.node).collect();
        voxel_nodes.sort_unstable();
        voxel_nodes.dedup();
        let mut touched = expanded.final_leaves.clone();
        touched.extend_from_slice(&voxel_nodes);

        let stored_before: Vec<u32> = touched.iter().map(|id| self.tree.node(*id).count()).collect();
        delta.new_chunks = allocate_chunks(&mut self.tree, &touched)?;

        let work = WorkSet {
            spill: self.spill.points(),
            batch: &points,
        };
        store_all(&self.tree, work, &leaf_of, &self.backlog, self.config.deterministic);

        if let Some(ev) = self.events.as_mut() {
            let mut by_node: Vec<(NodeId, Vec<(u32, [u8; 4])>)> = voxel_nodes.iter().map(|id| (*id, Vec::new())).collect();
            for e in self.backlog.entries() {
                let slot = by_node.binary_search_by_key(&e.node, |(id, _)| *id).unwrap();
                by_node[slot].1.push((e.cell, e.color));
            }
            for (id, voxels) in by_node {
                ev.push(TreeEvent::VoxelsAppended { id, voxels });
            }
            for (i, id) in expanded.final_leaves.iter().enumerate() {
                ev.push(TreeEvent::PointsAppended {
                    id: *id,
                    points: self.tree.samples_from(*id, stored_before[i] as usize),
                });
            }
        }

        for (i, id) in touched.iter().enumerate() {
            let node = self.tree.node_mut(*id);
            let pending = node.pending.swap(0, Ordering::Relaxed);
            debug_assert_eq!(node.count(), stored_before[i] + pending);
            node.is_final = false;
            node.write_window.clear();
            node.window_base = 0;
        }

        delta.points = points.len() as u64;
        delta.voxels = self.backlog.len() as u64;
        delta.splits = expanded.splits as u64;
        delta.nodes_created = (self.tree.len() - nodes_before) as u64;
        delta.expand_iterations = expanded.iterations;
        delta.spilled = spill_len as u64;
        self.spill.clear();
        self.backlog.clear();
        delta.duration = started.elapsed();

        let s = &mut self.stats;
        s.batches += 1;
        s.points_inserted += delta.points;
        s.rejected_points += rejected;
        s.voxels_created += delta.voxels;
        s.nodes_created += delta.nodes_created;
        s.splits += delta.splits;
        s.backlog_high_water = s.backlog_high_water.max(self.backlog.high_water_mark());
        Ok(delta)
    }

    /// Inserts queued batches until the clock runs out. At least one batch is
    /// processed when the queue is non-empty.
    pub fn run_frame_updates(&mut self, queue: &mut VecDeque<Batch>, clock: BudgetClock) -> Result<FrameReport, UpdateError> {
        let mut report = FrameReport::default();
        if queue.is_empty() {
            return Ok(report);
        }
        while let Some(batch) = queue.pop_front() {
            let delta = self.insert_batch(batch)?;
            report.batches += 1;
            report.points += delta.points;
            if clock.exhausted() {
                break;
            }
        }
        report.elapsed = clock.elapsed();
        self.stats.frames += 1;
        self.stats.total_update += report.elapsed;
        self.stats.max_frame = self.stats.max_frame.max(report.elapsed);
        Ok(report)
    }

    /// Inserts everything without a budget, one batch per frame.
    pub fn insert_all(&mut self, batches: impl IntoIterator<Item = Batch>) -> Result<(), UpdateError> {
        for batch in batches {
            let mut q = VecDeque::from([batch]);
            self.run_frame_updates(&mut q, BudgetClock::start(Duration::ZERO))?;
        }
        Ok(())
    }
}
