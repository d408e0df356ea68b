use std::time::Duration;

use serde::Serialize;

/// Tunables shared by construction, streaming and rendering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LodConfig {
    /// Leaves split once they would hold more than this many points.
    pub leaf_threshold: u32,
    /// Points or voxels per chunk.
    pub chunk_capacity: usize,
    /// Sampling cells per axis of an inner node.
    pub grid_resolution: u32,
    pub max_depth: u32,
    pub arena_bytes: usize,
    pub batch_size: usize,
    pub budget: Duration,
    pub backlog_capacity: usize,
    pub spill_capacity: usize,
    /// Lowest ingestion index wins contested cells and slots.
    pub deterministic: bool,
}

impl Default for LodConfig {
    fn default() -> Self {
        Self {
            leaf_threshold: 50_000,
            chunk_capacity: 1000,
            grid_resolution: 128,
            max_depth: 20,
            arena_bytes: 4 << 30,
            batch_size: 1_000_000,
            budget: Duration::from_millis(10),
            backlog_capacity: 10_000_000,
            spill_capacity: 16_000_000,
            deterministic: true,
        }
    }
}
