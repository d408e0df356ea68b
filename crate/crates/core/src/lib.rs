//! Incremental level-of-detail octrees for point clouds.
//!
//! Points arrive in batches and are inserted into an octree whose inner nodes
//! hold voxel subsamples and whose leaves hold the original points. Every node
//! stores its samples in linked fixed-size chunks drawn from a shared arena,
//! so the structure can be rendered or streamed between any two batches.
//!
//! The main entry points are [`update::Updater`] for construction,
//! [`render`] for view-dependent selection and rasterization, [`io`] for
//! point file formats and [`service`] for streaming the construction to
//! remote viewers.

pub mod app;
pub mod config;
pub mod io;
pub mod octree;
pub mod render;
pub mod service;
pub mod store;
pub mod synth;
pub mod update;

pub use config::LodConfig;
pub use octree::{CubeBounds, Node, NodeId, Octree, Point};
pub use update::{Batch, Updater};
