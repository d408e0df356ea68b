//! The command implementations behind the `lodstream` binary.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use glam::{DVec3, Vec3};
use serde::Serialize;
use thiserror::Error;

use crate::config::LodConfig;
use crate::io::source::Poll;
use crate::io::{self, BatchLoader, BatchSource, Format, IoError, SourceSpec};
use crate::octree::{CubeBounds, Point, TreeStats};
use crate::render::{self, Camera, CameraError, Image, PpmError};
use crate::service::{self, EventLog, Server, ServiceError, StreamOptions, StreamSummary};
use crate::store::PoolStats;
use crate::synth::{self, SynthKind};
use crate::update::{partition, BudgetClock, UpdateError, Updater};

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Image(#[from] PpmError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("cannot write report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Where points come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    File(PathBuf),
    Synthetic { kind: SynthKind, n: usize, seed: u64 },
}

impl Input {
    pub fn describe(&self) -> String {
        match self {
            Input::File(p) => p.display().to_string(),
            Input::Synthetic { kind, n, seed } => format!("synthetic {kind:?} n={n} seed={seed}").to_lowercase(),
        }
    }
}

/// All points of an input held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub points: Vec<Point>,
    pub bounds: CubeBounds,
    /// Size of the point data on disk; 16 bytes per point for synthetic data.
    pub bytes: u64,
}

impl Dataset {
    pub fn from_points(points: Vec<Point>) -> Self {
        let bounds = match io::extent(&points) {
            Some((lo, hi)) => CubeBounds::cubify(lo, hi),
            None => CubeBounds::unit(),
        };
        let bytes = points.len() as u64 * Point::BYTES as u64;
        Self { points, bounds, bytes }
    }
}

/// Opens a file, falling back to the unit cube when it holds no points.
pub fn open_spec(path: &Path) -> Result<SourceSpec, IoError> {
    match SourceSpec::open(path, None) {
        Err(IoError::EmptyFile) => SourceSpec::open(path, Some(CubeBounds::unit())),
        other => other,
    }
}

pub fn load(input: &Input) -> Result<Dataset, AppError> {
    match input {
        Input::Synthetic { kind, n, seed } => Ok(Dataset::from_points(synth::generate(*kind, *n, *seed))),
        Input::File(path) => {
            let spec = Arc::new(open_spec(path)?);
            let mut source = BatchSource::from_spec(spec.clone(), 1 << 22)?;
            let mut points = Vec::with_capacity(spec.records() as usize);
            while let Some(batch) = source.read_batch()? {
                points.extend(batch.points);
            }
            Ok(Dataset {
                points,
                bounds: *spec.bounds(),
                bytes: spec.data_bytes(),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub input: String,
    pub config: LodConfig,
    pub points_inserted: u64,
    pub rejected_points: u64,
    pub batches: u64,
    pub frames: u64,
    pub avg_update_ms: f64,
    pub max_update_ms: f64,
    pub total_update_s: f64,
    /// Loading plus inserting.
    pub total_wall_s: f64,
    pub input_bytes: u64,
    pub update_mps: f64,
    pub update_gbps: f64,
    pub total_mps: f64,
    pub total_gbps: f64,
    pub tree: TreeStats,
    pub chunk_bytes: u64,
    pub pool: PoolStats,
    pub backlog_high_water: usize,
    pub spill_high_water: usize,
    pub arena_high_water: usize,
    pub points_conserved: bool,
    pub invariants_ok: bool,
}

fn rate(count: f64, secs: f64) -> f64 {
    if secs > 0.0 { count / secs } else { 0.0 }
}

impl RunReport {
    pub fn new(input: &Input, updater: &Updater, input_bytes: u64, wall: Duration) -> Self {
        let stats = updater.stats();
        let tree = updater.tree();
        let tree_stats = tree.stats();
        let update_s = stats.total_update.as_secs_f64();
        let wall_s = wall.as_secs_f64();
        let pool = tree.pool().stats();
        Self {
            input: input.describe(),
            config: updater.config().clone(),
            points_inserted: stats.points_inserted,
            rejected_points: stats.rejected_points,
            batches: stats.batches,
            frames: stats.frames,
            avg_update_ms: stats.avg_frame_ms(),
            max_update_ms: stats.max_frame_ms(),
            total_update_s: update_s,
            total_wall_s: wall_s,
            input_bytes,
            update_mps: rate(stats.points_inserted as f64 / 1e6, update_s),
            update_gbps: rate(input_bytes as f64 / 1e9, update_s),
            total_mps: rate(stats.points_inserted as f64 / 1e6, wall_s),
            total_gbps: rate(input_bytes as f64 / 1e9, wall_s),
            tree: tree_stats,
            chunk_bytes: pool.allocated_total * tree.pool().chunk_bytes() as u64,
            pool,
            backlog_high_water: stats.backlog_high_water,
            spill_high_water: stats.spill_high_water,
            arena_high_water: tree.arena().high_water_mark(),
            points_conserved: tree_stats.points == stats.points_inserted,
            invariants_ok: tree.check_invariants().is_ok(),
        }
    }

    pub fn human(&self) -> String {
        format!(
            "input          {}\n\
             points         {} inserted, {} rejected\n\
             batches        {} in {} frames\n\
             update         avg {:.3} ms, max {:.3} ms, total {:.3} s\n\
             throughput     updates {:.1} MP/s ({:.3} GB/s), total {:.1} MP/s ({:.3} GB/s)\n\
             tree           {} nodes ({} inner, {} leaves), depth {}\n\
             samples        {} points, {} voxels in {} chunks ({} bytes)\n\
             high water     backlog {}, spill {}, arena {} bytes\n\
             checks         conservation {}, invariants {}",
            self.input,
            self.points_inserted,
            self.rejected_points,
            self.batches,
            self.frames,
            self.avg_update_ms,
            self.max_update_ms,
            self.total_update_s,
            self.update_mps,
            self.update_gbps,
            self.total_mps,
            self.total_gbps,
            self.tree.nodes,
            self.tree.inner_nodes,
            self.tree.leaf_nodes,
            self.tree.max_level,
            self.tree.points,
            self.tree.voxels,
            self.tree.chunks,
            self.chunk_bytes,
            self.backlog_high_water,
            self.spill_high_water,
            self.arena_high_water,
            if self.points_conserved { "ok" } else { "FAILED" },
            if self.invariants_ok { "ok" } else { "FAILED" },
        )
    }
}

/// Builds an octree from in-memory points, one budgeted frame at a time.
pub fn build_from_points(points: &[Point], bounds: CubeBounds, config: &LodConfig) -> Result<Updater, UpdateError> {
    let mut updater = Updater::new(bounds, config.clone());
    let mut queue = partition(points, config.batch_size);
    while !queue.is_empty() {
        updater.run_frame_updates(&mut queue, BudgetClock::start(config.budget))?;
    }
    Ok(updater)
}

/// Streams a file through background loaders into the frame loop.
pub fn build_from_file(path: &Path, config: &LodConfig, workers: usize) -> Result<(Updater, u64), AppError> {
    let spec = Arc::new(open_spec(path)?);
    let bytes = spec.data_bytes();
    let mut updater = Updater::new(*spec.bounds(), config.clone());
    let mut loader = BatchLoader::spawn(spec, config.batch_size, workers, 8);
    let mut queue = VecDeque::new();
    loop {
        if queue.is_empty() {
            match loader.recv() {
                Some(batch) => queue.push_back(batch?),
                None => break,
            }
        }
        while let Poll::Ready(batch) = loader.poll() {
            queue.push_back(batch?);
        }
        updater.run_frame_updates(&mut queue, BudgetClock::start(config.budget))?;
    }
    Ok((updater, bytes))
}

pub fn cmd_build(input: &Input, config: &LodConfig, workers: usize) -> Result<(RunReport, Updater), AppError> {
    let started = Instant::now();
    let (updater, bytes) = match input {
        Input::File(path) => build_from_file(path, config, workers)?,
        Input::Synthetic { .. } => {
            let data = load(input)?;
            let started = Instant::now();
            let updater = build_from_points(&data.points, data.bounds, config)?;
            let report = RunReport::new(input, &updater, data.bytes, started.elapsed());
            return Ok((report, updater));
        }
    };
    let report = RunReport::new(input, &updater, bytes, started.elapsed());
    Ok((report, updater))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Lod,
    Brute,
}

/// Camera settings; anything unset is derived from the data bounds.
#[derive(Debug, Clone, Default)]
pub struct CameraSpec {
    pub position: Option<Vec3>,
    pub target: Option<Vec3>,
    pub up: Option<Vec3>,
    pub fov_y: Option<f32>,
    pub near: Option<f32>,
    pub far: Option<f32>,
    pub width: u32,
    pub height: u32,
}

impl CameraSpec {
    pub fn resolve(&self, bounds: &CubeBounds) -> Result<Camera, CameraError> {
        let base = Camera::overview(bounds, self.width.max(1), self.height.max(1));
        Camera::new(
            self.position.unwrap_or(base.position),
            self.target.unwrap_or(bounds.center()),
            self.up.unwrap_or(base.up),
            self.fov_y.unwrap_or(base.fov_y),
            self.near.unwrap_or(base.near),
            self.far.unwrap_or(base.far),
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RenderReport {
    pub mode: RenderMode,
    pub width: u32,
    pub height: u32,
    pub visible_nodes: usize,
    pub points: u64,
    pub voxels: u64,
    pub duration_ms: f64,
    pub covered_pixels: usize,
    pub overlay_pixels: usize,
}

impl RenderReport {
    pub fn human(&self) -> String {
        format!(
            "{:?} render {}x{}: {} nodes, {} points, {} voxels, {:.3} ms, {} pixels covered, {} overlay pixels",
            self.mode,
            self.width,
            self.height,
            self.visible_nodes,
            self.points,
            self.voxels,
            self.duration_ms,
            self.covered_pixels,
            self.overlay_pixels
        )
    }
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub mode: RenderMode,
    pub camera: CameraSpec,
    pub threshold: f32,
    pub show_nodes: bool,
    pub background: [u8; 3],
}

pub const OVERLAY_COLOR: [u8; 3] = [255, 255, 0];

/// Renders one frame of a built tree, or of the raw points in brute mode.
pub fn render_frame(updater: &Updater, raw: &[Point], options: &RenderOptions) -> Result<(Image, RenderReport), AppError> {
    let tree = updater.tree();
    let camera = options.camera.resolve(tree.bounds())?;
    let visible = render::select_visible(tree, &camera, options.threshold);
    let (fb, mut report) = match options.mode {
        RenderMode::Lod => {
            let (fb, stats) = render::rasterize(tree, &visible, &camera);
            let report = RenderReport {
                mode: options.mode,
                width: camera.width,
                height: camera.height,
                visible_nodes: visible.len(),
                points: stats.points,
                voxels: stats.voxels,
                duration_ms: stats.duration.as_secs_f64() * 1e3,
                covered_pixels: 0,
                overlay_pixels: 0,
            };
            (fb, report)
        }
        RenderMode::Brute => {
            let started = Instant::now();
            let fb = render::brute_force_render(raw, &camera);
            let report = RenderReport {
                mode: options.mode,
                width: camera.width,
                height: camera.height,
                visible_nodes: 0,
                points: raw.len() as u64,
                voxels: 0,
                duration_ms: started.elapsed().as_secs_f64() * 1e3,
                covered_pixels: 0,
                overlay_pixels: 0,
            };
            (fb, report)
        }
    };
    report.covered_pixels = fb.covered();
    let mut image = fb.to_image(options.background);
    if options.show_nodes {
        report.overlay_pixels = render::draw_node_boxes(&mut image, tree, &visible.nodes, &camera, OVERLAY_COLOR);
    }
    Ok((image, report))
}

pub fn cmd_render(input: &Input, config: &LodConfig, options: &RenderOptions, out: &Path) -> Result<RenderReport, AppError> {
    let data = load(input)?;
    let updater = build_from_points(&data.points, data.bounds, config)?;
    let (image, report) = render_frame(&updater, &data.points, options)?;
    image.write_ppm(out)?;
    Ok(report)
}

/// Converts between SIM and LAS, chosen by the output extension.
pub fn cmd_convert(input: &Input, output: &Path) -> Result<usize, AppError> {
    let data = load(input)?;
    match Format::detect(output)? {
        Format::Sim => io::sim::sim_write(output, &data.points)?,
        Format::Las => io::las::write_las(output, &data.points, DVec3::splat(0.001), data.bounds.min.as_dvec3())?,
    }
    Ok(data.points.len())
}

pub fn cmd_sort_morton(input: &Input, output: &Path) -> Result<usize, AppError> {
    if Format::detect(output)? != Format::Sim {
        return Err(AppError::Invalid("Morton-sorted output must be a .sim file".into()));
    }
    match input {
        Input::File(path) => {
            io::morton::morton_sort(path, output, None)?;
            Ok(open_spec(output)?.records() as usize)
        }
        Input::Synthetic { .. } => {
            let mut data = load(input)?;
            io::morton::sort_points(&mut data.points, &data.bounds);
            io::sim::sim_write(output, &data.points)?;
            Ok(data.points.len())
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub port: u16,
    pub stream: StreamOptions,
    pub workers: usize,
    /// Keep accepting clients after the stream ends.
    pub linger: bool,
}

/// Serves a file over WebSocket. Returns once the stream has ended and all
/// connected clients are drained, unless `linger` is set.
pub fn cmd_serve(path: &Path, options: &ServeOptions) -> Result<StreamSummary, AppError> {
    let spec = Arc::new(open_spec(path)?);
    let log = Arc::new(EventLog::new());
    let server = Server::bind(("0.0.0.0", options.port), log.clone())?;
    log::info!("serving {} at {}", path.display(), server.url());
    println!("listening on ws://127.0.0.1:{}", server.local_addr().port());
    let loader = BatchLoader::spawn(spec.clone(), options.stream.config.batch_size, options.workers, 8);
    let (summary, _) = service::stream_to_log(loader, *spec.bounds(), &options.stream, &log)?;
    if options.linger {
        loop {
            std::thread::park();
        }
    }
    server.wait_for_clients(Duration::from_secs(3600));
    server.shutdown();
    Ok(summary)
}

pub const BENCH_CHUNK_SIZES: [usize; 5] = [500, 1000, 2000, 5000, 10000];

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub chunk_capacity: usize,
    pub construct_ms: f64,
    pub chunk_bytes: u64,
    pub render_ms: f64,
    pub nodes: usize,
    pub rendered_samples: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub input: String,
    pub points: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn human(&self) -> String {
        let mut s = format!("{} ({} points)\n{:>8} {:>14} {:>16} {:>10}\n", self.input, self.points, "chunk", "construct ms", "chunk bytes", "render ms");
        for r in &self.rows {
            s += &format!("{:>8} {:>14.1} {:>16} {:>10.3}\n", r.chunk_capacity, r.construct_ms, r.chunk_bytes, r.render_ms);
        }
        s
    }
}

/// One rasterization of the overview frame: milliseconds and samples drawn.
pub fn time_render(updater: &Updater, camera: &Camera) -> (f64, u64) {
    let tree = updater.tree();
    let visible = render::select_visible(tree, camera, render::DEFAULT_THRESHOLD);
    let (_, stats) = render::rasterize(tree, &visible, camera);
    (stats.duration.as_secs_f64() * 1e3, stats.points + stats.voxels)
}

/// Builds the same data once per chunk size and times construction and an
/// overview render. Render timings alternate between the trees round by
/// round so that drift in machine load hits every size alike; the median
/// round is reported.
pub fn bench_points(data: &Dataset, config: &LodConfig, sizes: &[usize], render_runs: usize) -> Result<Vec<BenchRow>, AppError> {
    let camera = Camera::overview(&data.bounds, 1024, 768);
    let mut built = Vec::with_capacity(sizes.len());
    for &c in sizes {
        let cfg = LodConfig {
            chunk_capacity: c,
            ..config.clone()
        };
        let started = Instant::now();
        let updater = build_from_points(&data.points, data.bounds, &cfg)?;
        built.push((c, started.elapsed().as_secs_f64() * 1e3, updater));
    }
    let mut timings = vec![Vec::new(); built.len()];
    let mut samples = vec![0u64; built.len()];
    for _ in 0..render_runs.max(1) {
        for (i, (_, _, updater)) in built.iter().enumerate() {
            let (ms, n) = time_render(updater, &camera);
            timings[i].push(ms);
            samples[i] = n;
        }
    }
    let best: Vec<(f64, u64)> = timings
        .into_iter()
        .zip(samples)
        .map(|(mut t, n)| {
            t.sort_by(f64::total_cmp);
            (t[t.len() / 2], n)
        })
        .collect();
    Ok(built
        .into_iter()
        .zip(best)
        .map(|((c, construct_ms, updater), (render_ms, rendered_samples))| {
            let pool = updater.tree().pool();
            BenchRow {
                chunk_capacity: c,
                construct_ms,
                chunk_bytes: pool.allocated_total() * pool.chunk_bytes() as u64,
                render_ms,
                nodes: updater.tree().len(),
                rendered_samples,
            }
        })
        .collect())
}

pub fn cmd_bench(input: &Input, config: &LodConfig) -> Result<BenchReport, AppError> {
    let data = load(input)?;
    let rows = bench_points(&data, config, &BENCH_CHUNK_SIZES, 15)?;
    Ok(BenchReport {
        input: input.describe(),
        points: data.points.len(),
        rows,
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(IoError::from)?;
    Ok(())
}
