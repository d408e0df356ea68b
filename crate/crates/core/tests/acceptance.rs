//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use glam::{DVec3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lodstream::app::{bench_points, build_from_points, Dataset, BENCH_CHUNK_SIZES};
use lodstream::io::{morton, sim, BatchLoader, BatchSource, SourceSpec};
use lodstream::octree::{CubeBounds, NodeId, Octree, Point};
use lodstream::render::{brute_force_render, rasterize, select_visible, unpack, Camera, DEFAULT_THRESHOLD};
use lodstream::service::{mirror_from, stream_to_log, EventLog, Hello, Server, StatsTick, StreamMessage, StreamOptions};
use lodstream::store::{Arena, ChunkPool};
use lodstream::update::{partition, Batch, BudgetClock};
use lodstream::{synth, LodConfig, Updater};

use common::{node_path, reference_signature, replay_voxels, routed_to, stored_voxels, tree_signature};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn small_config(t: u32, max_depth: u32) -> LodConfig {
    LodConfig {
        leaf_threshold: t,
        max_depth,
        chunk_capacity: 64,
        arena_bytes: 2 << 30,
        ..LodConfig::default()
    }
}

struct Case {
    seed: u64,
    surface: bool,
    points: Vec<Point>,
}

/// Fixed randomized datasets with log-uniform sizes in [1, 200 000].
fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51ED);
    (0..50u64)
        .map(|i| {
            let n = match i {
                0 => 1,
                1 => 200_000,
                _ => (rng.random_range(0.0..(200_000f64).ln()).exp().round() as usize).clamp(1, 200_000),
            };
            let seed = 1000 + i;
            let mut r = common::rng(seed);
            let surface = i % 2 == 1;
            let points = if surface { common::surface_like(n, &mut r) } else { common::uniform(n, &mut r) };
            Case { seed, surface, points }
        })
        .collect()
}

fn batch_sizes(n: usize) -> [usize; 4] {
    [1, 7, 1000, n.max(1)]
}

fn build(points: &[Point], cfg: &LodConfig, batch: usize) -> Updater {
    let mut u = Updater::new(CubeBounds::unit(), cfg.clone());
    u.insert_all(partition(points, batch)).expect("insert");
    u
}

fn criterion_1(cases: &[Case]) -> Outcome {
    let cfg = small_config(100, 12);
    let started = Instant::now();
    let mut builds = 0;
    for c in cases {
        let expected = reference_signature(&c.points, CubeBounds::unit(), 100, 12);
        for b in batch_sizes(c.points.len()) {
            let u = build(&c.points, &cfg, b);
            let got = tree_signature(u.tree());
            ensure!(
                got == expected,
                "seed {} (n={}, surface={}) batch {b}: {} nodes vs reference {}",
                c.seed,
                c.points.len(),
                c.surface,
                got.len(),
                expected.len()
            );
            builds += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("{} datasets, {builds} builds identical to reference in {secs:.1} s", cases.len()))
}

fn criterion_2(cases: &[Case]) -> Outcome {
    let cfg = small_config(100, 12);
    let mut checked = 0u64;
    for c in cases.iter().step_by(3) {
        for b in [7, 1000] {
            let u = build(&c.points, &cfg, b);
            let tree = u.tree();
            let mut total = 0u64;
            let mut stored: Vec<[u32; 4]> = Vec::new();
            for n in tree.nodes().iter().filter(|n| n.is_leaf()) {
                total += n.count() as u64;
                for p in tree.samples(n.id()) {
                    ensure!(routed_to(tree, n.id(), p.position), "seed {}: point {:?} in wrong leaf", c.seed, p.position);
                    stored.push(p.bit_key());
                }
            }
            ensure!(total == c.points.len() as u64, "seed {}: leaf counts sum to {total}, n = {}", c.seed, c.points.len());
            let mut input: Vec<_> = c.points.iter().map(Point::bit_key).collect();
            input.sort_unstable();
            stored.sort_unstable();
            ensure!(input == stored, "seed {}: stored points differ from input", c.seed);
            checked += total;
        }
    }
    Ok(format!("{checked} points conserved and routed"))
}

fn check_voxels(tree: &Octree, points: &[Point]) -> Result<u64, String> {
    let oracle = replay_voxels(tree, points);
    let stored = stored_voxels(tree);
    let mut voxels = 0;
    for n in tree.nodes().iter().filter(|n| !n.is_leaf()) {
        let path = node_path(tree, n.id());
        let grid = n.grid().ok_or("inner node without grid")?;
        let list = &stored[&path];
        let popcount = grid.popcount(tree.arena());
        if popcount != n.count() as u64 || list.len() as u64 != popcount {
            return Err(format!("node {path:?}: popcount {popcount}, count {}, stored {}", n.count(), list.len()));
        }
        let cells: BTreeMap<u32, [u8; 4]> = list.iter().copied().collect();
        if cells.len() != list.len() {
            return Err(format!("node {path:?}: duplicate voxel cells"));
        }
        if cells.keys().any(|&c| !grid.is_set(tree.arena(), c)) {
            return Err(format!("node {path:?}: voxel in unset cell"));
        }
        if cells != oracle[&path] {
            return Err(format!("node {path:?}: voxels differ from sequential replay"));
        }
        voxels += list.len() as u64;
    }
    Ok(voxels)
}

fn criterion_3(cases: &[Case]) -> Outcome {
    let cfg = small_config(100, 12);
    let mut voxels = 0;
    for c in cases.iter().step_by(2) {
        for b in batch_sizes(c.points.len()).into_iter().skip(1) {
            let u = build(&c.points, &cfg, b);
            voxels += check_voxels(u.tree(), &c.points).map_err(|e| format!("seed {} batch {b}: {e}", c.seed))?;
        }
    }
    // Large batches take the parallel paths when threads are available.
    let mut r = common::rng(77);
    let big = common::surface_like(150_000, &mut r);
    let u = build(&big, &small_config(100, 12), big.len());
    voxels += check_voxels(u.tree(), &big)?;
    Ok(format!("{voxels} voxels match first-come replay"))
}

fn chunk_ledger(tree: &Octree) -> Result<(), String> {
    tree.check_invariants()?;
    let cap = tree.chunk_capacity() as u64;
    let mut live = 0u64;
    for n in tree.nodes() {
        let chunks = tree.chunk_list(n.id()).len() as u64;
        if chunks != (n.count() as u64).div_ceil(cap) {
            return Err(format!("node {}: {chunks} chunks for {} samples", n.id().0, n.count()));
        }
        live += chunks;
    }
    let pool = tree.pool();
    if pool.allocated_total() != live + pool.free_len() as u64 {
        return Err(format!("allocated {} != live {live} + free {}", pool.allocated_total(), pool.free_len()));
    }
    Ok(())
}

fn criterion_4(cases: &[Case]) -> Outcome {
    let mut updates = 0;
    for c in cases.iter().filter(|c| c.points.len() <= 30_000).take(12) {
        for (b, cap) in [(7, 3), (97, 16), (1000, 64)] {
            if c.points.len() / b > 1500 {
                continue;
            }
            let cfg = LodConfig {
                chunk_capacity: cap,
                ..small_config(100, 12)
            };
            let mut u = Updater::new(CubeBounds::unit(), cfg);
            for batch in partition(&c.points, b) {
                u.insert_batch(batch).map_err(|e| e.to_string())?;
                chunk_ledger(u.tree()).map_err(|e| format!("seed {} batch {b}: {e}", c.seed))?;
                updates += 1;
            }
        }
    }
    let arena = Arena::new(1 << 20);
    let pool = ChunkPool::new(8);
    let first = pool.acquire(&arena).map_err(|e| e.to_string())?;
    let offset = arena.offset();
    pool.release(&arena, Some(first));
    let again = pool.acquire(&arena).map_err(|e| e.to_string())?;
    ensure!(again == first, "released chunk not reused");
    ensure!(arena.offset() == offset && pool.allocated_total() == 1, "reacquire allocated from the arena");
    Ok(format!("ledger exact after {updates} updates; reacquire reuses the chunk"))
}

fn criterion_5() -> Outcome {
    let cfg = LodConfig {
        leaf_threshold: 5,
        chunk_capacity: 2,
        grid_resolution: 4,
        arena_bytes: 1 << 20,
        ..LodConfig::default()
    };
    let low = [
        Vec3::new(0.1, 0.1, 0.1),
        Vec3::new(0.4, 0.1, 0.1),
        Vec3::new(0.1, 0.4, 0.1),
        Vec3::new(0.1, 0.1, 0.4),
        Vec3::new(0.4, 0.4, 0.1),
        Vec3::new(0.4, 0.4, 0.4),
    ];
    let high = [Vec3::new(0.6, 0.6, 0.6), Vec3::new(0.9, 0.6, 0.6), Vec3::new(0.6, 0.9, 0.6), Vec3::new(0.6, 0.6, 0.9)];
    let pts: Vec<Point> = low.iter().chain(&high).enumerate().map(|(i, p)| Point::new(p.x, p.y, p.z, [i as u8, 0, 0, 255])).collect();
    let mut u = Updater::new(CubeBounds::unit(), cfg);
    let d1 = u.insert_batch(Batch::new(pts.clone(), 0)).map_err(|e| e.to_string())?;
    let t = u.tree();
    let root = t.root();
    ensure!(!root.is_leaf(), "root did not split");
    let kids = root.children().unwrap();
    ensure!(!t.node(kids[0]).is_leaf(), "octant 0 with 6 points did not split");
    ensure!(t.node(kids[7]).is_leaf() && t.node(kids[7]).count() == 4, "octant 7 should be a leaf with 4 points");
    ensure!(t.len() == 17 && d1.splits == 2, "expected 17 nodes and 2 splits, got {} and {}", t.len(), d1.splits);
    ensure!(d1.expand_iterations >= 3, "expected one iteration per level, got {}", d1.expand_iterations);
    let leaves_ok = t.nodes().iter().filter(|n| n.is_leaf()).all(|n| n.count() <= 5);
    ensure!(leaves_ok, "a leaf holds more than 5 points after the first batch");
    ensure!(t.chunk_list(kids[7]).len() == 2, "octant 7 should hold 2 chunks");

    let released_before = t.pool().released_total();
    let extra = vec![Point::new(0.95, 0.95, 0.95, [20, 0, 0, 255]), Point::new(0.7, 0.95, 0.8, [21, 0, 0, 255])];
    let d2 = u.insert_batch(Batch::new(extra, 10)).map_err(|e| e.to_string())?;
    let t = u.tree();
    ensure!(d2.splits == 1 && d2.spilled == 4, "expected 1 split spilling 4 points, got {} and {}", d2.splits, d2.spilled);
    ensure!(t.pool().released_total() - released_before == 2, "expected 2 chunks released");
    ensure!(!t.node(kids[7]).is_leaf(), "octant 7 did not split");
    let leaves: Vec<u32> = t.nodes().iter().filter(|n| n.is_leaf()).map(|n| n.count()).collect();
    ensure!(leaves.iter().all(|&c| c <= 5), "leaf over threshold: {leaves:?}");
    ensure!(leaves.iter().sum::<u32>() == 12, "points lost");
    ensure!(t.len() == 25, "expected 25 nodes, got {}", t.len());
    chunk_ledger(t)?;
    Ok("root split, octant 0 split, octant 7 spilled 4 points and released 2 chunks".into())
}

fn random_camera(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Camera {
    loop {
        let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if dir.length() < 0.2 {
            continue;
        }
        let target = Vec3::new(rng.random(), rng.random(), rng.random());
        let position = target + dir.normalize() * rng.random_range(0.05..3.0);
        let up = if dir.normalize().z.abs() > 0.95 { Vec3::Y } else { Vec3::Z };
        if let Ok(cam) = Camera::new(position, target, up, rng.random_range(30.0..90.0), 0.01, 20.0, w, h) {
            return cam;
        }
    }
}

/// Sequential per-pixel minimum over (depth, color).
fn min_oracle(points: &[Point], cam: &Camera) -> Vec<Option<(f32, [u8; 4])>> {
    let mut out: Vec<Option<(f32, [u8; 4])>> = vec![None; (cam.width * cam.height) as usize];
    for p in points {
        if let Some((x, y, depth)) = cam.project(p.position) {
            let slot = &mut out[(y * cam.width + x) as usize];
            let key = (depth, u32::from_le_bytes(p.color));
            let better = match slot {
                None => true,
                Some((d, c)) => key.0 < *d || (key.0 == *d && key.1 < u32::from_le_bytes(*c)),
            };
            if better {
                *slot = Some((depth, p.color));
            }
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut covered = 0;
    for scene in 0..24 {
        let n = rng.random_range(100..=10_000);
        let mut r = common::rng(600 + scene);
        let points = if scene % 2 == 0 { common::uniform(n, &mut r) } else { common::surface_like(n, &mut r) };
        let cam = random_camera(&mut rng, 256, 256);
        let fb = brute_force_render(&points, &cam);
        let oracle = min_oracle(&points, &cam);
        for y in 0..256 {
            for x in 0..256 {
                let got = unpack(fb.cell(x, y));
                ensure!(got == oracle[(y * 256 + x) as usize], "scene {scene}: brute pixel ({x},{y}) differs from oracle");
            }
        }
        covered += fb.covered();

        let u = build(&points, &small_config(64, 12), 997);
        let tree = u.tree();
        let visible = select_visible(tree, &cam, 0.0);
        ensure!(visible.nodes.iter().all(|&id| tree.node(id).is_leaf()), "scene {scene}: inner node survives full refinement");
        let (lod, stats) = rasterize(tree, &visible, &cam);
        ensure!(lod.cells() == fb.cells(), "scene {scene}: refined LOD frame differs from brute force");
        for &(id, visited) in &stats.per_node {
            ensure!(visited == tree.node(id).count() as u64, "scene {scene}: node {} visited {visited} samples", id.0);
        }
    }
    Ok(format!("24 scenes exact; {covered} covered pixels"))
}

fn is_ancestor(tree: &Octree, a: NodeId, mut b: NodeId) -> bool {
    while let Some(p) = tree.node(b).parent() {
        if p == a {
            return true;
        }
        b = p;
    }
    false
}

fn criterion_7() -> Outcome {
    let mut r = common::rng(7);
    let points = common::surface_like(60_000, &mut r);
    let u = build(&points, &small_config(200, 12), 5000);
    let tree = u.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut selected = 0;
    for i in 0..60 {
        let cam = random_camera(&mut rng, 512, 384);
        let vis = select_visible(tree, &cam, DEFAULT_THRESHOLD);
        let set: HashSet<NodeId> = vis.nodes.iter().copied().collect();
        ensure!(set.len() == vis.nodes.len(), "camera {i}: duplicate nodes");
        for &a in &vis.nodes {
            for &b in &vis.nodes {
                ensure!(a == b || !is_ancestor(tree, a, b), "camera {i}: {} is an ancestor of {}", a.0, b.0);
            }
            if let Some(p) = tree.node(a).parent() {
                ensure!(cam.screen_size(tree.node(p).bounds()).exceeds(DEFAULT_THRESHOLD), "camera {i}: parent of {} not above 128 px", a.0);
            }
            if !tree.node(a).is_leaf() {
                ensure!(!cam.screen_size(tree.node(a).bounds()).exceeds(DEFAULT_THRESHOLD), "camera {i}: selected inner node {} above 128 px", a.0);
            }
        }
        for leaf in tree.nodes().iter().filter(|n| n.is_leaf() && cam.intersects(n.bounds())) {
            let mut id = Some(leaf.id());
            let mut hit = false;
            while let Some(x) = id {
                if set.contains(&x) {
                    hit = true;
                    break;
                }
                id = tree.node(x).parent();
            }
            ensure!(hit, "camera {i}: intersecting leaf {} not covered", leaf.id().0);
        }
        selected += vis.len();
    }
    Ok(format!("60 cameras, {selected} selected nodes, {} tree nodes", tree.len()))
}

fn criterion_8() -> Outcome {
    let cfg = LodConfig {
        budget: Duration::from_millis(1),
        ..small_config(500, 12)
    };
    let mut r = common::rng(8);
    let points = common::uniform(100_000, &mut r);
    let batches = partition(&points, 2000);
    ensure!(batches.len() == 50, "expected 50 batches");

    let mut calib = Updater::new(CubeBounds::unit(), cfg.clone());
    let mut max_batch = Duration::ZERO;
    for b in batches.clone() {
        let t = Instant::now();
        calib.insert_batch(b).map_err(|e| e.to_string())?;
        max_batch = max_batch.max(t.elapsed());
    }

    let mut u = Updater::new(CubeBounds::unit(), cfg.clone());
    let mut queue: VecDeque<Batch> = batches;
    let limit = (cfg.budget + max_batch) * 3;
    let mut frames = 0;
    let mut worst = Duration::ZERO;
    while !queue.is_empty() {
        let before = queue.len();
        let report = u.run_frame_updates(&mut queue, BudgetClock::start(cfg.budget)).map_err(|e| e.to_string())?;
        ensure!(report.batches >= 1 && before - queue.len() == report.batches, "frame {frames} processed no batch");
        worst = worst.max(report.elapsed);
        ensure!(report.elapsed <= limit, "frame {frames} took {:?}, limit {limit:?}", report.elapsed);
        frames += 1;
    }
    ensure!(u.stats().points_inserted == points.len() as u64, "not all points inserted");
    ensure!(frames > 1, "budget never stopped a frame");
    Ok(format!(
        "{frames} frames, worst {:.2} ms, limit {:.2} ms (max batch {:.2} ms)",
        worst.as_secs_f64() * 1e3,
        limit.as_secs_f64() * 1e3,
        max_batch.as_secs_f64() * 1e3
    ))
}

fn criterion_9() -> Outcome {
    let data = Dataset::from_points(synth::surface(1_000_000, 9));
    let rows = bench_points(&data, &LodConfig::default(), &BENCH_CHUNK_SIZES, 25).map_err(|e| e.to_string())?;
    let bytes: Vec<u64> = rows.iter().map(|r| r.chunk_bytes).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.render_ms).collect();
    let summary = rows
        .iter()
        .map(|r| format!("C={} {} B {:.2} ms", r.chunk_capacity, r.chunk_bytes, r.render_ms))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(bytes.windows(2).all(|w| w[0] <= w[1]), "chunk bytes decrease: {summary}");
    let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = times.iter().cloned().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    ensure!(spread < 0.25, "render spread {:.1}%: {summary}", spread * 100.0);
    Ok(format!("spread {:.1}%; {summary}", spread * 100.0))
}

fn criterion_10() -> Outcome {
    let mut shuffled = synth::uniform(1_000_000, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.random_range(0..=i));
    }
    let bounds = CubeBounds::unit();
    let mut sorted = shuffled.clone();
    morton::sort_points(&mut sorted, &bounds);
    let cfg = LodConfig::default();
    let (mut best_sorted, mut best_shuffled) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        for (data, best) in [(&sorted, &mut best_sorted), (&shuffled, &mut best_shuffled)] {
            let u = build_from_points(data, bounds, &cfg).map_err(|e| e.to_string())?;
            *best = best.max(u.stats().throughput_mps());
        }
    }
    let ratio = best_sorted / best_shuffled;
    ensure!(ratio >= 1.0, "sorted {best_sorted:.1} MP/s vs shuffled {best_shuffled:.1} MP/s, ratio {ratio:.3}");
    Ok(format!("sorted {best_sorted:.1} MP/s, shuffled {best_shuffled:.1} MP/s, ratio {ratio:.2}"))
}

fn las_bytes(records: &[([i32; 3], [u16; 3])], scale: [f64; 3], offset: [f64; 3]) -> Vec<u8> {
    let mut h = vec![0u8; 227];
    h[0..4].copy_from_slice(b"LASF");
    h[24] = 1;
    h[25] = 2;
    h[94..96].copy_from_slice(&227u16.to_le_bytes());
    h[96..100].copy_from_slice(&227u32.to_le_bytes());
    h[104] = 2;
    h[105..107].copy_from_slice(&26u16.to_le_bytes());
    h[107..111].copy_from_slice(&(records.len() as u32).to_le_bytes());
    for i in 0..3 {
        h[131 + 8 * i..139 + 8 * i].copy_from_slice(&scale[i].to_le_bytes());
        h[155 + 8 * i..163 + 8 * i].copy_from_slice(&offset[i].to_le_bytes());
        h[179 + 16 * i..187 + 16 * i].copy_from_slice(&(offset[i] + 100.0).to_le_bytes());
        h[187 + 16 * i..195 + 16 * i].copy_from_slice(&(offset[i] - 100.0).to_le_bytes());
    }
    for (xyz, rgb) in records {
        let mut r = vec![0u8; 26];
        for i in 0..3 {
            r[4 * i..4 * i + 4].copy_from_slice(&xyz[i].to_le_bytes());
            r[20 + 2 * i..22 + 2 * i].copy_from_slice(&rgb[i].to_le_bytes());
        }
        h.extend(r);
    }
    h
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = common::rng(11);
    let mut points = common::uniform(10_000, &mut r);
    points[0].position = Vec3::new(-0.0, f32::MIN_POSITIVE, 1.0e30);
    points[1].position = Vec3::new(f32::from_bits(1), -123.456, 7.0e-20);
    let path = dir.path().join("pts.sim");
    sim::sim_write(&path, &points).map_err(|e| e.to_string())?;
    let back = sim::sim_read(&path).map_err(|e| e.to_string())?;
    let keys = |v: &[Point]| v.iter().map(Point::bit_key).collect::<Vec<_>>();
    ensure!(keys(&back) == keys(&points), "SIM round trip not bit-exact");
    ensure!(std::fs::read(&path).map_err(|e| e.to_string())?.len() == 16 * points.len(), "SIM size");

    let scale = [0.25, 0.5, 0.01];
    let offset = [1000.0, -20.0, 3.5];
    let recs = [([4, 6, 250], [0xFF00, 0x8000, 0x0100]), ([-8, 0, -350], [0xFFFF, 0, 0x7F80]), ([0, 1, 1], [0x1234, 0xABCD, 0x00FF])];
    let las_path = dir.path().join("tiny.las");
    std::fs::write(&las_path, las_bytes(&recs, scale, offset)).map_err(|e| e.to_string())?;
    let mut src = BatchSource::open(&las_path, None, 100).map_err(|e| e.to_string())?;
    let decoded = src.read_batch().map_err(|e| e.to_string())?.ok_or("no batch")?.points;
    ensure!(decoded.len() == 3, "decoded {} records", decoded.len());
    let expect_pos = [Vec3::new(1001.0, -17.0, 6.0), Vec3::new(998.0, -20.0, 0.0), Vec3::new(1000.0, -19.5, 3.51)];
    let expect_rgb = [[255, 128, 1, 255], [255, 0, 127, 255], [18, 171, 0, 255]];
    for (i, p) in decoded.iter().enumerate() {
        let exact = (DVec3::new(recs[i].0[0] as f64, recs[i].0[1] as f64, recs[i].0[2] as f64) * DVec3::from(scale) + DVec3::from(offset)).as_vec3();
        ensure!(p.position == exact && p.position == expect_pos[i], "LAS record {i}: {:?}", p.position);
        ensure!(p.color == expect_rgb[i], "LAS record {i}: color {:?}", p.color);
    }

    let pts = vec![Point::new(0.25, -1.5, 3.0, [1, 2, 3, 4]), Point::new(f32::MAX, 0.0, -0.0, [255, 0, 255, 0])];
    let messages = vec![
        StreamMessage::Hello(Hello {
            version: 1,
            bounds: CubeBounds::new(Vec3::new(-1.0, 2.0, 3.5), 8.25),
            grid_resolution: 128,
            leaf_threshold: 50_000,
            chunk_capacity: 1000,
        }),
        StreamMessage::NodeCreated { id: 9, parent: Some(1), octant: 7, level: 2 },
        StreamMessage::NodeCreated { id: 0, parent: None, octant: 0, level: 0 },
        StreamMessage::NodeSplit { id: 1 },
        StreamMessage::PointsAppended { id: 3, points: pts },
        StreamMessage::VoxelsAppended { id: 4, voxels: vec![(0, [1, 2, 3, 4]), (128 * 128 * 128 - 1, [9, 9, 9, 9])] },
        StreamMessage::StatsTick(StatsTick { frame: 3, points: 1 << 40, voxels: 17, nodes: 9, update_ms: 1.25 }),
        StreamMessage::EndOfStream,
        StreamMessage::Error { message: "disk on fire".into() },
    ];
    let mut tags = BTreeSet::new();
    for m in &messages {
        let bytes = m.encode();
        let back = StreamMessage::decode(&bytes).map_err(|e| format!("{e}"))?;
        ensure!(back.encode() == bytes, "tag {} not bit-exact", m.tag());
        ensure!(bytes.len() == m.encoded_len(), "tag {} length", m.tag());
        tags.insert(m.tag());
    }
    ensure!(tags == (0..=7).collect(), "tags covered: {tags:?}");
    Ok("SIM 10k bit-exact; LAS 3 records exact; 8 message tags bit-exact".into())
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("scene.sim");
    sim::sim_write(&path, &synth::surface(40_000, 12)).map_err(|e| e.to_string())?;
    let spec = Arc::new(SourceSpec::open(&path, None).map_err(|e| e.to_string())?);
    let log = Arc::new(EventLog::new());
    let server = Server::bind("127.0.0.1:0", log.clone()).map_err(|e| e.to_string())?;
    let url = server.url();
    let live = std::thread::spawn(move || mirror_from(&url, |_| {}));
    let options = StreamOptions {
        config: LodConfig {
            leaf_threshold: 500,
            batch_size: 3000,
            budget: Duration::from_millis(2),
            arena_bytes: 1 << 30,
            ..LodConfig::default()
        },
        throttle_pps: None,
    };
    let loader = BatchLoader::spawn(spec.clone(), options.config.batch_size, 2, 4);
    let (summary, updater) = stream_to_log(loader, *spec.bounds(), &options, &log).map_err(|e| e.to_string())?;
    let tree = updater.tree();
    let live = live.join().map_err(|_| "client panicked")?.map_err(|e| e.to_string())?;
    let late = mirror_from(&server.url(), |_| {}).map_err(|e| e.to_string())?;
    for (who, m) in [("live", &live), ("late", &late)] {
        ensure!(m.is_ended(), "{who} mirror missed the end of stream");
        ensure!(m.nodes().len() == tree.len(), "{who}: {} nodes vs {}", m.nodes().len(), tree.len());
        let g = tree.grid_resolution();
        for n in tree.nodes() {
            let mn = &m.nodes()[n.id().0 as usize];
            ensure!(mn.id == n.id().0 && mn.parent == n.parent().map(|p| p.0) && mn.level as u32 == n.level(), "{who}: node {} header", n.id().0);
            ensure!(mn.inner == !n.is_leaf(), "{who}: node {} kind", n.id().0);
            ensure!(mn.sample_count() == n.count() as usize, "{who}: node {} count", n.id().0);
            if n.is_leaf() {
                let mut a: Vec<_> = mn.points.iter().map(Point::bit_key).collect();
                let mut b: Vec<_> = tree.samples(n.id()).iter().map(Point::bit_key).collect();
                a.sort_unstable();
                b.sort_unstable();
                ensure!(a == b, "{who}: leaf {} points", n.id().0);
            } else {
                let a: BTreeSet<u32> = mn.voxels.iter().map(|v| v.0).collect();
                let b: BTreeSet<u32> = n.grid().unwrap().occupied_cells(tree.arena()).into_iter().collect();
                let c: BTreeSet<u32> = tree.samples(n.id()).iter().map(|s| n.bounds().cell_of(s.position, g)).collect();
                ensure!(a == b && b == c, "{who}: node {} voxel cells", n.id().0);
            }
        }
    }
    ensure!(server.wait_for_clients(Duration::from_secs(10)), "clients did not disconnect");
    server.shutdown();
    Ok(format!("{} messages, {} nodes, {} points mirrored live and late", summary.messages, tree.len(), summary.points))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let cases = cases();
    let checks: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "structural oracle equivalence", Box::new(|| criterion_1(&cases))),
        (2, "conservation and placement", Box::new(|| criterion_2(&cases))),
        (3, "voxel invariants", Box::new(|| criterion_3(&cases))),
        (4, "chunk accounting", Box::new(|| criterion_4(&cases))),
        (5, "ten point trace and spill", Box::new(criterion_5)),
        (6, "renderer oracle", Box::new(criterion_6)),
        (7, "selection cut", Box::new(criterion_7)),
        (8, "budget behavior", Box::new(criterion_8)),
        (9, "chunk size sweep", Box::new(criterion_9)),
        (10, "morton order throughput", Box::new(criterion_10)),
        (11, "format fidelity", Box::new(criterion_11)),
        (12, "service mirror", Box::new(criterion_12)),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in &checks {
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
