mod common;

use lodstream::octree::{CubeBounds, Octree, Point};
use lodstream::render::{rasterize, select_visible, Camera};
use lodstream::update::partition;
use lodstream::{LodConfig, Updater};

fn config(deterministic: bool) -> LodConfig {
    LodConfig {
        leaf_threshold: 400,
        chunk_capacity: 100,
        grid_resolution: 64,
        arena_bytes: 1 << 30,
        deterministic,
        ..LodConfig::default()
    }
}

fn build_with(threads: usize, points: &[Point], cfg: &LodConfig) -> Updater {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut u = Updater::new(CubeBounds::unit(), cfg.clone());
        u.insert_all(partition(points, 60_000)).unwrap();
        u
    })
}

/// Every node's samples in storage order.
fn layout(tree: &Octree) -> Vec<Vec<[u32; 4]>> {
    tree.nodes().iter().map(|n| tree.samples(n.id()).iter().map(Point::bit_key).collect()).collect()
}

fn dataset() -> Vec<Point> {
    let mut rng = common::rng(42);
    let mut pts = common::surface_like(90_000, &mut rng);
    pts.extend(common::uniform(90_000, &mut rng));
    pts
}

#[test]
fn storage_is_identical_for_any_thread_count() {
    let pts = dataset();
    let reference = build_with(1, &pts, &config(true));
    let expected = layout(reference.tree());
    for threads in [2, 4] {
        let u = build_with(threads, &pts, &config(true));
        u.tree().check_invariants().unwrap();
        assert_eq!(layout(u.tree()), expected, "{threads} threads");
    }
}

#[test]
fn parallel_voxels_match_sequential_replay() {
    let pts = dataset();
    let u = build_with(4, &pts, &config(true));
    let tree = u.tree();
    let oracle = common::replay_voxels(tree, &pts);
    for (path, voxels) in common::stored_voxels(tree) {
        let got: std::collections::BTreeMap<u32, [u8; 4]> = voxels.into_iter().collect();
        assert_eq!(got, oracle[&path], "node {path:?}");
    }
}

#[test]
fn racy_mode_keeps_structure_and_counts() {
    let pts = dataset();
    let exact = build_with(1, &pts, &config(true));
    let racy = build_with(4, &pts, &config(false));
    racy.tree().check_invariants().unwrap();
    assert_eq!(common::tree_signature(racy.tree()), common::tree_signature(exact.tree()));
    let counts = |t: &Octree| t.nodes().iter().map(|n| n.count()).collect::<Vec<_>>();
    assert_eq!(counts(racy.tree()), counts(exact.tree()));
}

#[test]
fn frames_match_across_thread_counts() {
    let pts = dataset();
    let a = build_with(1, &pts, &config(true));
    let b = build_with(4, &pts, &config(true));
    let cam = Camera::overview(&CubeBounds::unit(), 320, 240);
    let render = |u: &Updater| {
        let vis = select_visible(u.tree(), &cam, 64.0);
        rasterize(u.tree(), &vis, &cam).0.cells()
    };
    assert_eq!(render(&a), render(&b));
}
