//! Feeds a synthetic scan into the octree frame by frame under a time budget
//! and prints what each frame did.

use std::collections::VecDeque;
use std::time::Duration;

use lodstream::octree::CubeBounds;
use lodstream::synth::{self, SynthKind};
use lodstream::update::{partition, BudgetClock};
use lodstream::{LodConfig, Updater};

fn main() {
    let points = synth::generate(SynthKind::Surface, 400_000, 1);
    let config = LodConfig {
        leaf_threshold: 5_000,
        budget: Duration::from_millis(4),
        arena_bytes: 1 << 30,
        ..LodConfig::default()
    };
    let mut queue: VecDeque<_> = partition(&points, 20_000);
    let mut updater = Updater::new(CubeBounds::unit(), config.clone());

    let mut frame = 0;
    while !queue.is_empty() {
        let report = updater.run_frame_updates(&mut queue, BudgetClock::start(config.budget)).expect("update");
        let stats = updater.tree().stats();
        frame += 1;
        println!(
            "frame {frame:>3}: {} batches, {:>6} points in {:>6.2} ms; tree has {} nodes, {} points, {} voxels",
            report.batches,
            report.points,
            report.elapsed.as_secs_f64() * 1e3,
            stats.nodes,
            stats.points,
            stats.voxels
        );
    }
    updater.tree().check_invariants().expect("invariants");
    let s = updater.stats();
    println!(
        "{} points in {} frames, {:.1} M points/s, max level {}",
        s.points_inserted,
        s.frames,
        s.throughput_mps(),
        updater.tree().stats().max_level
    );
}
