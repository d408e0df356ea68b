//! Writes a shuffled SIM file, sorts a copy along the Morton curve and
//! compares update throughput on both.

use lodstream::app::build_from_points;
use lodstream::io::{morton, sim};
use lodstream::synth;
use lodstream::LodConfig;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let shuffled_path = dir.path().join("shuffled.sim");
    let sorted_path = dir.path().join("sorted.sim");

    let mut points = synth::uniform(1_000_000, 5);
    points.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(6));
    sim::sim_write(&shuffled_path, &points).expect("write");
    let bounds = morton::morton_sort(&shuffled_path, &sorted_path, None).expect("sort");

    let config = LodConfig::default();
    for (name, path) in [("shuffled", &shuffled_path), ("morton", &sorted_path)] {
        let pts = sim::sim_read(path).expect("read");
        let u = build_from_points(&pts, bounds, &config).expect("build");
        println!("{name:>8}: {:.1} M points/s update throughput", u.stats().throughput_mps());
    }
}
