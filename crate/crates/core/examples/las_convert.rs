//! Writes a LAS file, reads it back in batches and converts it to SIM.

use glam::DVec3;
use lodstream::app::{cmd_convert, Input};
use lodstream::io::{las, sim, BatchSource};
use lodstream::synth;

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let las_path = dir.path().join("scan.las");
    let sim_path = dir.path().join("scan.sim");

    let points = synth::surface(50_000, 2);
    las::write_las(&las_path, &points, DVec3::splat(1e-6), DVec3::ZERO).expect("write las");
    let header = las::las_open(&las_path).expect("header");
    println!(
        "LAS {}.{} format {}: {} points, scale {:?}",
        header.version.0, header.version.1, header.point_format, header.point_count, header.scale
    );

    let mut source = BatchSource::open(&las_path, None, 16_384).expect("open");
    let mut batches = 0;
    let mut read = 0;
    while let Some(batch) = source.read_batch().expect("read") {
        batches += 1;
        read += batch.len();
    }
    println!("read {read} points in {batches} batches, root cube {:?}", source.bounds());

    let n = cmd_convert(&Input::File(las_path), &sim_path).expect("convert");
    let back = sim::sim_read(&sim_path).expect("read sim");
    let worst = points
        .iter()
        .zip(&back)
        .map(|(a, b)| (a.position - b.position).abs().max_element())
        .fold(0.0f32, f32::max);
    println!("converted {n} points to SIM; largest coordinate change {worst:.2e}");
}
