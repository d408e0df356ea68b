//! Renders a level-of-detail frame and a brute-force reference and writes
//! both as PPM images.
//!
//! `cargo run --release --example render_frame [out_dir]`

use std::path::PathBuf;

use lodstream::app::{build_from_points, Dataset};
use lodstream::render::{brute_force_render, draw_node_boxes, rasterize, select_visible, Camera, DEFAULT_THRESHOLD};
use lodstream::synth;
use lodstream::LodConfig;

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let data = Dataset::from_points(synth::surface(500_000, 3));
    let config = LodConfig {
        leaf_threshold: 10_000,
        arena_bytes: 1 << 30,
        ..LodConfig::default()
    };
    let updater = build_from_points(&data.points, data.bounds, &config).expect("build");
    let tree = updater.tree();
    let camera = Camera::overview(&data.bounds, 800, 600);

    let visible = select_visible(tree, &camera, DEFAULT_THRESHOLD);
    let (frame, stats) = rasterize(tree, &visible, &camera);
    let mut image = frame.to_image([0, 0, 0]);
    let boxes = draw_node_boxes(&mut image, tree, &visible.nodes, &camera, [255, 255, 0]);
    image.write_ppm(&out.join("lod.ppm")).expect("write");
    println!(
        "lod: {} nodes ({boxes} outline pixels), {} points + {} voxels in {:.2} ms",
        stats.nodes,
        stats.points,
        stats.voxels,
        stats.duration.as_secs_f64() * 1e3
    );

    let brute = brute_force_render(&data.points, &camera);
    brute.to_image([0, 0, 0]).write_ppm(&out.join("brute.ppm")).expect("write");
    println!("brute: {} covered pixels, lod: {}", brute.covered(), frame.covered());
}
