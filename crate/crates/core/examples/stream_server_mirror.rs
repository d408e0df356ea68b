//! Serves the construction of a point file over WebSocket and rebuilds it in
//! a headless client.

use std::sync::Arc;
use std::time::Duration;

use lodstream::io::{sim, BatchLoader, SourceSpec};
use lodstream::service::{mirror_from, stream_to_log, EventLog, Server, StreamMessage, StreamOptions};
use lodstream::{synth, LodConfig};

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("scan.sim");
    sim::sim_write(&path, &synth::surface(200_000, 8)).expect("write");

    let spec = Arc::new(SourceSpec::open(&path, None).expect("open"));
    let log = Arc::new(EventLog::new());
    let server = Server::bind("127.0.0.1:0", log.clone()).expect("bind");
    println!("serving on {}", server.url());

    let url = server.url();
    let client = std::thread::spawn(move || {
        let mut ticks = 0;
        let mirror = mirror_from(&url, |m| {
            if let StreamMessage::StatsTick(t) = m {
                ticks += 1;
                if ticks % 20 == 0 {
                    println!("client: frame {} with {} points, {} voxels", t.frame, t.points, t.voxels);
                }
            }
        })
        .expect("mirror");
        (mirror, ticks)
    });

    let options = StreamOptions {
        config: LodConfig {
            leaf_threshold: 5_000,
            batch_size: 10_000,
            arena_bytes: 1 << 30,
            ..LodConfig::default()
        },
        // Slow enough to watch the client follow along.
        throttle_pps: Some(1_000_000.0),
    };
    let loader = BatchLoader::spawn(spec.clone(), options.config.batch_size, 2, 4);
    let (summary, updater) = stream_to_log(loader, *spec.bounds(), &options, &log).expect("stream");
    let (mirror, ticks) = client.join().expect("client");

    mirror.compare(updater.tree()).expect("mirror differs");
    println!(
        "server: {} points, {} frames, {} messages; client saw {ticks} ticks and {} nodes",
        summary.points,
        summary.frames,
        summary.messages,
        mirror.nodes().len()
    );
    server.wait_for_clients(Duration::from_secs(5));
    server.shutdown();
}
