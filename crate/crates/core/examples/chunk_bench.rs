//! Sweeps the chunk capacity and reports construction time, chunk memory and
//! render time.

use lodstream::app::{bench_points, BenchReport, Dataset, BENCH_CHUNK_SIZES};
use lodstream::{synth, LodConfig};

fn main() {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300_000);
    let data = Dataset::from_points(synth::surface(n, 4));
    let config = LodConfig {
        leaf_threshold: 10_000,
        arena_bytes: 1 << 30,
        ..LodConfig::default()
    };
    let rows = bench_points(&data, &config, &BENCH_CHUNK_SIZES, 9).expect("bench");
    let report = BenchReport {
        input: format!("synthetic surface {n}"),
        points: n,
        rows,
    };
    print!("{}", report.human());
}
