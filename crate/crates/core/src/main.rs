use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use glam::Vec3;

use lodstream::app::{self, AppError, CameraSpec, Input, RenderMode, RenderOptions, ServeOptions};
use lodstream::render::DEFAULT_THRESHOLD;
use lodstream::service::StreamOptions;
use lodstream::synth::SynthKind;
use lodstream::LodConfig;

#[derive(Parser)]
#[command(name = "lodstream", version, about = "Incremental level-of-detail octrees for point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an octree and report timings and tree statistics.
    Build {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        tree: TreeArgs,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Build an octree and render one frame to a PPM image.
    Render {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        camera: CameraArgs,
        #[arg(long, value_enum, default_value = "lod")]
        mode: RenderMode,
        /// Inner nodes larger than this many pixels are refined.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
        /// Overlay the bounding boxes of the selected nodes.
        #[arg(long)]
        show_nodes: bool,
        #[arg(long, short, default_value = "frame.ppm")]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Convert between SIM and LAS (format chosen by the output extension).
    Convert {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write a Morton-ordered SIM copy.
    SortMorton {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Stream construction of a file to WebSocket viewers.
    Serve {
        file: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Limit ingestion to N million points per second.
        #[arg(long)]
        throttle_mps: Option<f64>,
        /// Keep serving late clients after the stream ends.
        #[arg(long)]
        linger: bool,
        #[command(flatten)]
        tree: TreeArgs,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Sweep chunk sizes and report construction time, chunk memory and render time.
    Bench {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        tree: TreeArgs,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    /// SIM or LAS point file.
    #[arg(required_unless_present = "synthetic")]
    file: Option<PathBuf>,
    /// Generate points instead: KIND (uniform|surface) N SEED.
    #[arg(long, num_args = 3, value_names = ["KIND", "N", "SEED"], conflicts_with = "file")]
    synthetic: Option<Vec<String>>,
}

impl InputArgs {
    fn resolve(&self) -> Result<Input, AppError> {
        match (&self.file, &self.synthetic) {
            (_, Some(s)) => {
                let kind: SynthKind = s[0].parse().map_err(AppError::Invalid)?;
                let n = s[1].parse().map_err(|_| AppError::Invalid(format!("bad point count '{}'", s[1])))?;
                let seed = s[2].parse().map_err(|_| AppError::Invalid(format!("bad seed '{}'", s[2])))?;
                Ok(Input::Synthetic { kind, n, seed })
            }
            (Some(f), None) => Ok(Input::File(f.clone())),
            (None, None) => Err(AppError::Invalid("no input given".into())),
        }
    }
}

#[derive(Args)]
struct TreeArgs {
    /// Leaf split threshold T.
    #[arg(long, default_value_t = 50_000)]
    leaf_threshold: u32,
    /// Points or voxels per chunk C.
    #[arg(long, default_value_t = 1000)]
    chunk_size: usize,
    /// Sampling grid resolution G.
    #[arg(long, default_value_t = 128)]
    grid: u32,
    #[arg(long, default_value_t = 20)]
    max_depth: u32,
    #[arg(long, default_value_t = 1_000_000)]
    batch_size: usize,
    /// Update time budget per frame.
    #[arg(long, default_value_t = 10.0)]
    budget_ms: f64,
    /// Arena size in MiB.
    #[arg(long, default_value_t = 4096)]
    arena_mib: usize,
    /// Let concurrent writers race for cells and slots.
    #[arg(long)]
    racy: bool,
    /// Background loader threads.
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

impl TreeArgs {
    fn config(&self) -> LodConfig {
        LodConfig {
            leaf_threshold: self.leaf_threshold,
            chunk_capacity: self.chunk_size,
            grid_resolution: self.grid,
            max_depth: self.max_depth,
            batch_size: self.batch_size,
            budget: Duration::from_secs_f64(self.budget_ms / 1e3),
            arena_bytes: self.arena_mib << 20,
            deterministic: !self.racy,
            ..LodConfig::default()
        }
    }
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|_| format!("bad number '{p}'")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected X,Y,Z, got '{s}'")),
    }
}

#[derive(Args)]
struct CameraArgs {
    /// Eye position X,Y,Z (default: overview of the data).
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    position: Option<Vec3>,
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    target: Option<Vec3>,
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    up: Option<Vec3>,
    /// Vertical field of view in degrees.
    #[arg(long)]
    fov: Option<f32>,
    #[arg(long)]
    near: Option<f32>,
    #[arg(long)]
    far: Option<f32>,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 768)]
    height: u32,
}

impl CameraArgs {
    fn spec(&self) -> CameraSpec {
        CameraSpec {
            position: self.position,
            target: self.target,
            up: self.up,
            fov_y: self.fov,
            near: self.near,
            far: self.far,
            width: self.width,
            height: self.height,
        }
    }
}

fn maybe_write(path: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<(), AppError> {
    match path {
        Some(p) => app::write_json(p, value),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Build { input, tree, stats } => {
            let (report, _) = app::cmd_build(&input.resolve()?, &tree.config(), tree.workers)?;
            println!("{}", report.human());
            maybe_write(&stats, &report)?;
            if !(report.points_conserved && report.invariants_ok) {
                return Err(AppError::Invalid("tree checks failed".into()));
            }
        }
        Command::Render { input, tree, camera, mode, threshold, show_nodes, out, stats } => {
            let options = RenderOptions {
                mode,
                camera: camera.spec(),
                threshold,
                show_nodes,
                background: [0, 0, 0],
            };
            let report = app::cmd_render(&input.resolve()?, &tree.config(), &options, &out)?;
            println!("{}", report.human());
            println!("wrote {}", out.display());
            maybe_write(&stats, &report)?;
        }
        Command::Convert { input, out } => {
            let n = app::cmd_convert(&input.resolve()?, &out)?;
            println!("wrote {n} points to {}", out.display());
        }
        Command::SortMorton { input, out } => {
            let n = app::cmd_sort_morton(&input.resolve()?, &out)?;
            println!("wrote {n} Morton-ordered points to {}", out.display());
        }
        Command::Serve { file, port, throttle_mps, linger, tree, stats } => {
            let options = ServeOptions {
                port,
                stream: StreamOptions {
                    config: tree.config(),
                    throttle_pps: throttle_mps.map(|m| m * 1e6),
                },
                workers: tree.workers,
                linger,
            };
            let summary = app::cmd_serve(&file, &options)?;
            println!(
                "streamed {} points in {} frames as {} messages",
                summary.points, summary.frames, summary.messages
            );
            maybe_write(&stats, &summary)?;
        }
        Command::Bench { input, tree, stats } => {
            let report = app::cmd_bench(&input.resolve()?, &tree.config())?;
            print!("{}", report.human());
            maybe_write(&stats, &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
