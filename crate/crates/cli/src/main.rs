use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use glod_cli::cmd::{self, BenchArgs, BuildArgs, RenderArgs, ServeArgs, SynthArgs, TrainArgs};
use glod_cli::BenchReport;
use glod_core::{CacheConfig, LodMetric};

/// Out-of-core level-of-detail engine for 3D Gaussian scenes.
///
/// GLOD_THREADS caps the worker threads used for rendering and cuts.
#[derive(Parser)]
#[command(name = "glod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a scene file from a PLY point cloud or rebuild an existing scene.
    Build(BuildCmd),
    /// Render a camera path and report per-frame timings and counters.
    Render(RenderCmd),
    /// Train a scene from posed images.
    Train(TrainCmd),
    /// Compare cut, cache and culling configurations on a camera path.
    Bench(BenchCmd),
    /// Stream LoD cuts to viewer clients over TCP.
    Serve(ServeCmd),
    /// Write a procedural test scene, point cloud, views and camera path.
    Synth(SynthCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    MaxScale,
    SurfaceArea,
}

impl From<Metric> for LodMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::MaxScale => LodMetric::MaxScale,
            Metric::SurfaceArea => LodMetric::SurfaceArea,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct CacheFlags {
    /// Cache budget in bytes.
    #[arg(long, default_value_t = CacheConfig::default().budget_bytes)]
    budget_bytes: u64,
    /// Smallest accepted ratio of current to cached root distance.
    #[arg(long, default_value_t = CacheConfig::default().d_min)]
    dmin: f64,
    /// Largest accepted ratio of current to cached root distance.
    #[arg(long, default_value_t = CacheConfig::default().d_max)]
    dmax: f64,
}

impl CacheFlags {
    fn config(&self) -> Result<CacheConfig> {
        let c = CacheConfig {
            budget_bytes: self.budget_bytes,
            d_min: self.dmin,
            d_max: self.dmax,
            ..CacheConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct BuildCmd {
    /// PLY point cloud or scene file.
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Viewing distance per unit of Gaussian size.
    #[arg(long)]
    lod_threshold: Option<f64>,
    #[arg(long, value_enum)]
    metric: Option<Metric>,
    /// Volume below which a subtree leaves the upper hierarchy.
    #[arg(long)]
    size_threshold: Option<f64>,
    /// Smallest subtree stored as a sequential point tree.
    #[arg(long)]
    min_subtree: Option<usize>,
    #[arg(long)]
    sh_degree: Option<u8>,
}

#[derive(Args)]
struct RenderCmd {
    scene: PathBuf,
    /// JSON array of cameras.
    path: PathBuf,
    /// Directory for frame PNGs and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
    #[arg(long)]
    no_cull: bool,
    /// Also time a full-hierarchy BFS cut per frame and diff it.
    #[arg(long)]
    bfs_oracle: bool,
    #[command(flatten)]
    cache: CacheFlags,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct TrainCmd {
    /// PLY point cloud or scene file.
    input: PathBuf,
    /// Directory of view_NNNN.json cameras with matching PNG images.
    views: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON training configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides total_iterations.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    held_out_every: usize,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct BenchCmd {
    /// Scene file; omit with --synthetic.
    scene: Option<PathBuf>,
    /// Generate a city-block scene with about this many Gaussians.
    #[arg(long, conflicts_with = "scene")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Camera path; defaults to an orbit, or a street walk for --synthetic.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, num_args = 2, value_names = ["W", "H"], default_values_t = [160, 120])]
    resolution: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Comma-separated subset of full, no-cache, no-cull, bfs.
    #[arg(long, value_delimiter = ',', default_value = "full,no-cache,no-cull,bfs")]
    configs: Vec<String>,
    /// Time cut and gather only.
    #[arg(long)]
    no_render: bool,
    #[command(flatten)]
    cache: CacheFlags,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeCmd {
    scene: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Server-side SPT cache budget; 0 disables the cache.
    #[arg(long, default_value_t = CacheConfig::default().budget_bytes)]
    budget_bytes: u64,
    #[arg(long, default_value_t = CacheConfig::default().d_min)]
    dmin: f64,
    #[arg(long, default_value_t = CacheConfig::default().d_max)]
    dmax: f64,
    #[arg(long)]
    no_cull: bool,
    /// Report cut_ms as 0 so sessions are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Exit after this many sessions.
    #[arg(long)]
    max_sessions: Option<usize>,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    gaussians: usize,
    #[arg(long, default_value_t = 64)]
    views: usize,
    #[arg(long, default_value_t = 128)]
    resolution: u32,
    /// Keep every n-th Gaussian mean in the point cloud.
    #[arg(long, default_value_t = 3)]
    stride: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f32,
}

fn print_report(r: &BenchReport, f: Format) -> Result<()> {
    match f {
        Format::Table => print!("{}", r.table()),
        Format::Json => println!("{}", serde_json::to_string_pretty(r)?),
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("GLOD_THREADS") else { return Ok(()) };
    let n: usize = match v.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => bail!("GLOD_THREADS must be a positive integer, got {v:?}"),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Build(c) => {
            let report = cmd::build(&BuildArgs {
                input: c.input,
                output: c.output,
                lod_threshold: c.lod_threshold,
                metric: c.metric.map(Into::into),
                size_threshold: c.size_threshold,
                min_subtree: c.min_subtree,
                sh_degree: c.sh_degree,
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Render(c) => {
            let report = cmd::render(&RenderArgs {
                scene: c.scene,
                path: c.path,
                out: c.out,
                no_cache: c.no_cache,
                no_cull: c.no_cull,
                bfs_oracle: c.bfs_oracle,
                cache: c.cache.config()?,
            })?;
            print_report(&report, c.format)?;
        }
        Command::Train(c) => {
            let summary = cmd::train(&TrainArgs {
                input: c.input,
                views: c.views,
                out: c.out,
                config: c.config,
                iterations: c.iterations,
                seed: c.seed,
                held_out_every: c.held_out_every,
                checkpoint_every: c.checkpoint_every,
                resume: c.resume,
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Bench(c) => {
            let report = cmd::bench(&BenchArgs {
                scene: c.scene,
                synthetic: c.synthetic,
                seed: c.seed,
                path: c.path,
                frames: c.frames,
                resolution: [c.resolution[0], c.resolution[1]],
                repeat: c.repeat,
                configs: c.configs,
                render: !c.no_render,
                cache: c.cache.config()?,
            })?;
            if let Some(p) = &c.report {
                cmd::write_json(p, &report)?;
            }
            print_report(&report, c.format)?;
        }
        Command::Serve(c) => {
            let cache = if c.budget_bytes == 0 {
                None
            } else {
                Some(CacheConfig {
                    budget_bytes: c.budget_bytes,
                    d_min: c.dmin,
                    d_max: c.dmax,
                    ..CacheConfig::default()
                })
            };
            cmd::serve(&ServeArgs {
                scene: c.scene,
                bind: c.bind,
                port: c.port,
                cache,
                cull: !c.no_cull,
                timing: !c.no_timing,
                max_sessions: c.max_sessions,
            })?;
        }
        Command::Synth(c) => cmd::synth(&SynthArgs {
            out: c.out,
            seed: c.seed,
            gaussians: c.gaussians,
            views: c.views,
            resolution: c.resolution,
            stride: c.stride,
            noise: c.noise,
        })?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
