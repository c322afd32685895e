use clap::{Args, Parser, Subcommand};
use layout_fusion::config::PipelineConfig;
use layout_fusion::dataset::{read_dataset, write_dataset, Dataset};
use layout_fusion::export::export;
use layout_fusion::pipeline::{run_pipeline, simulate, PipelineError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "layout-fusion", version, about = "2D LiDAR / monocular camera layout estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align, map, refine and evaluate one sequence, writing artifacts to --out.
    Run(RunArgs),
    /// Write a simulated dataset directory.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file overriding the embedded defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for simulation and hypothesis sampling (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Use only the first N frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Simulated world: square, cluttered or corridor.
    #[arg(long, conflicts_with = "dataset")]
    sim: Option<String>,
    /// Dataset directory (meta.json, frames.jsonl, optional gt.json).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Clear the hypothesis bank at this frame index.
    #[arg(long)]
    reset_tracker_at: Option<usize>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    world: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl ToString) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self { code: e.exit_code() as u8, message: e.to_string() }
    }
}

fn resolve(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(Failure::io)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.frames {
        cfg.run.frames = n;
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = resolve(&args.common)?;
    if let Some(f) = args.reset_tracker_at {
        cfg.run.reset_tracker_at = f as i64;
    }
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let data: Dataset = match (&args.sim, &args.dataset) {
        (Some(world), None) => simulate(world, &cfg)?,
        (None, Some(dir)) => read_dataset(dir).map_err(PipelineError::from)?,
        _ => return Err(Failure::io("exactly one of --sim or --dataset is required")),
    };
    let out = run_pipeline(&data, &cfg)?;
    let written = export(&out, &cfg, &args.out).map_err(Failure::io)?;
    println!("dataset {} ({} frames)", out.dataset, out.trajectory.len());
    let a = out.alignment;
    println!("alignment delta={:.4} phi={:.3} deg origin=({:.3}, {:.3})", a.delta, a.phi.to_degrees(), a.origin.x, a.origin.y);
    println!("floor plan {} walls, {} corners", out.plan.walls.len(), out.plan.corners.len());
    if let Some(m) = &out.metrics {
        if let Some(f) = m.fscore {
            println!("fscore {f:.4}");
        }
        if let Some(c) = &m.corner_rmse {
            println!("corner rmse {:.4} m ({} matched)", c.rmse, c.matched);
        }
        if let Some(s) = m.mean_segmentation_accuracy {
            println!("segmentation {s:.2}%");
        }
    }
    println!("wrote {} files to {}", written.len(), args.out.display());
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<(), Failure> {
    let cfg = resolve(&args.common)?;
    let data = simulate(&args.world, &cfg)?;
    write_dataset(&args.out, &data.meta, &data.frames, data.truth.as_ref()).map_err(Failure::io)?;
    println!("wrote {} frames to {}", data.frames.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Simulate(a) => simulate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
