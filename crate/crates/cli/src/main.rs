//! Pipeline front door: scene synthesis, preprocessing, candidate search,
//! MRF solving, rendering and evaluation as subcommands over a JSON config.

mod bench;
mod commands;
mod store;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "planmatch", version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory with ground truth.
    Synth {
        /// Output scene directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        rooms: usize,
        /// Grid as ROWSxCOLS.
        #[arg(long, default_value = "4x5")]
        grid: String,
        #[arg(long, default_value_t = 0)]
        duplicates: usize,
        #[arg(long, default_value_t = 0.05)]
        clutter: f64,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        #[arg(long, default_value_t = 0.05)]
        mpp: f64,
        #[arg(long, default_value_t = 3.0)]
        room_min: f64,
        #[arg(long, default_value_t = 6.0)]
        room_max: f64,
        /// Optional canvas as WIDTHxHEIGHT.
        #[arg(long)]
        canvas: Option<String>,
    },
    /// Build the floorplan context and evidence packs.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        /// Rebuild even when outputs are newer than inputs.
        #[arg(long)]
        force: bool,
    },
    /// Hierarchical candidate search per scan.
    Candidates {
        #[arg(long)]
        config: PathBuf,
    },
    /// Candidate search with a replacement unary metric.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        /// naive_ssd, masked_ssd or distance_transform.
        #[arg(long)]
        kind: String,
    },
    /// Assemble and minimize the placement MRF.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render placed free-space masks over the floorplan.
    Render {
        #[arg(long)]
        config: PathBuf,
        /// Placements file (default: <output_dir>/placements.json).
        #[arg(long)]
        placements: Option<PathBuf>,
        /// Output image (default: <output_dir>/render.png).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score placements and candidates against the scene ground truth.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Ground truth file (default: gt.json next to the config).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Seeded benchmark matrix: ablations and baseline metrics.
    Bench {
        /// Output directory for per-seed results.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// standard or ambiguity.
        #[arg(long, default_value = "standard")]
        scenario: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized");
        }
    }
    let result = match cli.command {
        Command::Synth {
            out,
            seed,
            rooms,
            grid,
            duplicates,
            clutter,
            dropout,
            mpp,
            room_min,
            room_max,
            canvas,
        } => commands::cmd_synth(
            &out, seed, rooms, &grid, duplicates, clutter, dropout, mpp, room_min, room_max,
            canvas.as_deref(),
        ),
        Command::Preprocess { config, force } => commands::cmd_preprocess(&config, force),
        Command::Candidates { config } => commands::cmd_candidates(&config, None),
        Command::Baseline { config, kind } => commands::cmd_candidates(&config, Some(&kind)),
        Command::Solve { config } => commands::cmd_solve(&config),
        Command::Render {
            config,
            placements,
            out,
        } => commands::cmd_render(&config, placements.as_deref(), out.as_deref()),
        Command::Eval { config, gt } => commands::cmd_eval(&config, gt.as_deref()),
        Command::Bench {
            out,
            seeds,
            scenario,
        } => bench::cmd_bench(&out, seeds, &scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
