//! `uvsplat` command line: fit attribute maps to target views, render
//! stills, orbit frame sequences, EPI strips, timing benchmarks, and PLY
//! export.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.

mod commands;

use clap::{Parser, Subcommand};

use commands::{
    cmd_bench, cmd_epi, cmd_export_ply, cmd_fit, cmd_orbit, cmd_render, BenchArgs, EpiArgs,
    FitArgs, OrbitArgs, PlyArgs, RenderArgs,
};

#[derive(Parser)]
#[command(name = "uvsplat", version, about)]
struct Cli {
    /// Override the config seed where one applies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize attribute maps against target views (config-driven).
    Fit(FitArgs),
    /// Render one view of a scene to PNG (and optionally PFM).
    Render(RenderArgs),
    /// Render an orbit of frames with cameras on a horizontal circle.
    Orbit(OrbitArgs),
    /// Stack a fixed pixel line across an orbit into an EPI strip.
    Epi(EpiArgs),
    /// Time generation, rendering, and the backward pass per resolution.
    Bench(BenchArgs),
    /// Export the assembled Gaussians as a binary PLY.
    ExportPly(PlyArgs),
}

fn main() {
    if let Ok(threads) = std::env::var("GG_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args, cli.seed),
        Command::Render(args) => cmd_render(args),
        Command::Orbit(args) => cmd_orbit(args),
        Command::Epi(args) => cmd_epi(args),
        Command::Bench(args) => cmd_bench(args),
        Command::ExportPly(args) => cmd_export_ply(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
