use anyhow::Context;
use clap::{Parser, Subcommand};
use pb_disk::io::ExperimentConfig;
use pb_disk::pipeline::{run_experiment, Stage};
use std::path::PathBuf;

/// Thread count override for the rayon pool.
const THREADS_ENV: &str = "PBDISK_THREADS";

#[derive(Parser)]
#[command(name = "pbdisk", version, about = "Point-vortex flow in the unit disk: expansion, error solve and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config (flat keys); defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// run only the named stage; upstream outputs must already be in --out
    #[arg(long, global = true)]
    stage_only: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// build the matched-asymptotic approximation and its residuals
    Expand,
    /// solve the error system for every epsilon
    Solve,
    /// run the invariant suite on solved fields
    Verify,
    /// epsilon sweep: metric table and log-log slopes
    Converge,
    /// random Wirtinger and Hardy samples
    CheckInequalities,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var(THREADS_ENV) {
        let n: usize = n.parse().with_context(|| format!("{THREADS_ENV} must be a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let stage = match cli.command {
        Command::Expand => Stage::Expand,
        Command::Solve => Stage::Solve,
        Command::Verify => Stage::Verify,
        Command::Converge => Stage::Converge,
        Command::CheckInequalities => Stage::CheckInequalities,
    };
    let summary = run_experiment(&cfg, stage, &cli.out, cli.stage_only)?;
    for t in &summary.manifest.stages {
        eprintln!("{:<20} {:>9.2} s", t.stage, t.seconds);
    }
    println!("{}", cli.out.join(pb_disk::pipeline::MANIFEST).display());
    Ok(())
}
