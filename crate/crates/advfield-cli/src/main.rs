//! Single-binary driver: generate corpora, train the scorer and the field
//! bank, attack, augment, evaluate, and export clouds for inspection.
//! Options layer as defaults < --config file < flags; every run echoes
//! its resolved configuration into the output directory.

mod commands;
mod config;
mod ply;

use advfield::Error;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "advfield", version, about = "Adversarial vector fields for 3D point clouds")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for everything stochastic in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic corpus of paired clean/damaged frames.
    GenData(commands::GenDataOpts),
    /// Train the point-set scorer the attacks target.
    TrainScorer(commands::TrainScorerOpts),
    /// Train a bank of adversarial vector fields against a scorer.
    TrainField(commands::TrainFieldOpts),
    /// Write an attacked copy of a dataset.
    Attack(commands::AttackOpts),
    /// Write an augmented copy of a dataset (one object deformed per frame).
    Augment(commands::AugmentOpts),
    /// Compare a modified dataset against its clean counterpart.
    Eval(commands::EvalOpts),
    /// Export a cloud (optionally with displacement against a baseline) as ASCII PLY.
    ExportPly(commands::ExportPlyOpts),
}

/// One exit code per error class, so scripts can branch on what failed.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 10,
        Error::Geometry(_) => 11,
        Error::Train(_) => 12,
        Error::Model(_) => 13,
        Error::Attack(_) => 14,
        Error::Malformed { .. } => 15,
        Error::Parse { .. } => 16,
        Error::Io { .. } => 17,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run = || -> advfield::Result<()> {
        let file = config::FileConfig::load(cli.config.as_deref())?;
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        let out = cli.out.clone();
        match cli.cmd {
            Cmd::GenData(f) => commands::gen_data(f, &file, seed, out),
            Cmd::TrainScorer(f) => commands::cmd_train_scorer(f, &file, seed, out),
            Cmd::TrainField(f) => commands::cmd_train_field(f, &file, seed, out),
            Cmd::Attack(f) => commands::cmd_attack(f, &file, seed, out),
            Cmd::Augment(f) => commands::cmd_augment(f, &file, seed, out),
            Cmd::Eval(f) => commands::cmd_eval(f, &file, seed, out),
            Cmd::ExportPly(f) => commands::cmd_export_ply(f, &file, seed, out),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
