//! `lwlab`: run an experiment, write its CSV and summary rows, and compare
//! against a regression baseline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lwlab::config::Experiment;
use lwlab::{init_workers, out_dir, report, run, CliError, Overrides, RunReport};

#[derive(Parser)]
#[command(name = "lwlab", version, about = "Lorentz-space Wente and bubble-tree experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON sweep configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV, JSON and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use seeds 0..n.
    #[arg(long)]
    seeds: Option<u64>,
    /// Baseline CSV (experiment, metric, value, tolerance).
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Lorentz-norm invariants on random fields and the log-gradient identity.
    LorentzCheck(Common),
    /// Wente solves over the ε ladder (lemma: wente, l4, 2.2, LR0).
    WenteSweep(Common),
    /// Harmonic-function ratios over the ε ladder (lemma: l1, l3).
    HarmonicSweep(Common),
    /// Weak-gradient Wente estimate over the ε ladder.
    Lr1Sweep(Common),
    /// First-order system reconstruction from rotated bubbles.
    FirstOrderSweep(Common),
    /// Weak-L² gradient against the dyadic energy supremum.
    WeakL2(Common),
    /// Radii partitions of random densities.
    PartitionFuzz(Common),
    /// Bubble trees and neck energies for a synthetic sequence.
    BubbleDemo(Common),
    /// Pohozaev balance of stereographic bubbles and controls.
    Pohozaev(Common),
    /// Re-check summary.csv in --out and compare it with --baseline.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Write the summary as a baseline file.
        #[arg(long)]
        freeze: Option<PathBuf>,
        /// Relative tolerance for --freeze.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

fn overrides(c: Common) -> Overrides {
    Overrides { config: c.config, out: c.out, seeds: c.seeds, baseline: c.baseline }
}

fn dispatch(cmd: Command) -> Result<RunReport, CliError> {
    let (exp, common) = match cmd {
        Command::Report { out, baseline, freeze, tolerance } => {
            let out = out.unwrap_or_else(|| out_dir(&Default::default()));
            return report(&out, baseline.as_deref(), freeze.as_deref().map(|p| (p, tolerance)));
        }
        Command::LorentzCheck(c) => (Experiment::LorentzCheck, c),
        Command::WenteSweep(c) => (Experiment::WenteSweep, c),
        Command::HarmonicSweep(c) => (Experiment::HarmonicSweep, c),
        Command::Lr1Sweep(c) => (Experiment::Lr1Sweep, c),
        Command::FirstOrderSweep(c) => (Experiment::FirstOrderSweep, c),
        Command::WeakL2(c) => (Experiment::WeakL2, c),
        Command::PartitionFuzz(c) => (Experiment::PartitionFuzz, c),
        Command::BubbleDemo(c) => (Experiment::BubbleDemo, c),
        Command::Pohozaev(c) => (Experiment::Pohozaev, c),
    };
    run(exp, &overrides(common).resolve()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers().and_then(|_| dispatch(cli.command));
    match result {
        Ok(rep) => {
            for line in rep.lines() {
                println!("{line}");
            }
            ExitCode::from(rep.exit_code())
        }
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code())
        }
    }
}
