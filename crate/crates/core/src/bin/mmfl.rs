use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmfl_core::harness::{run_experiment, ExperimentPlan, Mode};
use mmfl_core::scheduler::SchedulerKind;
use mmfl_core::SimConfig;

/// Multi-task vehicular federated learning simulator.
#[derive(Debug, Parser)]
#[command(name = "mmfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run rounds with a scheduler and write metrics.
    Simulate(Common),
    /// Train a learned scheduler and write its checkpoint and curve.
    Train(Common),
    /// Run a trained policy (or a baseline) and write metrics.
    Evaluate(Common),
    /// Solve the task allocation game for the first round.
    Nash(Common),
    /// Check the convergence bounds on the first quadratic task.
    VerifyBounds(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; repeat for several runs.
    #[arg(long, required = true)]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Mobility trace CSV replacing the synthetic grid.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "era")]
    scheduler: SchedulerKind,
    /// Policy checkpoint for learned schedulers.
    #[arg(long)]
    policy: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMFL_LOG", "warn")).init();
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Simulate(c) => (Mode::Simulate, c),
        Command::Train(c) => (Mode::Train, c),
        Command::Evaluate(c) => (Mode::Evaluate, c),
        Command::Nash(c) => (Mode::Nash, c),
        Command::VerifyBounds(c) => (Mode::VerifyBounds, c),
    };
    let config = match SimConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::FAILURE;
        }
    };
    let plan = ExperimentPlan {
        config,
        mode,
        scheduler: common.scheduler,
        seeds: common.seed,
        out_dir: common.out,
        trace: common.trace,
        policy: common.policy,
    };
    match run_experiment(&plan) {
        Ok(summaries) => {
            for s in summaries {
                println!(
                    "seed {}: feasible {:.3}, T_max {:.6} s, energy {:.3} J, mean return {:.4}",
                    s.seed, s.feasible_fraction, s.t_max, s.total_energy, s.mean_return
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
