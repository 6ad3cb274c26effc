use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swingup_cli::commands::{self, EvalArgs, SimArgs, TrainArgs};
use swingup_cli::error::CliError;
use swingup_cli::sim::Script;
use swingup_cli::RunConfig;

#[derive(Parser)]
#[command(name = "swingup", version, about = "Simulate, train, evaluate and self-check the swing-up controller")]
struct Cli {
    /// JSON config; omitted sections and keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the controller on a scripted reference and write trajectory.csv.
    Sim {
        /// hold(a) | step(a, t) | sine(amp, hz) | pump | pump(amp)
        #[arg(long, default_value = "hold(0)")]
        script: String,
        /// Simulated seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Initial swing angle alpha (rad).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha0: f64,
        /// Initial swing angle beta (rad).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        beta0: f64,
    },
    /// Train a policy; writes metrics.jsonl and policy checkpoints.
    Train {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides train.total_steps.
        #[arg(long = "train.total-steps", alias = "total-steps")]
        total_steps: Option<u64>,
    },
    /// Evaluate a checkpoint with the deterministic policy; writes eval.json.
    Eval {
        /// Policy checkpoint JSON (policy_final.json, policy_step_<n>.json).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes to roll out; seeds derive from the config seed.
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Also write trajectory_<k>.csv per episode.
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Run the oracle self-checks; writes check.json.
    Check {
        /// Run only the named check (repeatable): energy, period, allocation,
        /// gradient, gae, damping, pump.
        #[arg(long)]
        only: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let config = base.with_overrides(cli.seed, cli.output_dir);
    match cli.command {
        Command::Sim {
            script,
            duration,
            alpha0,
            beta0,
        } => {
            let args = SimArgs {
                script: script.parse::<Script>()?,
                duration,
                alpha0,
                beta0,
            };
            let path = commands::cmd_sim(&config, &args)?;
            println!("wrote {}", path.display());
        }
        Command::Train { resume, total_steps } => {
            let out = commands::cmd_train(&config, &TrainArgs { resume, total_steps })?;
            println!(
                "trained {} steps in {} updates; wrote {}",
                out.steps,
                out.updates,
                out.final_checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            episodes,
            dump_trajectories,
        } => {
            let report = commands::cmd_eval(
                &config,
                &EvalArgs {
                    checkpoint,
                    episodes,
                    dump_trajectories,
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&report.stats)?);
        }
        Command::Check { only } => {
            let report = commands::cmd_check(&config, &only)?;
            print!("{}", commands::format_check_table(&report));
            if !report.passed {
                let failed = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
                return Err(CliError::CheckFailed(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
