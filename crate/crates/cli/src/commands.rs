//! The four subcommands. Each writes `config.resolved.json` next to its
//! outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use swingup::learn::checkpoint::{write_atomic, Checkpoint};
use swingup::learn::eval::{episode_seeds, evaluate, run_episode, EpisodeOutcome, EvalStats};
use swingup::learn::{Trainer, UpdateMetrics};
use swingup::env::SwingEnv;
use swingup::model::SimState;

use crate::checks::{self, CheckResult, CHECK_NAMES};
use crate::config::RunConfig;
use crate::csv;
use crate::error::CliError;
use crate::sim::{self, Script};

fn prepare_output(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_json(&dir.join("config.resolved.json"), &config.resolved_json())?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub struct SimArgs {
    pub script: Script,
    pub duration: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

pub fn cmd_sim(config: &RunConfig, args: &SimArgs) -> Result<PathBuf, CliError> {
    config.validate()?;
    let initial = SimState::swing(args.alpha0, args.beta0, 0.0, 0.0);
    let rows = sim::run_sim(config, &args.script, initial, args.duration)?;
    let dir = prepare_output(config)?;
    let path = dir.join("trajectory.csv");
    csv::write(&path, &rows, config.model.rotors.len())?;
    Ok(path)
}

pub struct TrainArgs {
    pub resume: Option<PathBuf>,
    pub total_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub steps: u64,
    pub updates: u64,
    pub final_checkpoint: PathBuf,
}

/// Existing metrics rows whose step does not exceed `step`; used on resume.
fn metrics_up_to(path: &Path, step: u64) -> Result<Vec<String>, CliError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut keep = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: UpdateMetrics = serde_json::from_str(line)?;
        if row.step <= step {
            keep.push(line.to_string());
        }
    }
    Ok(keep)
}

pub fn cmd_train(config: &RunConfig, args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let mut config = config.clone();
    if let Some(n) = args.total_steps {
        config.train.total_steps = n;
    }
    config.validate()?;
    let dir = prepare_output(&config)?;
    let provenance = config.resolved_json();
    let metrics_path = dir.join("metrics.jsonl");

    let (mut trainer, mut lines) = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let trainer = Trainer::resume(
                &config.model,
                &config.gains,
                &config.env,
                &config.train,
                ckpt.model()?,
                ckpt.adam()?,
                ckpt.update,
                ckpt.step,
            )?;
            (trainer, metrics_up_to(&metrics_path, ckpt.step)?)
        }
        None => (Trainer::new(&config.model, &config.gains, &config.env, &config.train)?, Vec::new()),
    };
    write_atomic(&metrics_path, join_lines(&lines).as_bytes())?;

    let every = config.train.checkpoint_every;
    while !trainer.finished() {
        let metrics = match trainer.update() {
            Ok(m) => m,
            Err(e) => {
                // Keep what is already on disk and record the last good state.
                let ckpt = Checkpoint::new(
                    trainer.model(),
                    Some(trainer.adam()),
                    trainer.steps_done(),
                    trainer.updates_done(),
                    provenance.clone(),
                );
                let _ = ckpt.save(&dir.join("policy_diverged.json"));
                return Err(e.into());
            }
        };
        lines.push(serde_json::to_string(&metrics)?);
        write_atomic(&metrics_path, join_lines(&lines).as_bytes())?;
        if every > 0 && trainer.updates_done() % every == 0 && !trainer.finished() {
            let ckpt = Checkpoint::new(
                trainer.model(),
                Some(trainer.adam()),
                trainer.steps_done(),
                trainer.updates_done(),
                provenance.clone(),
            );
            ckpt.save(&dir.join(format!("policy_step_{}.json", trainer.steps_done())))?;
        }
    }
    let final_path = dir.join("policy_final.json");
    Checkpoint::new(
        trainer.model(),
        Some(trainer.adam()),
        trainer.steps_done(),
        trainer.updates_done(),
        provenance,
    )
    .save(&final_path)?;
    Ok(TrainOutcome {
        steps: trainer.steps_done(),
        updates: trainer.updates_done(),
        final_checkpoint: final_path,
    })
}

fn join_lines(lines: &[String]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    s
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    pub dump_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub seed: u64,
    pub stats: EvalStats,
    pub episodes: Vec<EpisodeOutcome>,
}

pub fn cmd_eval(config: &RunConfig, args: &EvalArgs) -> Result<EvalReport, CliError> {
    config.validate()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = ckpt.model()?;
    let dir = prepare_output(config)?;
    let (stats, outcomes) = evaluate(
        &model.policy,
        &config.model,
        &config.gains,
        &config.env,
        args.episodes,
        config.seed,
    )?;
    if args.dump_trajectories {
        let mut env = SwingEnv::new(&config.env, &config.model, &config.gains)?;
        for (k, seed) in episode_seeds(config.seed, args.episodes).into_iter().enumerate() {
            let mut rows = Vec::new();
            run_episode(&mut env, &model.policy, seed, Some(&mut rows))?;
            csv::write(&dir.join(format!("trajectory_{k:03}.csv")), &rows, config.model.rotors.len())?;
        }
    }
    let report = EvalReport {
        checkpoint: args.checkpoint.display().to_string(),
        seed: config.seed,
        stats,
        episodes: outcomes,
    };
    write_json(&dir.join("eval.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Run the selected checks (all when `only` is empty) and write check.json.
/// Failing checks are reported through the returned report; the caller maps
/// them to the exit code.
pub fn cmd_check(config: &RunConfig, only: &[String]) -> Result<CheckReport, CliError> {
    config.validate_except_step()?;
    let names: Vec<String> = if only.is_empty() {
        CHECK_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        only.to_vec()
    };
    let checks = names
        .iter()
        .map(|n| checks::run_check(n, config))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = prepare_output(config)?;
    let report = CheckReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    write_json(&dir.join("check.json"), &report)?;
    Ok(report)
}

/// Human-readable table for `check`.
pub fn format_check_table(report: &CheckReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        out.push_str(&format!("{:<6} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name));
        for m in &c.measurements {
            out.push_str(&format!(
                "         {:<44} {:>12.4e} {} {:.4e}{}\n",
                m.label,
                m.value,
                m.relation,
                m.limit,
                if m.passed { "" } else { "   <- failed" }
            ));
        }
        if let Some(e) = &c.error {
            out.push_str(&format!("         error: {e}\n"));
        }
    }
    out
}
