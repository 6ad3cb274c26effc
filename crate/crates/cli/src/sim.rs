//! Controller-only runs driven by scripted task references.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use swingup::control::{Controller, TaskReference};
use swingup::env::{self, EnvConfig, TrajectoryRow};
use swingup::model::{self, SimState};

use crate::config::RunConfig;
use crate::error::CliError;

pub const DEFAULT_PUMP_AMPLITUDE: f64 = 0.1;

/// Reference script, written as `hold(a)`, `step(a, t)`, `sine(amp, hz)`
/// or `pump` / `pump(amp)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Script {
    /// Hold `alpha` (rad).
    Hold { alpha: f64 },
    /// Hold the initial angle, then `alpha` from time `at` on.
    Step { alpha: f64, at: f64 },
    /// `amp * sin(2 pi freq t)` with matching reference rate.
    Sine { amp: f64, freq: f64 },
    /// Bang-bang pumping locked to the swing: the reference leads the
    /// current angle by `amp` in the direction of motion and its rate
    /// matches the swing rate, so the outer loop pushes along the motion
    /// and switches at every turning point.
    Pump { amp: f64 },
}

impl FromStr for Script {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) => {
                let inner = s[i + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| CliError::Usage(format!("unbalanced parentheses in script `{s}`")))?;
                (&s[..i], inner)
            }
            None => (s, ""),
        };
        let args: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| CliError::Usage(format!("bad script argument `{}`", a.trim())))
                })
                .collect::<Result<_, _>>()?
        };
        let arity = |n: &[usize]| {
            if n.contains(&args.len()) {
                Ok(())
            } else {
                Err(CliError::Usage(format!("script `{name}` takes {n:?} arguments, got {}", args.len())))
            }
        };
        match name.trim() {
            "hold" => {
                arity(&[0, 1])?;
                Ok(Script::Hold {
                    alpha: args.first().copied().unwrap_or(0.0),
                })
            }
            "step" => {
                arity(&[1, 2])?;
                Ok(Script::Step {
                    alpha: args[0],
                    at: args.get(1).copied().unwrap_or(0.0),
                })
            }
            "sine" => {
                arity(&[2])?;
                Ok(Script::Sine {
                    amp: args[0],
                    freq: args[1],
                })
            }
            "pump" => {
                arity(&[0, 1])?;
                Ok(Script::Pump {
                    amp: args.first().copied().unwrap_or(DEFAULT_PUMP_AMPLITUDE),
                })
            }
            other => Err(CliError::Usage(format!(
                "unknown script `{other}` (expected hold, step, sine or pump)"
            ))),
        }
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Script::Hold { alpha } => write!(f, "hold({alpha})"),
            Script::Step { alpha, at } => write!(f, "step({alpha}, {at})"),
            Script::Sine { amp, freq } => write!(f, "sine({amp}, {freq})"),
            Script::Pump { amp } => write!(f, "pump({amp})"),
        }
    }
}

impl Script {
    pub fn reference(&self, state: &SimState, initial: &SimState) -> TaskReference {
        let t = state.t;
        let (alpha_ref, alpha_dot_ref) = match *self {
            Script::Hold { alpha } => (alpha, 0.0),
            Script::Step { alpha, at } => (if t >= at { alpha } else { initial.alpha }, 0.0),
            Script::Sine { amp, freq } => {
                let w = 2.0 * PI * freq;
                (amp * (w * t).sin(), amp * w * (w * t).cos())
            }
            Script::Pump { amp } => {
                let dir = if state.alpha_dot >= 0.0 { 1.0 } else { -1.0 };
                (state.alpha + amp * dir, state.alpha_dot)
            }
        };
        TaskReference {
            alpha_ref,
            beta_ref: 0.0,
            alpha_dot_ref,
            beta_dot_ref: 0.0,
            yaw_ref: 0.0,
        }
    }
}

/// Run the controller for `duration` seconds; one row per physics step,
/// holding the post-step state and the command applied during the step.
pub fn run_sim(config: &RunConfig, script: &Script, initial: SimState, duration: f64) -> Result<Vec<TrajectoryRow>, CliError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(CliError::Usage(format!("duration must be finite and > 0, got {duration}")));
    }
    let params = &config.model;
    let controller = Controller::new(params, &config.gains)?;
    let env_cfg: &EnvConfig = &config.env;
    let steps = (duration / params.dt).round().max(1.0) as usize;
    let mut rows = Vec::with_capacity(steps);
    let mut state = initial;
    for _ in 0..steps {
        let reference = script.reference(&state, &initial);
        let report = controller.step(&state, &reference)?;
        state = model::step_rk4(params, &state, &report.command.u)?;
        rows.push(TrajectoryRow {
            state,
            reference,
            reward: env::reward(env_cfg, params, &state, &[0.0; 2]),
            thrust: report.command.u,
            achieved: report.achieved,
            saturated: report.saturated,
        });
    }
    Ok(rows)
}

/// Swing energy (pendulum part only) at the turning points of `alpha`,
/// i.e. the peaks of the potential energy envelope.
pub fn turning_point_energies(config: &RunConfig, rows: &[TrajectoryRow]) -> Vec<f64> {
    let mut out = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0].state, &w[1].state);
        if a.alpha_dot != 0.0 && a.alpha_dot.signum() != b.alpha_dot.signum() {
            let mut s = *b;
            s.omega = nalgebra::Vector3::zeros();
            out.push(model::total_energy(&config.model, &s));
        }
    }
    out
}
