//! Episodic swing-up environment.
//!
//! The agent does not command thrusts. Each action nudges the task
//! reference; the hierarchical controller then runs `K` physics steps
//! tracking it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{Controller, Gains, TaskReference};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams, SimState, Wrench};

pub const OBS_DIM: usize = 13;

pub type Observation = [f64; OBS_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Goal swing angle (rad).
    pub target_alpha: f64,
    pub angle_tol: f64,
    pub rate_tol: f64,
    /// Policy steps per episode.
    pub episode_len: usize,
    /// Largest reference increment per policy step (rad).
    pub action_scale: f64,
    pub w_angle: f64,
    pub w_rate: f64,
    pub w_action: f64,
    pub w_energy: f64,
    pub success_bonus: f64,
    pub reset_std: f64,
    /// Physics steps per policy step.
    pub inner_steps: usize,
    /// Freeze beta at zero and use a one-dimensional action.
    pub planar: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            target_alpha: 2.4,
            angle_tol: 0.15,
            rate_tol: 0.3,
            episode_len: 400,
            action_scale: 0.05,
            w_angle: 1.0,
            w_rate: 0.1,
            w_action: 0.01,
            w_energy: 0.5,
            success_bonus: 10.0,
            reset_std: 0.02,
            inner_steps: 25,
            planar: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("env.angle_tol", self.angle_tol),
            ("env.rate_tol", self.rate_tol),
            ("env.action_scale", self.action_scale),
            ("env.w_angle", self.w_angle),
            ("env.w_rate", self.w_rate),
            ("env.w_action", self.w_action),
            ("env.w_energy", self.w_energy),
            ("env.success_bonus", self.success_bonus),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.reset_std.is_finite() && self.reset_std >= 0.0) {
            return Err(Error::param("env.reset_std", "must be finite and >= 0"));
        }
        if !(self.target_alpha.is_finite() && self.target_alpha.abs() < std::f64::consts::PI) {
            return Err(Error::param("env.target_alpha", "must satisfy |target| < pi"));
        }
        if self.episode_len == 0 {
            return Err(Error::param("env.episode_len", "must be >= 1"));
        }
        if self.inner_steps == 0 {
            return Err(Error::param("env.inner_steps", "must be >= 1"));
        }
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        if self.planar {
            1
        } else {
            2
        }
    }

    /// Energy of the target configuration at rest.
    pub fn target_energy(&self, params: &ModelParams) -> f64 {
        params.mass * params.g * params.cable_length * (1.0 - self.target_alpha.cos())
    }

    pub fn in_success_set(&self, state: &SimState) -> bool {
        (state.alpha - self.target_alpha).abs() < self.angle_tol
            && state.alpha_dot.abs() < self.rate_tol
            && state.beta_dot.abs() < self.rate_tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub sim: SimState,
    pub reference: TaskReference,
    /// Last clamped action, padded to two components.
    pub last_action: [f64; 2],
    pub steps: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepInfo {
    pub success: bool,
    pub failure: bool,
    pub energy: f64,
    pub saturated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// One physics-rate sample, used for trajectory logging.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub state: SimState,
    pub reference: TaskReference,
    pub thrust: Vec<f64>,
    pub achieved: Wrench,
    pub reward: f64,
    pub saturated: bool,
}

pub fn observe(params: &ModelParams, state: &EnvState) -> Observation {
    let s = &state.sim;
    let w0 = params.swing_frequency();
    let q_e = crate::control::attitude_error(&s.q_wb, state.reference.yaw_ref);
    let (sa, ca) = s.alpha.sin_cos();
    let (sb, cb) = s.beta.sin_cos();
    [
        sa,
        ca,
        sb,
        cb,
        s.alpha_dot / w0,
        s.beta_dot / w0,
        q_e.i,
        q_e.j,
        q_e.k,
        s.omega.x / w0,
        s.omega.y / w0,
        s.omega.z / w0,
        state.last_action[0],
    ]
}

pub fn reward(config: &EnvConfig, params: &ModelParams, state: &SimState, action: &[f64]) -> f64 {
    let angle = (state.alpha - config.target_alpha).powi(2);
    let rate = (state.alpha_dot.powi(2) + state.beta_dot.powi(2)) * params.cable_length / params.g;
    let effort: f64 = action.iter().map(|a| a * a).sum();
    let e_star = config.target_energy(params);
    let mgl = params.mass * params.g * params.cable_length;
    // A target at the bottom has E* = 0; fall back to the natural energy scale.
    let scale = if e_star > 1e-9 * mgl { e_star } else { mgl };
    let energy = ((model::total_energy(params, state) - e_star) / scale).powi(2);
    let bonus = if config.in_success_set(state) {
        config.success_bonus
    } else {
        0.0
    };
    -config.w_angle * angle - config.w_rate * rate - config.w_action * effort - config.w_energy * energy + bonus
}

/// Sample an initial state and matching reference.
pub fn reset(config: &EnvConfig, params: &ModelParams, seed: u64) -> (EnvState, Observation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.reset_std).expect("reset_std validated");
    let alpha = normal.sample(&mut rng);
    let beta = if config.planar { 0.0 } else { normal.sample(&mut rng) };
    let sim = SimState::swing(alpha, beta, 0.0, 0.0);
    let state = EnvState {
        sim,
        reference: TaskReference::hold(&sim),
        last_action: [0.0; 2],
        steps: 0,
        done: false,
    };
    let obs = observe(params, &state);
    (state, obs)
}

fn clamped_action(config: &EnvConfig, action: &[f64]) -> [f64; 2] {
    let mut a = [0.0; 2];
    for (dst, src) in a.iter_mut().zip(action.iter().take(config.action_dim())) {
        // NaN maps to zero rather than poisoning the reference.
        *dst = if src.is_nan() { 0.0 } else { src.clamp(-1.0, 1.0) };
    }
    a
}

/// Move the reference by one clamped increment.
pub fn apply_action(config: &EnvConfig, params: &ModelParams, state: &mut EnvState, action: &[f64]) -> TaskReference {
    let a = clamped_action(config, action);
    let rate_scale = config.action_scale / (config.inner_steps as f64 * params.dt);
    let beta_max = 0.9 * params.beta_limit;
    let r = &mut state.reference;
    r.alpha_ref = (r.alpha_ref + a[0] * config.action_scale).clamp(-std::f64::consts::PI, std::f64::consts::PI);
    r.beta_ref = (r.beta_ref + a[1] * config.action_scale).clamp(-beta_max, beta_max);
    r.alpha_dot_ref = a[0] * rate_scale;
    r.beta_dot_ref = a[1] * rate_scale;
    r.yaw_ref = 0.0;
    state.last_action = a;
    *r
}

/// Environment instance: configuration, plant and controller.
#[derive(Debug, Clone)]
pub struct SwingEnv {
    config: EnvConfig,
    controller: Controller,
    state: EnvState,
}

impl SwingEnv {
    pub fn new(config: &EnvConfig, params: &ModelParams, gains: &Gains) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let controller = Controller::new(params, gains)?;
        let (state, _) = reset(config, params, 0);
        Ok(Self {
            config: config.clone(),
            controller,
            state,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        self.controller.params()
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Replace the current state, e.g. to start from a scripted configuration.
    pub fn set_state(&mut self, state: EnvState) {
        self.state = state;
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        let (state, obs) = reset(&self.config, self.controller.params(), seed);
        self.state = state;
        obs
    }

    pub fn observe(&self) -> Observation {
        observe(self.controller.params(), &self.state)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.step_logged(action, None)
    }

    /// Step and optionally append one row per physics step to `log`.
    pub fn step_logged(&mut self, action: &[f64], mut log: Option<&mut Vec<TrajectoryRow>>) -> Result<StepResult> {
        if self.state.done {
            return Err(Error::EpisodeFinished);
        }
        let params = self.controller.params().clone();
        let a = clamped_action(&self.config, action);
        let a_used = &a[..self.config.action_dim()];
        apply_action(&self.config, &params, &mut self.state, action);

        let k = self.config.inner_steps;
        let mut saturated_steps = 0usize;
        let mut held = true;
        let mut failure = false;
        for _ in 0..k {
            match self.physics_step(&params) {
                Ok((next, report)) => {
                    self.state.sim = next;
                    saturated_steps += usize::from(report.saturated);
                    held &= self.config.in_success_set(&next);
                    if let Some(rows) = log.as_deref_mut() {
                        rows.push(TrajectoryRow {
                            state: next,
                            reference: self.state.reference,
                            thrust: report.command.u,
                            achieved: report.achieved,
                            reward: reward(&self.config, &params, &next, a_used),
                            saturated: report.saturated,
                        });
                    }
                    if next.beta.abs() >= params.beta_limit {
                        failure = true;
                        break;
                    }
                }
                Err(Error::NonFinite(_)) | Err(Error::ChartSingularity { .. }) => {
                    failure = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        self.state.steps += 1;
        let success = !failure && held;
        let truncated = !failure && !success && self.state.steps >= self.config.episode_len;
        let done = failure || success || truncated;
        self.state.done = done;

        let sim = &self.state.sim;
        Ok(StepResult {
            obs: observe(&params, &self.state),
            reward: reward(&self.config, &params, sim, a_used),
            done,
            truncated,
            info: StepInfo {
                success,
                failure,
                energy: model::total_energy(&params, sim),
                saturated_fraction: saturated_steps as f64 / k as f64,
            },
        })
    }

    fn physics_step(&self, params: &ModelParams) -> Result<(SimState, crate::control::AllocationReport)> {
        let report = self.controller.step(&self.state.sim, &self.state.reference)?;
        let mut next = model::step_rk4(params, &self.state.sim, &report.command.u)?;
        if self.config.planar {
            next.beta = 0.0;
            next.beta_dot = 0.0;
        }
        Ok((next, report))
    }
}
