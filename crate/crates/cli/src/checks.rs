//! Self-checks behind `swingup check`, each comparing a production code
//! path against an independent oracle.

use nalgebra::{DMatrix, Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use swingup::control::{Allocator, Gains};
use swingup::learn::buffer::{gae, RolloutBuffer};
use swingup::learn::policy::ActorCritic;
use swingup::learn::ppo::{ppo_loss, LossCoefs, Minibatch};
use swingup::model::{self, ModelParams, SimState, Wrench};
use swingup::oracle;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::sim::{self, Script};

pub const CHECK_NAMES: [&str; 7] = ["energy", "period", "allocation", "gradient", "gae", "damping", "pump"];

/// One measured quantity compared against a limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub label: String,
    pub value: f64,
    /// `"<"` or `">"`: the relation `value` must have to `limit`.
    pub relation: &'static str,
    pub limit: f64,
    pub passed: bool,
}

impl Measurement {
    pub fn below(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            value,
            relation: "<",
            limit,
            passed: value < limit,
        }
    }

    pub fn above(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            value,
            relation: ">",
            limit,
            passed: value > limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measurements: Vec<Measurement>,
    /// Set when the check could not run to completion.
    pub error: Option<String>,
}

impl CheckResult {
    fn from_measurements(name: &str, measurements: Vec<Measurement>) -> Self {
        Self {
            name: name.to_string(),
            passed: !measurements.is_empty() && measurements.iter().all(|m| m.passed),
            measurements,
            error: None,
        }
    }

    fn failed(name: &str, error: String) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            measurements: Vec::new(),
            error: Some(error),
        }
    }
}

pub fn run_check(name: &str, config: &RunConfig) -> Result<CheckResult, CliError> {
    let seed = config.seed;
    let out = match name {
        "energy" => energy(&config.model, 10.0),
        "period" => period(&config.model),
        "allocation" => allocation(&config.model, 1000, seed),
        "gradient" => gradient(5, 32, seed),
        "gae" => gae_equivalence(100, 50, seed),
        "damping" => damping(config),
        "pump" => pump(config),
        other => {
            return Err(CliError::Usage(format!(
                "unknown check `{other}` (expected one of {})",
                CHECK_NAMES.join(", ")
            )))
        }
    };
    Ok(out.unwrap_or_else(|e| CheckResult::failed(name, e.to_string())))
}

fn zero_thrust(params: &ModelParams) -> Vec<f64> {
    vec![0.0; params.rotors.len()]
}

fn unactuated(params: &ModelParams, initial: SimState, duration: f64) -> Result<Vec<SimState>, CliError> {
    let steps = (duration / params.dt).round() as usize;
    let u = zero_thrust(params);
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = initial;
    out.push(s);
    for _ in 0..steps {
        s = model::step_rk4(params, &s, &u)?;
        out.push(s);
    }
    Ok(out)
}

/// Unactuated 3-D swing with a tumbling body: RK4 drift below 1e-6 of the
/// energy scale, and strictly below an explicit Euler run of the same step.
pub fn energy(params: &ModelParams, duration: f64) -> Result<CheckResult, CliError> {
    let mut initial = SimState::swing(1.0, 0.3, 0.0, 0.4);
    initial.omega = Vector3::new(0.3, -0.2, 0.5);
    let rk4 = oracle::energy_audit(params, &unactuated(params, initial, duration)?);
    let steps = (duration / params.dt).round() as usize;
    let euler = oracle::energy_audit(params, &oracle::euler_unactuated(params, &initial, params.dt, steps));
    Ok(CheckResult::from_measurements(
        "energy",
        vec![
            Measurement::below("rk4_relative_drift", rk4, 1e-6),
            Measurement::above("euler_relative_drift", euler, rk4),
        ],
    ))
}

/// Mean period between successive maxima of a planar unactuated swing,
/// located where `alpha_dot` crosses zero downwards.
pub fn simulated_period(params: &ModelParams, amplitude: f64, periods: f64) -> Result<f64, CliError> {
    let expected = oracle::planar_period(params.g, params.cable_length, amplitude)?;
    let traj = unactuated(params, SimState::swing(amplitude, 0.0, 0.0, 0.0), periods * expected)?;
    let mut maxima = Vec::new();
    for w in traj.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.alpha_dot > 0.0 && b.alpha_dot <= 0.0 {
            let frac = a.alpha_dot / (a.alpha_dot - b.alpha_dot);
            maxima.push(a.t + frac * (b.t - a.t));
        }
    }
    if maxima.len() < 2 {
        return Err(CliError::Usage("period check saw fewer than two swings".into()));
    }
    Ok((maxima[maxima.len() - 1] - maxima[0]) / (maxima.len() - 1) as f64)
}

pub fn period(params: &ModelParams) -> Result<CheckResult, CliError> {
    let small = simulated_period(params, 0.01, 4.5)?;
    let linear = 2.0 * std::f64::consts::PI * (params.cable_length / params.g).sqrt();
    let large = simulated_period(params, 2.0, 4.5)?;
    let exact = oracle::planar_period(params.g, params.cable_length, 2.0)?;
    Ok(CheckResult::from_measurements(
        "period",
        vec![
            Measurement::below("small_angle_relative_error", (small - linear).abs() / linear, 1e-3),
            Measurement::below("large_angle_relative_error", (large - exact).abs() / exact, 5e-3),
        ],
    ))
}

/// Wrenches produced by random interior thrusts must be reproduced by the
/// allocator; the zero wrench must map to zero thrust.
pub fn allocation(params: &ModelParams, samples: usize, seed: u64) -> Result<CheckResult, CliError> {
    let alloc = Allocator::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA110C);
    let level = Quaternion::identity();
    let mut worst: f64 = 0.0;
    let mut saturated = 0usize;
    for _ in 0..samples {
        let u: Vec<f64> = params
            .rotors
            .iter()
            .map(|r| rng.random_range(0.25..0.75) * r.u_max)
            .collect();
        let w = model::rotor_wrench(params, &level, &u)?;
        let report = alloc.allocate(&level, &w)?;
        saturated += usize::from(report.saturated);
        let back = model::rotor_wrench(params, &level, &report.command.u)?;
        let err = ((back.force - w.force).norm_squared() + (back.torque - w.torque).norm_squared()).sqrt();
        worst = worst.max(err);
    }
    let zero = alloc.allocate(&level, &Wrench::zero())?;
    let zero_norm = zero.command.u.iter().map(|u| u * u).sum::<f64>().sqrt();
    Ok(CheckResult::from_measurements(
        "allocation",
        vec![
            Measurement::below("max_residual", worst, 1e-6),
            Measurement::below("saturated_samples", saturated as f64, 0.5),
            Measurement::below("zero_wrench_thrust_norm", zero_norm, 1e-12),
        ],
    ))
}

/// Random actor-critic and minibatch. Old log-probabilities sit within
/// +-0.3 of the current ones so both clip branches occur.
pub fn random_problem(rng: &mut ChaCha8Rng, batch: usize) -> Result<(ActorCritic, Minibatch), CliError> {
    let obs_dim = swingup::env::OBS_DIM;
    let mut ac = ActorCritic::new(obs_dim, &[16, 16], 2, rng);
    for ls in ac.policy.log_std.iter_mut() {
        *ls = rng.random_range(-1.0..0.0);
    }
    let last = ac.policy.mean.layers.len() - 1;
    // Larger output weights than the near-zero init so the mean path matters.
    for w in ac.policy.mean.layers[last].weight.iter_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    let obs = DMatrix::from_fn(obs_dim, batch, |_, _| rng.random_range(-1.0..1.0));
    let actions = DMatrix::from_fn(2, batch, |_, _| rng.random_range(-1.5..1.5));
    let mut old = Vec::with_capacity(batch);
    for j in 0..batch {
        let o: Vec<f64> = obs.column(j).iter().copied().collect();
        let a: Vec<f64> = actions.column(j).iter().copied().collect();
        old.push(ac.policy.log_prob(&o, &a)? + rng.random_range(-0.3..0.3));
    }
    let mb = Minibatch {
        obs,
        actions,
        old_log_probs: old,
        advantages: (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect(),
        returns: (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect(),
    };
    Ok((ac, mb))
}

/// Worst per-tensor relative error between analytic and central-difference
/// gradients over `batches` random problems.
pub fn gradient_errors(batches: usize, batch: usize, seed: u64) -> Result<Vec<(String, f64)>, CliError> {
    let coefs = LossCoefs {
        clip_eps: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AAD);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for _ in 0..batches {
        let (ac, mb) = random_problem(&mut rng, batch)?;
        let (_, grads) = ppo_loss(&ac, &mb, &coefs)?;
        let names = ac.tensor_names();
        if worst.is_empty() {
            worst = names.iter().map(|n| (n.clone(), 0.0)).collect();
        }
        let analytic = grads.tensors();
        for (k, x) in ac.tensors().iter().enumerate() {
            let mut probe = ac.clone();
            let fd = oracle::finite_diff_gradient(
                |v| {
                    probe.tensors_mut()[k].copy_from_slice(v);
                    ppo_loss(&probe, &mb, &coefs).map(|r| r.0.total).unwrap_or(f64::NAN)
                },
                x,
                1e-5,
            );
            let diff: f64 = analytic[k].iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = analytic[k]
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(fd.iter().map(|b| b * b).sum::<f64>().sqrt())
                .max(1e-10);
            let rel = diff / scale;
            worst[k].1 = if rel.is_nan() { f64::INFINITY } else { worst[k].1.max(rel) };
        }
    }
    Ok(worst)
}

pub fn gradient(batches: usize, batch: usize, seed: u64) -> Result<CheckResult, CliError> {
    let errors = gradient_errors(batches, batch, seed)?;
    Ok(CheckResult::from_measurements(
        "gradient",
        errors
            .into_iter()
            .map(|(name, e)| Measurement::below(format!("{name}.relative_error"), e, 1e-4))
            .collect(),
    ))
}

pub fn gae_equivalence(buffers: usize, steps: usize, seed: u64) -> Result<CheckResult, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AE);
    let mut worst: f64 = 0.0;
    for _ in 0..buffers {
        let mut b = RolloutBuffer::new(steps, 1, 1, 1);
        for i in 0..steps {
            b.rewards[i] = rng.random_range(-1.0..1.0);
            b.values[i] = rng.random_range(-1.0..1.0);
            b.dones[i] = rng.random_bool(0.1);
        }
        b.bootstrap[0] = rng.random_range(-1.0..1.0);
        let gamma = rng.random_range(0.9..1.0);
        let lambda = rng.random_range(0.8..1.0);
        let (adv, _) = gae(&b, gamma, lambda);
        let brute = oracle::brute_force_returns(&b.rewards, &b.values, &b.dones, b.bootstrap[0], gamma, lambda);
        for (a, c) in adv.iter().zip(&brute) {
            worst = worst.max((a - c).abs());
        }
    }
    Ok(CheckResult::from_measurements(
        "gae",
        vec![Measurement::below("max_abs_difference", worst, 1e-10)],
    ))
}

/// Logarithmic decrement of the linearized closed loop
/// `alpha'' = -(kp + g/L) alpha - kd alpha'`.
pub fn design_log_decrement(params: &ModelParams, gains: &Gains) -> f64 {
    let zeta = gains.swing_damping_ratio(params);
    2.0 * std::f64::consts::PI * zeta / (1.0 - zeta * zeta).sqrt()
}

/// Release from a 20 degree planar swing with the rest reference.
pub fn damping(config: &RunConfig) -> Result<CheckResult, CliError> {
    let alpha0 = 20f64.to_radians();
    let rows = sim::run_sim(config, &Script::Hold { alpha: 0.0 }, SimState::swing(alpha0, 0.0, 0.0, 0.0), 20.0)?;
    let one_degree = 1f64.to_radians();
    let last_large = rows
        .iter()
        .filter(|r| r.state.alpha.abs() >= one_degree)
        .map(|r| r.state.t)
        .fold(0.0, f64::max);
    // First extremum after release, on the opposite side.
    let first = rows
        .windows(2)
        .find(|w| w[0].state.alpha_dot < 0.0 && w[1].state.alpha_dot >= 0.0)
        .map(|w| w[0].state.alpha.abs());
    let design = design_log_decrement(&config.model, &config.gains);
    let mut m = vec![Measurement::below("last_time_above_1deg_s", last_large, 15.0)];
    match first {
        Some(x1) if x1 > 0.0 => {
            let measured = 2.0 * (alpha0 / x1).ln();
            m.push(Measurement::below(
                "log_decrement_relative_error",
                (measured - design).abs() / design,
                0.2,
            ));
        }
        _ => m.push(Measurement::below("log_decrement_relative_error", f64::INFINITY, 0.2)),
    }
    Ok(CheckResult::from_measurements("damping", m))
}

/// Pump script from rest for 10 s: turning-point energies strictly increase.
pub fn pump(config: &RunConfig) -> Result<CheckResult, CliError> {
    let rows = sim::run_sim(config, &Script::Pump { amp: sim::DEFAULT_PUMP_AMPLITUDE }, SimState::rest(), 10.0)?;
    let peaks = sim::turning_point_energies(config, &rows);
    let decreases = peaks.windows(2).filter(|w| w[1] <= w[0]).count();
    Ok(CheckResult::from_measurements(
        "pump",
        vec![
            Measurement::below("envelope_decreases", decreases as f64, 0.5),
            Measurement::above("turning_points", peaks.len() as f64, 3.5),
        ],
    ))
}

