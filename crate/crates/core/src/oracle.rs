//! Independent reference computations.
//!
//! Nothing here shares code with the quantities it checks: the period uses
//! elliptic integrals instead of integration, returns are summed directly
//! instead of recursively, and the energy audit integrates with a separate
//! explicit scheme.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::model::{ModelParams, SimState};

/// Complete elliptic integral of the first kind by the arithmetic-geometric
/// mean, `K(k) = pi / (2 agm(1, sqrt(1 - k^2)))`.
pub fn elliptic_k(k: f64) -> f64 {
    let (mut a, mut b) = (1.0, (1.0 - k * k).sqrt());
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        (a, b) = (0.5 * (a + b), (a * b).sqrt());
    }
    PI / (a + b)
}

/// Exact period of a planar pendulum released from rest at `amplitude`.
pub fn planar_period(g: f64, length: f64, amplitude: f64) -> Result<f64> {
    if !(amplitude > 0.0 && amplitude < PI) {
        return Err(Error::param("amplitude", "must lie in (0, pi)"));
    }
    if !(g > 0.0 && length > 0.0) {
        return Err(Error::param("g, length", "must be positive"));
    }
    Ok(4.0 * (length / g).sqrt() * elliptic_k((0.5 * amplitude).sin()))
}

/// Same period by 200-point midpoint quadrature of
/// `4 sqrt(L/g) int_0^{pi/2} dphi / sqrt(1 - k^2 sin^2 phi)`, the form
/// regularized by `sin(theta/2) = k sin(phi)`.
pub fn planar_period_quadrature(g: f64, length: f64, amplitude: f64) -> f64 {
    const N: usize = 200;
    let k = (0.5 * amplitude).sin();
    let h = FRAC_PI_2 / N as f64;
    let sum: f64 = (0..N)
        .map(|i| {
            let s = ((i as f64 + 0.5) * h).sin();
            1.0 / (1.0 - k * k * s * s).sqrt()
        })
        .sum();
    4.0 * (length / g).sqrt() * sum * h
}

/// Central differences, one coordinate at a time.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// GAE advantages of a single trajectory by direct summation:
/// `A_t = sum_l (gamma lambda)^l delta_{t+l}`, truncated at the first done.
/// `bootstrap` is the value after the last step.
#[allow(clippy::needless_range_loop)]
pub fn brute_force_returns(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let delta = |j: usize| {
        let next = if dones[j] {
            0.0
        } else if j + 1 < n {
            values[j + 1]
        } else {
            bootstrap
        };
        rewards[j] + gamma * next - values[j]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for j in t..n {
                total += (gamma * lambda).powi((j - t) as i32) * delta(j);
                if dones[j] {
                    break;
                }
            }
            total
        })
        .collect()
}

/// Energy from the bob velocity written out component-wise, potential
/// measured from the lowest point.
pub fn energy(params: &ModelParams, s: &SimState) -> f64 {
    let (m, l, g) = (params.mass, params.cable_length, params.g);
    let (sa, ca) = s.alpha.sin_cos();
    let (sb, cb) = s.beta.sin_cos();
    let v = Vector3::new(
        l * cb * s.beta_dot,
        l * (-ca * cb * s.alpha_dot + sa * sb * s.beta_dot),
        l * (sa * cb * s.alpha_dot + ca * sb * s.beta_dot),
    );
    let j = Matrix3::from_fn(|r, c| params.inertia[r][c]);
    0.5 * m * v.norm_squared() + 0.5 * s.omega.dot(&(j * s.omega)) + m * g * l * (1.0 - ca * cb)
}

/// `max_t |E_t - E_0| / max(|E_0|, m g L)`; infinite if any energy is not
/// finite.
pub fn energy_audit(params: &ModelParams, trajectory: &[SimState]) -> f64 {
    let Some(first) = trajectory.first() else {
        return 0.0;
    };
    let e0 = energy(params, first);
    let scale = e0.abs().max(params.mass * params.g * params.cable_length);
    trajectory
        .iter()
        .map(|s| {
            let d = (energy(params, s) - e0).abs() / scale;
            if d.is_finite() {
                d
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Unactuated explicit-Euler run with step `h`, returning every state
/// including the initial one.
pub fn euler_unactuated(params: &ModelParams, initial: &SimState, h: f64, steps: usize) -> Vec<SimState> {
    let (g, l) = (params.g, params.cable_length);
    let j = Matrix3::from_fn(|r, c| params.inertia[r][c]);
    let j_inv = j.try_inverse().unwrap_or_else(Matrix3::zeros);
    let mut s = *initial;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s);
    for _ in 0..steps {
        let (sa, ca) = s.alpha.sin_cos();
        let (sb, cb) = s.beta.sin_cos();
        let alpha_dd = 2.0 * sb / cb * s.alpha_dot * s.beta_dot - g / l * sa / cb;
        let beta_dd = -sb * cb * s.alpha_dot * s.alpha_dot - g / l * ca * sb;
        let omega_dot = j_inv * (-s.omega.cross(&(j * s.omega)));
        let q_dot = s.q_wb * Quaternion::from_parts(0.0, s.omega) * 0.5;

        s.alpha += h * s.alpha_dot;
        s.beta += h * s.beta_dot;
        s.alpha_dot += h * alpha_dd;
        s.beta_dot += h * beta_dd;
        s.q_wb = (s.q_wb + q_dot * h).normalize();
        s.omega += h * omega_dot;
        s.t += h;
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_angle_limit() {
        let t = planar_period(9.81, 2.0, 1e-4).unwrap();
        let t0 = 2.0 * PI * (2.0_f64 / 9.81).sqrt();
        assert!((t - t0).abs() / t0 < 1e-8);
    }

    #[test]
    fn agm_matches_quadrature() {
        for a in [0.1, 0.5, 1.0, FRAC_PI_2, 2.0, 3.0] {
            let agm = planar_period(9.81, 1.0, a).unwrap();
            let quad = planar_period_quadrature(9.81, 1.0, a);
            assert!((agm - quad).abs() < 1e-9, "amplitude {a}: {agm} vs {quad}");
        }
    }

    #[test]
    fn period_increases_and_rejects_range() {
        let mut prev = 0.0;
        for i in 1..100 {
            let t = planar_period(9.81, 1.0, i as f64 * PI / 100.0).unwrap();
            assert!(t > prev);
            prev = t;
        }
        assert!(planar_period(9.81, 1.0, 0.0).is_err());
        assert!(planar_period(9.81, 1.0, PI).is_err());
    }

    #[test]
    fn finite_differences() {
        let g = finite_diff_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_gradient(|x| 3.0 * x[0] - 0.5 * x[1], &[0.3, -7.0], 1e-3);
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn brute_force_examples() {
        let adv = brute_force_returns(&[1.0, -2.0, 0.5, 3.0], &[0.0; 4], &[false; 4], 0.0, 1.0, 1.0);
        assert_eq!(adv, vec![2.5, 1.5, 3.5, 3.0]);
        let adv = brute_force_returns(&[2.0], &[0.7], &[true], 100.0, 0.99, 0.95);
        assert!((adv[0] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn energy_of_constant_trajectory_is_flat() {
        let p = ModelParams::default();
        let s = SimState::swing(0.4, 0.1, 0.0, 0.0);
        assert_eq!(energy_audit(&p, &[s; 5]), 0.0);
        assert_eq!(energy_audit(&p, &[]), 0.0);
    }

    #[test]
    fn energy_matches_model() {
        let p = ModelParams::default();
        let mut s = SimState::swing(0.7, -0.3, 1.1, 0.4);
        s.omega = Vector3::new(0.2, -0.1, 0.5);
        let e = crate::model::total_energy(&p, &s);
        assert!((energy(&p, &s) - e).abs() < 1e-12 * e);
    }

    #[test]
    fn euler_drifts() {
        let p = ModelParams::default();
        let traj = euler_unactuated(&p, &SimState::swing(1.0, 0.2, 0.0, 0.3), 1e-3, 2000);
        assert!(energy_audit(&p, &traj) > 1e-4);
    }
}
