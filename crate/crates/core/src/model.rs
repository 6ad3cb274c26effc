//! Dynamics of a platform hanging from a rigid massless cable.
//!
//! The cable is a rod of length `L` from a fixed anchor at the world origin
//! to the platform centre of mass, jointed so that swing and attitude only
//! couple through the direction of the rotor thrust. Swing is described by
//! two angles on the chart
//!
//! ```text
//! d(alpha, beta) = (sin beta, -sin alpha cos beta, -cos alpha cos beta)
//! ```
//!
//! which is regular for `|beta| < pi/2`. World frame is z-up.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Quaternion, SymmetricEigen, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest physics step accepted by [`ModelParams::validate`].
pub const MAX_DT: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rotor {
    /// Position in the body frame (m).
    pub position: [f64; 3],
    /// Unit thrust axis in the body frame.
    pub axis: [f64; 3],
    /// Drag-to-thrust moment ratio (m).
    pub kappa: f64,
    /// Spin direction, +1 or -1.
    pub spin: i8,
    /// Maximum thrust (N).
    pub u_max: f64,
}

impl Rotor {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.axis)
    }

    /// Body torque produced per newton of thrust.
    pub fn torque_arm(&self) -> Vector3<f64> {
        let a = self.axis();
        self.position().cross(&a) + a * (self.kappa * f64::from(self.spin))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Cable length (m).
    pub cable_length: f64,
    /// Platform mass (kg).
    pub mass: f64,
    /// Body-frame inertia tensor (kg m^2), row-major.
    pub inertia: [[f64; 3]; 3],
    pub rotors: Vec<Rotor>,
    /// Physics step (s).
    pub dt: f64,
    /// Workspace bound on |beta| (rad).
    pub beta_limit: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            cable_length: 2.0,
            mass: 5.0,
            inertia: [[0.4, 0.0, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 0.6]],
            rotors: octagon_layout(0.35, 16.0, 0.01),
            dt: 0.002,
            beta_limit: 1.4,
        }
    }
}

/// Eight rotors on an octagon of radius `radius`, every axis tilted 45 deg
/// off vertical towards the local tangent.
///
/// Vertical sense alternates rotor to rotor (up, down, up, ...) and the
/// tangential sense and spin follow the pattern `+ + - - + + - -`. With this
/// arrangement the eight columns of the allocation matrix sum to zero, so
/// equal thrust on every rotor is a pure internal force and any wrench in
/// the span can be realised with non-negative thrusts.
pub fn octagon_layout(radius: f64, u_max: f64, kappa: f64) -> Vec<Rotor> {
    const PATTERN: [f64; 8] = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
    (0..8)
        .map(|k| {
            let theta = k as f64 * std::f64::consts::FRAC_PI_4;
            let (s, c) = theta.sin_cos();
            let vertical = if k % 2 == 0 { 1.0 } else { -1.0 };
            let tangent = Vector3::new(-s, c, 0.0);
            let axis = (tangent * PATTERN[k] + Vector3::z() * vertical).normalize();
            Rotor {
                position: [radius * c, radius * s, 0.0],
                axis: axis.into(),
                kappa,
                spin: PATTERN[k] as i8,
                u_max,
            }
        })
        .collect()
}

impl ModelParams {
    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }

    /// Natural frequency of small swings, sqrt(g/L).
    pub fn swing_frequency(&self) -> f64 {
        (self.g / self.cable_length).sqrt()
    }

    /// Full validation, including the physics step ceiling.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.dt > MAX_DT {
            return Err(Error::param("model.dt", format!("{} exceeds {MAX_DT}", self.dt)));
        }
        Ok(())
    }

    /// Everything except the `dt` ceiling. The self-check command uses this
    /// so that a deliberately coarse step can be audited rather than refused.
    pub fn validate_structure(&self) -> Result<()> {
        positive("model.g", self.g)?;
        positive("model.cable_length", self.cable_length)?;
        positive("model.mass", self.mass)?;
        positive("model.dt", self.dt)?;
        positive("model.beta_limit", self.beta_limit)?;
        if self.beta_limit >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::param("model.beta_limit", "must be below pi/2"));
        }

        let j = self.inertia();
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("model.inertia", "non-finite entry"));
        }
        if j != j.transpose() {
            return Err(Error::param("model.inertia", "not symmetric"));
        }
        let eig = SymmetricEigen::new(j).eigenvalues;
        if eig.iter().any(|&e| e <= 0.0) {
            return Err(Error::param("model.inertia", "not positive definite"));
        }

        if self.rotors.len() < 6 {
            return Err(Error::param(
                "model.rotors",
                format!("{} rotors cannot span a 6-DoF wrench", self.rotors.len()),
            ));
        }
        for (i, r) in self.rotors.iter().enumerate() {
            let field = |f: &str| format!("model.rotors[{i}].{f}");
            if (r.axis().norm() - 1.0).abs() > 1e-12 {
                return Err(Error::param(field("axis"), "must have unit norm"));
            }
            if r.spin != 1 && r.spin != -1 {
                return Err(Error::param(field("spin"), "must be +1 or -1"));
            }
            positive(&field("u_max"), r.u_max)?;
            if !r.kappa.is_finite() || r.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::param(field("position"), "non-finite entry"));
            }
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite and > 0, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
    /// World-from-body attitude.
    pub q_wb: Quaternion<f64>,
    /// Body angular velocity (rad/s).
    pub omega: Vector3<f64>,
    pub t: f64,
}

impl Default for SimState {
    fn default() -> Self {
        Self::rest()
    }
}

impl SimState {
    /// Hanging straight down, level, motionless.
    pub fn rest() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            alpha_dot: 0.0,
            beta_dot: 0.0,
            q_wb: Quaternion::identity(),
            omega: Vector3::zeros(),
            t: 0.0,
        }
    }

    pub fn swing(alpha: f64, beta: f64, alpha_dot: f64, beta_dot: f64) -> Self {
        Self {
            alpha,
            beta,
            alpha_dot,
            beta_dot,
            ..Self::rest()
        }
    }

    pub fn angles(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.beta)
    }

    pub fn rates(&self) -> Vector2<f64> {
        Vector2::new(self.alpha_dot, self.beta_dot)
    }

    pub fn attitude(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(self.q_wb)
    }

    pub fn is_finite(&self) -> bool {
        [self.alpha, self.beta, self.alpha_dot, self.beta_dot, self.t]
            .iter()
            .chain(self.q_wb.coords.iter())
            .chain(self.omega.iter())
            .all(|v| v.is_finite())
    }

    fn advanced(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            alpha: self.alpha + h * d.alpha_dot,
            beta: self.beta + h * d.beta_dot,
            alpha_dot: self.alpha_dot + h * d.alpha_ddot,
            beta_dot: self.beta_dot + h * d.beta_ddot,
            q_wb: self.q_wb + d.q_dot * h,
            omega: self.omega + d.omega_dot * h,
            t: self.t + h,
        }
    }
}

/// Net actuation: force in the world frame, torque in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub alpha_dot: f64,
    pub beta_dot: f64,
    pub alpha_ddot: f64,
    pub beta_ddot: f64,
    /// Quaternion rate, not projected onto the unit sphere.
    pub q_dot: Quaternion<f64>,
    pub omega_dot: Vector3<f64>,
}

impl StateDerivative {
    fn combine(k: [&StateDerivative; 4]) -> Self {
        let w = |f: fn(&StateDerivative) -> f64| {
            (f(k[0]) + 2.0 * f(k[1]) + 2.0 * f(k[2]) + f(k[3])) / 6.0
        };
        Self {
            alpha_dot: w(|d| d.alpha_dot),
            beta_dot: w(|d| d.beta_dot),
            alpha_ddot: w(|d| d.alpha_ddot),
            beta_ddot: w(|d| d.beta_ddot),
            q_dot: (k[0].q_dot + k[1].q_dot * 2.0 + k[2].q_dot * 2.0 + k[3].q_dot) / 6.0,
            omega_dot: (k[0].omega_dot + k[1].omega_dot * 2.0 + k[2].omega_dot * 2.0 + k[3].omega_dot) / 6.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.alpha_dot, self.beta_dot, self.alpha_ddot, self.beta_ddot]
            .iter()
            .chain(self.q_dot.coords.iter())
            .chain(self.omega_dot.iter())
            .all(|v| v.is_finite())
    }
}

/// Unit vector from the anchor to the platform.
pub fn cable_direction(alpha: f64, beta: f64) -> Vector3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    Vector3::new(sb, -sa * cb, -ca * cb)
}

/// Partial derivatives of [`cable_direction`] with respect to (alpha, beta).
pub fn cable_direction_jacobian(alpha: f64, beta: f64) -> Matrix3x2<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    Matrix3x2::new(
        0.0, cb, //
        -ca * cb, sa * sb, //
        sa * cb, ca * sb,
    )
}

pub fn bob_position(params: &ModelParams, state: &SimState) -> Vector3<f64> {
    cable_direction(state.alpha, state.beta) * params.cable_length
}

/// d(bob_position)/d(alpha, beta).
pub fn bob_jacobian(params: &ModelParams, alpha: f64, beta: f64) -> Matrix3x2<f64> {
    cable_direction_jacobian(alpha, beta) * params.cable_length
}

pub fn bob_velocity(params: &ModelParams, state: &SimState) -> Vector3<f64> {
    bob_jacobian(params, state.alpha, state.beta) * state.rates()
}

/// Swing mass matrix `m Jac^T Jac = m L^2 diag(cos^2 beta, 1)`.
pub fn mass_matrix(params: &ModelParams, beta: f64) -> Result<Matrix2<f64>> {
    check_chart(beta)?;
    let ml2 = params.mass * params.cable_length * params.cable_length;
    let cb = beta.cos();
    Ok(Matrix2::new(ml2 * cb * cb, 0.0, 0.0, ml2))
}

fn check_chart(beta: f64) -> Result<()> {
    if beta.abs() < std::f64::consts::FRAC_PI_2 - 1e-9 {
        Ok(())
    } else {
        Err(Error::ChartSingularity { beta })
    }
}

/// Force (body frame) and torque (body frame) from thrusts, no validation.
pub(crate) fn body_wrench_unchecked(params: &ModelParams, u: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
    params
        .rotors
        .iter()
        .zip(u)
        .fold((Vector3::zeros(), Vector3::zeros()), |(f, t), (r, &ui)| {
            (f + r.axis() * ui, t + r.torque_arm() * ui)
        })
}

pub(crate) fn check_thrusts(params: &ModelParams, u: &[f64]) -> Result<()> {
    if u.len() != params.rotors.len() {
        return Err(Error::ThrustLength {
            expected: params.rotors.len(),
            got: u.len(),
        });
    }
    for (index, (r, &value)) in params.rotors.iter().zip(u).enumerate() {
        if !(0.0..=r.u_max).contains(&value) {
            return Err(Error::ThrustOutOfRange {
                index,
                value,
                max: r.u_max,
            });
        }
    }
    Ok(())
}

/// Wrench produced by thrust vector `u` at attitude `q_wb`.
pub fn rotor_wrench(params: &ModelParams, q_wb: &Quaternion<f64>, u: &[f64]) -> Result<Wrench> {
    check_thrusts(params, u)?;
    let (f_body, torque) = body_wrench_unchecked(params, u);
    Ok(Wrench {
        force: UnitQuaternion::new_normalize(*q_wb) * f_body,
        torque,
    })
}

/// Equations of motion.
///
/// Swing: `M(q) q'' + C(q, q') q' + G(q) = Jac(q)^T F` with `F` applied at
/// the platform. Attitude: `q_wb' = q_wb (x) (0, omega) / 2` and Euler's
/// equation in the body frame.
pub fn eom(params: &ModelParams, state: &SimState, wrench: &Wrench) -> Result<StateDerivative> {
    if !wrench.is_finite() {
        return Err(Error::NonFinite("wrench"));
    }
    check_chart(state.beta)?;

    let (m, l, g) = (params.mass, params.cable_length, params.g);
    let (sa, ca) = state.alpha.sin_cos();
    let (sb, cb) = state.beta.sin_cos();
    let (ad, bd) = (state.alpha_dot, state.beta_dot);

    let generalized = bob_jacobian(params, state.alpha, state.beta).transpose() * wrench.force;
    let ml2 = m * l * l;
    // Coriolis/centrifugal and gravity terms moved to the right-hand side.
    let rhs_alpha = generalized.x + 2.0 * ml2 * cb * sb * ad * bd - m * g * l * sa * cb;
    let rhs_beta = generalized.y - ml2 * cb * sb * ad * ad - m * g * l * ca * sb;

    let j = params.inertia();
    let omega = state.omega;
    let gyro = omega.cross(&(j * omega));
    let omega_dot = j
        .try_inverse()
        .ok_or_else(|| Error::param("model.inertia", "singular"))?
        * (wrench.torque - gyro);

    let d = StateDerivative {
        alpha_dot: ad,
        beta_dot: bd,
        alpha_ddot: rhs_alpha / (ml2 * cb * cb),
        beta_ddot: rhs_beta / ml2,
        q_dot: state.q_wb * Quaternion::from_imag(omega) * 0.5,
        omega_dot,
    };
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::NonFinite("state derivative"))
    }
}

/// One classical Runge-Kutta step of `params.dt` with thrusts held constant.
pub fn step_rk4(params: &ModelParams, state: &SimState, u: &[f64]) -> Result<SimState> {
    check_thrusts(params, u)?;
    step_rk4_with(params, state, u, params.dt)
}

pub(crate) fn step_rk4_with(params: &ModelParams, state: &SimState, u: &[f64], h: f64) -> Result<SimState> {
    let (f_body, torque) = body_wrench_unchecked(params, u);
    // Force is fixed in the body frame; re-rotate at every stage attitude.
    let wrench_at = |s: &SimState| Wrench {
        force: UnitQuaternion::new_normalize(s.q_wb) * f_body,
        torque,
    };

    let k1 = eom(params, state, &wrench_at(state))?;
    let s2 = state.advanced(&k1, 0.5 * h);
    let k2 = eom(params, &s2, &wrench_at(&s2))?;
    let s3 = state.advanced(&k2, 0.5 * h);
    let k3 = eom(params, &s3, &wrench_at(&s3))?;
    let s4 = state.advanced(&k3, h);
    let k4 = eom(params, &s4, &wrench_at(&s4))?;

    let mut next = state.advanced(&StateDerivative::combine([&k1, &k2, &k3, &k4]), h);
    next.q_wb = next.q_wb.normalize();
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NonFinite("integrated state"))
    }
}

/// Kinetic plus potential energy, zero when hanging at rest.
pub fn total_energy(params: &ModelParams, state: &SimState) -> f64 {
    let (m, l) = (params.mass, params.cable_length);
    let cb = state.beta.cos();
    let swing_kinetic = 0.5 * m * l * l * (cb * cb * state.alpha_dot.powi(2) + state.beta_dot.powi(2));
    let spin_kinetic = 0.5 * state.omega.dot(&(params.inertia() * state.omega));
    let z = bob_position(params, state).z;
    swing_kinetic + spin_kinetic + m * params.g * (z + l)
}
