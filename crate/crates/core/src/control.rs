//! Hierarchical swing controller.
//!
//! The outer loop turns a swing-angle reference into a desired world force
//! tangent to the cable, the inner loop keeps the platform level at the
//! commanded heading, and the allocator maps the resulting wrench onto
//! bounded rotor thrusts.

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelParams, SimState, Wrench};

/// Tikhonov damping of the least-squares allocation.
pub const ALLOCATION_DAMPING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskReference {
    pub alpha_ref: f64,
    pub beta_ref: f64,
    pub alpha_dot_ref: f64,
    pub beta_dot_ref: f64,
    pub yaw_ref: f64,
}

impl TaskReference {
    /// Reference that holds the given state's swing angles, zero rates.
    pub fn hold(state: &SimState) -> Self {
        Self {
            alpha_ref: state.alpha,
            beta_ref: state.beta,
            ..Self::default()
        }
    }

    pub fn validate(&self, beta_limit: f64) -> Result<()> {
        let all = [self.alpha_ref, self.beta_ref, self.alpha_dot_ref, self.beta_dot_ref, self.yaw_ref];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("task reference"));
        }
        if self.beta_ref.abs() >= beta_limit {
            return Err(Error::param("reference.beta_ref", format!("|{}| >= {beta_limit}", self.beta_ref)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gains {
    /// Swing stiffness (1/s^2).
    pub kp_sw: f64,
    /// Swing damping (1/s).
    pub kd_sw: f64,
    /// Attitude stiffness (N m / rad).
    pub kp_att: f64,
    /// Attitude damping (N m s / rad).
    pub kd_att: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp_sw: 6.0,
            kd_sw: 4.0,
            kp_att: 10.0,
            kd_att: 2.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gains.kp_sw", self.kp_sw),
            ("gains.kd_sw", self.kd_sw),
            ("gains.kp_att", self.kp_att),
            ("gains.kd_att", self.kd_att),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.kp_att > 0.0 && self.kd_att <= 0.0 {
            return Err(Error::param("gains.kd_att", "attitude loop needs damping when kp_att > 0"));
        }
        Ok(())
    }

    /// Damping ratio of the swing loop linearised about the hanging
    /// equilibrium, where gravity adds `g/L` to the loop stiffness.
    pub fn swing_damping_ratio(&self, params: &ModelParams) -> f64 {
        let omega_n = (self.kp_sw + params.g / params.cable_length).sqrt();
        self.kd_sw / (2.0 * omega_n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotorCommand {
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationReport {
    pub command: RotorCommand,
    /// Wrench the clamped thrusts actually produce (world force, body torque).
    pub achieved: Wrench,
    pub saturated: bool,
    /// `|B u - w_des|` in the body frame.
    pub residual: f64,
}

/// Outer loop: PD on the swing angles, mapped to a world force.
///
/// The PD output is a desired generalized acceleration `v`. Since the swing
/// mass matrix is `m Jac^T Jac`, the force `m Jac v` produces exactly
/// `M^-1 Jac^T F = v` and has no component along the cable.
pub fn swing_outer_loop(params: &ModelParams, gains: &Gains, state: &SimState, reference: &TaskReference) -> Result<Vector3<f64>> {
    if state.beta.abs() >= std::f64::consts::FRAC_PI_2 - 1e-9 {
        return Err(Error::ChartSingularity { beta: state.beta });
    }
    let angle_err = nalgebra::Vector2::new(reference.alpha_ref - state.alpha, reference.beta_ref - state.beta);
    let rate_err = nalgebra::Vector2::new(reference.alpha_dot_ref - state.alpha_dot, reference.beta_dot_ref - state.beta_dot);
    let accel = angle_err * gains.kp_sw + rate_err * gains.kd_sw;
    Ok(model::bob_jacobian(params, state.alpha, state.beta) * accel * params.mass)
}

/// Attitude error relative to a level platform at heading `yaw_ref`, with
/// the scalar part made non-negative (shortest rotation).
pub fn attitude_error(q_wb: &Quaternion<f64>, yaw_ref: f64) -> Quaternion<f64> {
    let q_ref = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw_ref);
    let q_e = q_ref.inverse().into_inner() * q_wb;
    if q_e.w < 0.0 {
        -q_e
    } else {
        q_e
    }
}

/// Inner loop: quaternion PD towards a level attitude at `yaw_ref`.
pub fn attitude_inner_loop(gains: &Gains, q_wb: &Quaternion<f64>, omega: &Vector3<f64>, yaw_ref: f64) -> Vector3<f64> {
    let q_e = attitude_error(q_wb, yaw_ref);
    -q_e.imag() * gains.kp_att - omega * gains.kd_att
}

/// Columns `(a_i; p_i x a_i + kappa_i sigma_i a_i)` without any rank check.
pub fn allocation_columns(params: &ModelParams) -> DMatrix<f64> {
    let n = params.rotors.len();
    let mut b = DMatrix::zeros(6, n);
    for (i, r) in params.rotors.iter().enumerate() {
        b.fixed_view_mut::<3, 1>(0, i).copy_from(&r.axis());
        b.fixed_view_mut::<3, 1>(3, i).copy_from(&r.torque_arm());
    }
    b
}

/// The 6xN body-frame map from thrusts to (force; torque).
pub fn allocation_matrix(params: &ModelParams) -> Result<DMatrix<f64>> {
    let b = allocation_columns(params);
    let rank = b.rank(1e-9 * b.norm().max(1.0));
    if rank < 6 {
        return Err(Error::RankDeficient { rank });
    }
    Ok(b)
}

/// Damped least-squares allocator with a precomputed solve.
///
/// When the rotor set admits a strictly positive internal-force direction
/// (a thrust vector in the null space of `B`), the least-squares solution is
/// shifted along it just enough to make every thrust non-negative before
/// clamping. The shift leaves `B u` unchanged.
#[derive(Debug, Clone)]
pub struct Allocator {
    b: DMatrix<f64>,
    /// `B^T (B B^T + eps I)^-1`.
    solve: DMatrix<f64>,
    internal: Option<DVector<f64>>,
    u_max: DVector<f64>,
    params: ModelParams,
}

impl Allocator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let b = allocation_matrix(params)?;
        let gram = &b * b.transpose() + DMatrix::identity(6, 6) * ALLOCATION_DAMPING;
        let gram_inv = gram
            .try_inverse()
            .ok_or(Error::RankDeficient { rank: 0 })?;
        let solve = b.transpose() * gram_inv;

        let n = params.rotors.len();
        let ones = DVector::from_element(n, 1.0);
        let pinv = b
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::param("model.rotors", e.to_string()))?;
        let internal = &ones - &pinv * (&b * &ones);
        let internal = {
            let max = internal.max();
            (max > 0.0 && internal.min() > 1e-6 * max).then(|| internal / max)
        };

        Ok(Self {
            b,
            solve,
            internal,
            u_max: DVector::from_iterator(n, params.rotors.iter().map(|r| r.u_max)),
            params: params.clone(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn has_internal_force(&self) -> bool {
        self.internal.is_some()
    }

    /// Thrusts before clamping. Inside the feasible set this is the exact
    /// allocation; it is what the clamped result is compared against.
    pub fn unclamped(&self, w_body: &Vector6<f64>) -> DVector<f64> {
        let w = DVector::from_column_slice(w_body.as_slice());
        let mut u = &self.solve * &w;
        // One refinement pass removes the bias introduced by the damping.
        let r = &w - &self.b * &u;
        u += &self.solve * r;
        if let Some(n) = &self.internal {
            let shift = u
                .iter()
                .zip(n.iter())
                .map(|(ui, ni)| -ui / ni)
                .fold(0.0_f64, f64::max);
            if shift > 0.0 {
                u.axpy(shift, n, 1.0);
            }
        }
        u
    }

    /// Allocate a desired wrench (force in world frame, torque in body frame).
    pub fn allocate(&self, q_wb: &Quaternion<f64>, wrench_des: &Wrench) -> Result<AllocationReport> {
        if !wrench_des.is_finite() || q_wb.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("allocation input"));
        }
        let attitude = UnitQuaternion::new_normalize(*q_wb);
        let f_body = attitude.inverse() * wrench_des.force;
        let w_body = Vector6::new(
            f_body.x,
            f_body.y,
            f_body.z,
            wrench_des.torque.x,
            wrench_des.torque.y,
            wrench_des.torque.z,
        );

        let raw = self.unclamped(&w_body);
        let mut saturated = false;
        let u: Vec<f64> = raw
            .iter()
            .zip(self.u_max.iter())
            .map(|(&ui, &max)| {
                let c = ui.clamp(0.0, max);
                saturated |= c != ui;
                c
            })
            .collect();

        let bu = &self.b * DVector::from_column_slice(&u);
        let residual = (bu - DVector::from_column_slice(w_body.as_slice())).norm();
        let achieved = model::rotor_wrench(&self.params, q_wb, &u)?;
        Ok(AllocationReport {
            command: RotorCommand { u },
            achieved,
            saturated,
            residual,
        })
    }
}

/// One-shot allocation; builds the allocator on every call.
pub fn allocate(params: &ModelParams, q_wb: &Quaternion<f64>, wrench_des: &Wrench) -> Result<AllocationReport> {
    Allocator::new(params)?.allocate(q_wb, wrench_des)
}

/// Outer loop, inner loop and allocator bundled for repeated use.
#[derive(Debug, Clone)]
pub struct Controller {
    params: ModelParams,
    gains: Gains,
    allocator: Allocator,
}

impl Controller {
    pub fn new(params: &ModelParams, gains: &Gains) -> Result<Self> {
        gains.validate()?;
        Ok(Self {
            params: params.clone(),
            gains: *gains,
            allocator: Allocator::new(params)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn gains(&self) -> &Gains {
        &self.gains
    }

    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    pub fn desired_wrench(&self, state: &SimState, reference: &TaskReference) -> Result<Wrench> {
        Ok(Wrench {
            force: swing_outer_loop(&self.params, &self.gains, state, reference)?,
            torque: attitude_inner_loop(&self.gains, &state.q_wb, &state.omega, reference.yaw_ref),
        })
    }

    pub fn step(&self, state: &SimState, reference: &TaskReference) -> Result<AllocationReport> {
        let wrench = self.desired_wrench(state, reference)?;
        self.allocator.allocate(&state.q_wb, &wrench)
    }
}

pub fn controller_step(
    params: &ModelParams,
    gains: &Gains,
    state: &SimState,
    reference: &TaskReference,
) -> Result<(RotorCommand, AllocationReport)> {
    let report = Controller::new(params, gains)?.step(state, reference)?;
    Ok((report.command.clone(), report))
}
