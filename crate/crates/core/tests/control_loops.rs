use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swingup::control::{
    allocation_matrix, attitude_error, swing_outer_loop, Allocator, Controller, Gains, TaskReference,
};
use swingup::model::{cable_direction, rotor_wrench, step_rk4, ModelParams, SimState, Wrench};

fn random_state(rng: &mut ChaCha8Rng) -> SimState {
    let mut s = SimState::swing(
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.3..1.3),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    );
    s.q_wb = UnitQuaternion::from_euler_angles(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-3.0..3.0),
    )
    .into_inner();
    s
}

#[test]
fn outer_loop_force_orthogonal_to_cable() {
    let p = ModelParams::default();
    let g = Gains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let s = random_state(&mut rng);
        let r = TaskReference {
            alpha_ref: rng.random_range(-3.0..3.0),
            beta_ref: rng.random_range(-1.0..1.0),
            alpha_dot_ref: rng.random_range(-1.0..1.0),
            beta_dot_ref: rng.random_range(-1.0..1.0),
            yaw_ref: 0.0,
        };
        let f = swing_outer_loop(&p, &g, &s, &r).unwrap();
        assert!(f.dot(&cable_direction(s.alpha, s.beta)).abs() < 1e-10 * f.norm().max(1.0));
    }
}

#[test]
fn allocation_round_trip_over_random_interior_wrenches() {
    let p = ModelParams::default();
    let alloc = Allocator::new(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let q = random_state(&mut rng).q_wb;
        let u: Vec<f64> = p.rotors.iter().map(|r| rng.random_range(0.25..0.75) * r.u_max).collect();
        let w = rotor_wrench(&p, &q, &u).unwrap();
        let report = alloc.allocate(&q, &w).unwrap();
        assert!(!report.saturated);
        assert!(report.residual < 1e-6, "residual {}", report.residual);
        let back = rotor_wrench(&p, &q, &report.command.u).unwrap();
        assert!((back.force - w.force).norm() + (back.torque - w.torque).norm() < 1e-6);
    }
}

#[test]
fn allocation_matrix_matches_rotor_wrench_columns() {
    let p = ModelParams::default();
    let b = allocation_matrix(&p).unwrap();
    for i in 0..p.rotors.len() {
        let mut u = vec![0.0; p.rotors.len()];
        u[i] = 1.0;
        let w = rotor_wrench(&p, &Quaternion::identity(), &u).unwrap();
        for k in 0..3 {
            assert!((b[(k, i)] - w.force[k]).abs() < 1e-14);
            assert!((b[(k + 3, i)] - w.torque[k]).abs() < 1e-14);
        }
    }
}

#[test]
fn saturation_keeps_thrust_in_bounds() {
    let p = ModelParams::default();
    let alloc = Allocator::new(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..600 {
        let scale = 10f64.powi(k % 7);
        let w = Wrench {
            force: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * scale,
            torque: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * scale,
        };
        let report = alloc.allocate(&Quaternion::identity(), &w).unwrap();
        for (u, r) in report.command.u.iter().zip(&p.rotors) {
            assert!(u.is_finite() && *u >= 0.0 && *u <= r.u_max);
        }
        assert!(report.achieved.is_finite());
    }
}

/// `V = 2 kp (1 - |q_e,w|) + 1/2 w^T J w` must not increase under the
/// attitude loop while the swing is held at rest.
#[test]
fn attitude_lyapunov_decreases() {
    let p = ModelParams::default();
    let g = Gains::default();
    let c = Controller::new(&p, &g).unwrap();
    let j = p.inertia();
    let lyap = |s: &SimState| {
        let qe = attitude_error(&s.q_wb, 0.0);
        2.0 * g.kp_att * (1.0 - qe.w.abs()) + 0.5 * s.omega.dot(&(j * s.omega))
    };
    let mut s = SimState::rest();
    s.q_wb = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.6).into_inner();
    s.omega = Vector3::new(0.2, 0.1, -0.3);
    let mut v = lyap(&s);
    let v0 = v;
    for _ in 0..2500 {
        let report = c.step(&s, &TaskReference::hold(&SimState::rest())).unwrap();
        assert!(!report.saturated);
        s = step_rk4(&p, &s, &report.command.u).unwrap();
        let next = lyap(&s);
        assert!(next <= v + 1e-9, "V rose from {v} to {next} at t = {}", s.t);
        v = next;
    }
    assert!(v < 1e-3 * v0);
}

#[test]
fn closed_loop_swing_damping() {
    let p = ModelParams::default();
    let g = Gains::default();
    let c = Controller::new(&p, &g).unwrap();
    let a0 = 20f64.to_radians();
    let mut s = SimState::swing(a0, 0.0, 0.0, 0.0);
    let rest = TaskReference::hold(&SimState::rest());
    let mut first_min = None;
    let mut last_large = 0.0;
    for _ in 0..(15.0 / p.dt) as usize {
        let prev = s;
        s = step_rk4(&p, &s, &c.step(&s, &rest).unwrap().command.u).unwrap();
        if first_min.is_none() && prev.alpha_dot < 0.0 && s.alpha_dot >= 0.0 {
            first_min = Some(prev.alpha.abs());
        }
        if s.alpha.abs() >= 1f64.to_radians() {
            last_large = s.t;
        }
    }
    assert!(last_large < 15.0);
    let zeta = g.swing_damping_ratio(&p);
    let design = 2.0 * std::f64::consts::PI * zeta / (1.0 - zeta * zeta).sqrt();
    let measured = 2.0 * (a0 / first_min.unwrap()).ln();
    assert!((measured - design).abs() / design < 0.2, "{measured} vs {design}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn error_quaternion_is_shortest(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, yaw in -3.0f64..3.0) {
        let q = Quaternion::new(w, x, y, z);
        prop_assume!(q.norm() > 0.1);
        let qe = attitude_error(&q.normalize(), yaw);
        prop_assert!(qe.w >= 0.0);
        prop_assert!((qe.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hold_reference_gives_zero_swing_force(a in -3.0f64..3.0, b in -1.3f64..1.3) {
        let s = SimState::swing(a, b, 0.0, 0.0);
        let f = swing_outer_loop(&ModelParams::default(), &Gains::default(), &s, &TaskReference::hold(&s)).unwrap();
        prop_assert_eq!(f, Vector3::zeros());
    }
}
