use approx::assert_relative_eq;
use nalgebra::{Quaternion, Vector3};
use proptest::prelude::*;
use swingup::model::{
    self, bob_position, bob_velocity, cable_direction, cable_direction_jacobian, mass_matrix, step_rk4, total_energy,
    ModelParams, SimState,
};
use swingup::oracle;

fn params_with_dt(dt: f64) -> ModelParams {
    ModelParams {
        dt,
        ..ModelParams::default()
    }
}

fn run_unactuated(p: &ModelParams, s0: SimState, duration: f64) -> Vec<SimState> {
    let u = vec![0.0; p.rotors.len()];
    let n = (duration / p.dt).round() as usize;
    let mut out = vec![s0];
    let mut s = s0;
    for _ in 0..n {
        s = step_rk4(p, &s, &u).unwrap();
        out.push(s);
    }
    out
}

#[test]
fn energy_conserved_in_3d() {
    let p = params_with_dt(1e-3);
    let mut s0 = SimState::swing(1.0, 0.2, 0.1, -0.3);
    s0.omega = Vector3::new(0.4, 0.1, -0.6);
    let traj = run_unactuated(&p, s0, 10.0);
    let e0 = total_energy(&p, &s0);
    let drift = traj.iter().map(|s| (total_energy(&p, s) - e0).abs()).fold(0.0, f64::max) / e0;
    assert!(drift < 1e-6, "drift {drift}");
    assert!(oracle::energy_audit(&p, &traj) < 1e-6);
}

#[test]
fn euler_drifts_more_than_rk4() {
    let p = ModelParams::default();
    let s0 = SimState::swing(1.0, 0.3, 0.0, 0.4);
    let rk4 = oracle::energy_audit(&p, &run_unactuated(&p, s0, 5.0));
    let euler = oracle::energy_audit(&p, &oracle::euler_unactuated(&p, &s0, p.dt, 2500));
    assert!(euler > rk4, "euler {euler} rk4 {rk4}");
}

#[test]
fn planar_motion_stays_planar() {
    let p = ModelParams::default();
    let traj = run_unactuated(&p, SimState::swing(1.2, 0.0, 0.5, 0.0), 5.0);
    assert!(traj.iter().all(|s| s.beta == 0.0 && s.beta_dot == 0.0));
    // The bob stays in the y-z plane.
    assert!(traj.iter().all(|s| bob_position(&p, s).x == 0.0));
}

#[test]
fn rk4_is_fourth_order() {
    // Global error at t = 2 s against a fine reference; halving h should
    // shrink it by about 2^4.
    let s0 = SimState::swing(1.5, 0.4, 0.0, 0.6);
    let end = |h: f64| {
        let p = params_with_dt(h);
        *run_unactuated(&p, s0, 2.0).last().unwrap()
    };
    let reference = end(0.005 / 32.0);
    let err = |s: SimState| ((s.alpha - reference.alpha).powi(2) + (s.beta - reference.beta).powi(2)).sqrt();
    let coarse = err(end(0.005));
    let fine = err(end(0.005 / 2.0));
    let ratio = coarse / fine;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn period_matches_elliptic_integral() {
    let p = ModelParams::default();
    for amp in [0.3, 1.0, 2.0, 2.8] {
        let expected = oracle::planar_period(p.g, p.cable_length, amp).unwrap();
        let traj = run_unactuated(&p, SimState::swing(amp, 0.0, 0.0, 0.0), 1.2 * expected);
        // First return to the starting side: alpha_dot crosses zero downwards.
        let t = traj
            .windows(2)
            .find(|w| w[0].alpha_dot > 0.0 && w[1].alpha_dot <= 0.0)
            .map(|w| w[0].t + w[0].alpha_dot / (w[0].alpha_dot - w[1].alpha_dot) * p.dt)
            .unwrap();
        assert!((t - expected).abs() / expected < 1e-4, "amp {amp}: {t} vs {expected}");
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let h = 1e-6;
    for (a, b) in [(0.3, -0.2), (2.0, 1.1), (-1.0, 0.0), (3.0, -1.4)] {
        let j = cable_direction_jacobian(a, b);
        let da = (cable_direction(a + h, b) - cable_direction(a - h, b)) / (2.0 * h);
        let db = (cable_direction(a, b + h) - cable_direction(a, b - h)) / (2.0 * h);
        assert_relative_eq!(j.column(0).into_owned(), da, epsilon = 1e-8);
        assert_relative_eq!(j.column(1).into_owned(), db, epsilon = 1e-8);
    }
}

#[test]
fn kinetic_energy_matches_position_differences() {
    let p = ModelParams::default();
    let s = SimState::swing(0.8, -0.5, 1.3, 0.7);
    let h = 1e-6;
    let at = |dt: f64| {
        let mut q = s;
        q.alpha += s.alpha_dot * dt;
        q.beta += s.beta_dot * dt;
        bob_position(&p, &q)
    };
    let v = (at(h) - at(-h)) / (2.0 * h);
    assert_relative_eq!(v, bob_velocity(&p, &s), max_relative = 1e-6);
    let m = mass_matrix(&p, s.beta).unwrap();
    let qd = s.rates();
    let kinetic = 0.5 * qd.dot(&(m * qd));
    assert_relative_eq!(kinetic, 0.5 * p.mass * v.norm_squared(), max_relative = 1e-6);
}

#[test]
fn chart_singularity_reported() {
    let p = ModelParams::default();
    assert!(mass_matrix(&p, std::f64::consts::FRAC_PI_2).is_err());
    let s = SimState::swing(0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0);
    assert!(step_rk4(&p, &s, &vec![0.0; p.rotors.len()]).is_err());
}

#[test]
fn free_spin_conserves_angular_momentum() {
    let p = ModelParams::default();
    let mut s = SimState::rest();
    s.omega = Vector3::new(0.5, -1.0, 2.0);
    let j = p.inertia();
    let momentum = |s: &SimState| nalgebra::UnitQuaternion::new_normalize(s.q_wb) * (j * s.omega);
    let l0 = momentum(&s);
    for s in run_unactuated(&p, s, 5.0) {
        assert_relative_eq!(momentum(&s), l0, epsilon = 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_symmetric_positive(beta in -1.5f64..1.5) {
        let m = mass_matrix(&ModelParams::default(), beta).unwrap();
        prop_assert_eq!(m[(0, 1)], m[(1, 0)]);
        prop_assert!(m[(0, 0)] > 0.0 && m.determinant() > 0.0);
    }

    #[test]
    fn quaternion_stays_unit(wx in -3.0f64..3.0, wy in -3.0f64..3.0, wz in -3.0f64..3.0, a in -2.0f64..2.0) {
        let p = ModelParams::default();
        let mut s = SimState::swing(a, 0.1, 0.0, 0.0);
        s.omega = Vector3::new(wx, wy, wz);
        s.q_wb = Quaternion::new(0.9, 0.1, -0.3, 0.2).normalize();
        for s in run_unactuated(&p, s, 0.5) {
            prop_assert!((s.q_wb.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cable_direction_is_unit(a in -3.2f64..3.2, b in -1.5f64..1.5) {
        prop_assert!((cable_direction(a, b).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn energy_agrees_with_oracle(a in -3.0f64..3.0, b in -1.4f64..1.4, ad in -3.0f64..3.0, bd in -3.0f64..3.0) {
        let p = ModelParams::default();
        let s = SimState::swing(a, b, ad, bd);
        let e = model::total_energy(&p, &s);
        prop_assert!((oracle::energy(&p, &s) - e).abs() <= 1e-12 * e.abs().max(1.0));
    }
}
