//! Trajectory CSV writer.

use std::fmt::Write as _;
use std::path::Path;

use swingup::env::TrajectoryRow;
use swingup::learn::checkpoint::write_atomic;

use crate::error::CliError;

pub fn header(rotors: usize) -> String {
    let mut cols: Vec<String> = [
        "t", "alpha", "beta", "alpha_dot", "beta_dot", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "alpha_ref", "beta_ref",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..rotors).map(|i| format!("u_{i}")));
    cols.extend(["F_x", "F_y", "F_z", "tau_x", "tau_y", "tau_z", "reward", "saturated"].map(String::from));
    cols.join(",")
}

/// 17 significant digits, enough to round-trip any f64.
fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e},");
}

pub fn render(rows: &[TrajectoryRow], rotors: usize) -> String {
    let mut out = header(rotors);
    out.push('\n');
    for r in rows {
        let s = &r.state;
        let q = &s.q_wb;
        for v in [s.t, s.alpha, s.beta, s.alpha_dot, s.beta_dot, q.w, q.i, q.j, q.k, s.omega.x, s.omega.y, s.omega.z] {
            num(&mut out, v);
        }
        num(&mut out, r.reference.alpha_ref);
        num(&mut out, r.reference.beta_ref);
        for &u in &r.thrust {
            num(&mut out, u);
        }
        for v in r.achieved.force.iter().chain(r.achieved.torque.iter()) {
            num(&mut out, *v);
        }
        num(&mut out, r.reward);
        out.push_str(if r.saturated { "1\n" } else { "0\n" });
    }
    out
}

pub fn write(path: &Path, rows: &[TrajectoryRow], rotors: usize) -> Result<(), CliError> {
    write_atomic(path, render(rows, rotors).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use swingup::control::TaskReference;
    use swingup::model::{SimState, Wrench};

    #[test]
    fn exact_header() {
        assert_eq!(
            header(2),
            "t,alpha,beta,alpha_dot,beta_dot,qw,qx,qy,qz,wx,wy,wz,alpha_ref,beta_ref,u_0,u_1,F_x,F_y,F_z,tau_x,tau_y,tau_z,reward,saturated"
        );
    }

    #[test]
    fn values_round_trip() {
        let mut state = SimState::swing(0.1 + 0.2, -1.0 / 3.0, std::f64::consts::PI, 1e-300);
        state.t = 0.002;
        let row = TrajectoryRow {
            state,
            reference: TaskReference::hold(&state),
            thrust: vec![1.0 / 7.0, 0.0],
            achieved: Wrench::zero(),
            reward: -6.26,
            saturated: true,
        };
        let text = render(&[row], 2);
        let line = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), header(2).split(',').count());
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(fields[2].parse::<f64>().unwrap(), -1.0 / 3.0);
        assert_eq!(fields[14].parse::<f64>().unwrap(), 1.0 / 7.0);
        assert_eq!(*fields.last().unwrap(), "1");
    }
}
