use swingup::control::Gains;
use swingup::env::{reset, EnvConfig, SwingEnv};
use swingup::model::{total_energy, ModelParams};

fn env(cfg: EnvConfig) -> SwingEnv {
    SwingEnv::new(&cfg, &ModelParams::default(), &Gains::default()).unwrap()
}

#[test]
fn reset_statistics() {
    let cfg = EnvConfig::default();
    let p = ModelParams::default();
    let n = 10_000;
    let alphas: Vec<f64> = (0..n).map(|s| reset(&cfg, &p, s).0.sim.alpha).collect();
    let mean = alphas.iter().sum::<f64>() / n as f64;
    let std = (alphas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!(mean.abs() < 3.0 * 0.02 / 100.0, "mean {mean}");
    assert!((std - 0.02).abs() < 0.05 * 0.02, "std {std}");
}

#[test]
fn identical_seed_and_actions_give_identical_rollouts() {
    let run = || {
        let mut e = env(EnvConfig::default());
        e.reset(42);
        (0..60)
            .map(|k| {
                let a = [((k as f64) * 0.37).sin(), ((k as f64) * 0.11).cos()];
                let r = e.step(&a).unwrap();
                (r.obs, r.reward.to_bits())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn rest_is_an_equilibrium() {
    let mut e = env(EnvConfig {
        reset_std: 0.0,
        ..EnvConfig::default()
    });
    let obs0 = e.reset(0);
    let r = e.step(&[0.0, 0.0]).unwrap();
    let diff: f64 = obs0.iter().zip(&r.obs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(diff < 1e-6);
    assert!(!r.done);
}

#[test]
fn observations_stay_bounded_and_time_advances() {
    let mut e = env(EnvConfig::default());
    e.reset(3);
    let p = ModelParams::default();
    let k = EnvConfig::default().inner_steps as f64;
    for step in 1..=400 {
        let a = if e.state().sim.alpha >= 0.0 { [1.0, 0.3] } else { [-1.0, -0.3] };
        let r = e.step(&a).unwrap();
        assert!(r.obs.iter().all(|v| v.is_finite()) || r.info.failure);
        assert!((r.obs[0].powi(2) + r.obs[1].powi(2) - 1.0).abs() < 1e-12);
        assert!((e.state().sim.t - step as f64 * k * p.dt).abs() < 1e-9);
        assert!(r.reward <= EnvConfig::default().success_bonus);
        if r.done {
            assert!(r.info.success || r.info.failure || r.truncated);
            break;
        }
    }
}

/// Bang-bang action switching with the swing's zero crossings
/// (`a = sign(alpha)`): the peak energy in each natural period grows over
/// the first 10 s.
#[test]
fn bang_bang_pumping_grows_energy_envelope() {
    let p = ModelParams::default();
    let period = 2.0 * std::f64::consts::PI / p.swing_frequency();
    for planar in [true, false] {
        let mut e = env(EnvConfig {
            reset_std: 0.0,
            target_alpha: 3.0,
            planar,
            ..EnvConfig::default()
        });
        e.reset(0);
        let full = (10.0 / period) as usize;
        let mut peaks = vec![0.0f64; full];
        while e.state().sim.t < full as f64 * period - 1e-9 {
            let a = if e.state().sim.alpha >= 0.0 { 1.0 } else { -1.0 };
            let action = if planar { vec![a] } else { vec![a, 0.0] };
            let r = e.step(&action).unwrap();
            assert!(!r.done);
            let s = e.state().sim;
            let w = (((s.t - 1e-9) / period) as usize).min(full - 1);
            peaks[w] = peaks[w].max(total_energy(&p, &s));
        }
        assert!(full >= 3);
        assert!(peaks.windows(2).all(|w| w[1] > w[0]), "planar={planar}: {peaks:?}");
    }
}
