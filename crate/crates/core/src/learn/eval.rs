//! Deterministic policy evaluation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::GaussianPolicy;
use crate::control::Gains;
use crate::env::{EnvConfig, SwingEnv, TrajectoryRow};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Summary over evaluation episodes. Rates and means are `None` when there
/// is nothing to average (no episodes, or no successes for the time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    /// Simulated seconds until success, over successful episodes.
    pub mean_time_to_target: Option<f64>,
    pub mean_saturated_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub episode_return: f64,
    pub success: bool,
    pub failure: bool,
    pub steps: usize,
    /// Simulated time at termination.
    pub time: f64,
    pub saturated_fraction: f64,
}

/// Run one episode with the mode action `tanh(mean)`.
pub fn run_episode(
    env: &mut SwingEnv,
    policy: &GaussianPolicy,
    seed: u64,
    mut log: Option<&mut Vec<TrajectoryRow>>,
) -> Result<EpisodeOutcome> {
    if policy.action_dim() != env.config().action_dim() {
        return Err(Error::Shape(format!(
            "policy acts in {} dimensions, environment expects {}",
            policy.action_dim(),
            env.config().action_dim()
        )));
    }
    let mut obs = env.reset(seed);
    let mut out = EpisodeOutcome {
        seed,
        episode_return: 0.0,
        success: false,
        failure: false,
        steps: 0,
        time: 0.0,
        saturated_fraction: 0.0,
    };
    let mut saturated = 0.0;
    loop {
        let action = policy.mode(&obs)?;
        let res = env.step_logged(&action, log.as_deref_mut())?;
        out.episode_return += res.reward;
        out.steps += 1;
        saturated += res.info.saturated_fraction;
        obs = res.obs;
        if res.done {
            out.success = res.info.success;
            out.failure = res.info.failure;
            break;
        }
    }
    out.time = env.state().sim.t;
    out.saturated_fraction = saturated / out.steps as f64;
    Ok(out)
}

/// Episode seeds are drawn in order from a ChaCha8 stream seeded with `seed`.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

pub fn summarize(outcomes: &[EpisodeOutcome]) -> EvalStats {
    let n = outcomes.len();
    let mean = |xs: &mut dyn Iterator<Item = f64>| -> Option<f64> {
        let v: Vec<f64> = xs.collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let successes = outcomes.iter().filter(|o| o.success).count();
    let mean_return = mean(&mut outcomes.iter().map(|o| o.episode_return));
    let std_return = mean_return.map(|m| {
        (outcomes.iter().map(|o| (o.episode_return - m).powi(2)).sum::<f64>() / n as f64).sqrt()
    });
    EvalStats {
        episodes: n,
        successes,
        success_rate: (n > 0).then(|| successes as f64 / n as f64),
        mean_return,
        std_return,
        mean_time_to_target: mean(&mut outcomes.iter().filter(|o| o.success).map(|o| o.time)),
        mean_saturated_fraction: mean(&mut outcomes.iter().map(|o| o.saturated_fraction)),
    }
}

/// Evaluate `episodes` episodes in parallel; results do not depend on the
/// thread count.
pub fn evaluate(
    policy: &GaussianPolicy,
    params: &ModelParams,
    gains: &Gains,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<(EvalStats, Vec<EpisodeOutcome>)> {
    let env = SwingEnv::new(env_config, params, gains)?;
    let outcomes = episode_seeds(seed, episodes)
        .into_par_iter()
        .map(|s| run_episode(&mut env.clone(), policy, s, None))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&outcomes), outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn policy(planar: bool) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        GaussianPolicy::new(crate::env::OBS_DIM, &[8], if planar { 1 } else { 2 }, &mut rng)
    }

    #[test]
    fn zero_episodes() {
        let (stats, _) = evaluate(&policy(false), &ModelParams::default(), &Gains::default(), &EnvConfig::default(), 0, 1).unwrap();
        assert_eq!(stats.episodes, 0);
        assert_eq!(stats.success_rate, None);
        assert_eq!(stats.mean_return, None);
    }

    #[test]
    fn deterministic_and_dimension_checked() {
        let cfg = EnvConfig { episode_len: 10, ..EnvConfig::default() };
        let run = || evaluate(&policy(false), &ModelParams::default(), &Gains::default(), &cfg, 3, 9).unwrap();
        let (a, oa) = run();
        let (b, ob) = run();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert_eq!(a.episodes, 3);
        assert!(oa.iter().all(|o| o.steps <= 10));

        let planar = EnvConfig { planar: true, ..cfg };
        assert!(evaluate(&policy(false), &ModelParams::default(), &Gains::default(), &planar, 1, 0).is_err());
    }

    #[test]
    fn summary_statistics() {
        let o = |r: f64, s: bool, t: f64| EpisodeOutcome {
            seed: 0,
            episode_return: r,
            success: s,
            failure: false,
            steps: 1,
            time: t,
            saturated_fraction: 0.5,
        };
        let stats = summarize(&[o(1.0, true, 2.0), o(3.0, false, 8.0)]);
        assert_eq!(stats.success_rate, Some(0.5));
        assert_eq!(stats.mean_return, Some(2.0));
        assert_eq!(stats.std_return, Some(1.0));
        assert_eq!(stats.mean_time_to_target, Some(2.0));
    }
}
