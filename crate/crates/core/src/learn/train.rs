//! PPO training loop.
//!
//! Every environment owns its RNG stream, so collection can run the
//! environments in parallel and still produce the same buffer regardless of
//! scheduling. The optimisation phase is sequential apart from the
//! fixed-chunk gradient evaluation in [`ppo_loss`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::buffer::{gae, normalize, RolloutBuffer};
use super::policy::ActorCritic;
use super::ppo::{ppo_loss, LossCoefs, Minibatch};
use crate::control::Gains;
use crate::env::{EnvConfig, Observation, SwingEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    /// Decay the learning rate linearly to zero over `total_steps`.
    pub anneal_lr: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Steps per environment per update (T).
    pub steps_per_update: usize,
    /// Parallel environments (E).
    pub num_envs: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    /// Multiplies rewards before they reach the value function and GAE.
    /// Reported returns are unscaled.
    pub reward_scale: f64,
    /// Write `policy_step_<n>.json` every this many updates (0 disables).
    pub checkpoint_every: u64,
    /// Record elapsed wall-clock seconds in metrics; when off `wall_s` is 0
    /// and the metrics stream is a pure function of the seed.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            epochs: 10,
            minibatches: 4,
            learning_rate: 3e-4,
            anneal_lr: false,
            entropy_coef: 0.0,
            value_coef: 0.5,
            steps_per_update: 1024,
            num_envs: 8,
            total_steps: 2_000_000,
            seed: 0,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            reward_scale: 0.01,
            checkpoint_every: 10,
            wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param("train.gamma", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param("train.lambda", "must be in [0, 1]"));
        }
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            return Err(Error::param("train.clip_eps", "must be > 0"));
        }
        for (name, v) in [
            ("train.learning_rate", self.learning_rate),
            ("train.max_grad_norm", self.max_grad_norm),
            ("train.reward_scale", self.reward_scale),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        for (name, v) in [("train.entropy_coef", self.entropy_coef), ("train.value_coef", self.value_coef)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("train.epochs", self.epochs),
            ("train.minibatches", self.minibatches),
            ("train.steps_per_update", self.steps_per_update),
            ("train.num_envs", self.num_envs),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be >= 1"));
            }
        }
        if self.minibatches > self.steps_per_update * self.num_envs {
            return Err(Error::param("train.minibatches", "more minibatches than samples"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::param("train.hidden", "need at least one non-empty hidden layer"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> u64 {
        (self.steps_per_update * self.num_envs) as u64
    }

    pub fn num_updates(&self) -> u64 {
        self.total_steps.div_ceil(self.batch_size()).max(1)
    }
}

/// One row of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateMetrics {
    /// Environment steps taken so far.
    pub step: u64,
    /// Mean unscaled return of episodes finished during this collection.
    pub mean_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub explained_var: f64,
    pub wall_s: f64,
}

pub trait MetricsSink {
    fn record(&mut self, metrics: &UpdateMetrics) -> Result<()>;
}

impl MetricsSink for Vec<UpdateMetrics> {
    fn record(&mut self, metrics: &UpdateMetrics) -> Result<()> {
        self.push(metrics.clone());
        Ok(())
    }
}

impl<F: FnMut(&UpdateMetrics) -> Result<()>> MetricsSink for F {
    fn record(&mut self, metrics: &UpdateMetrics) -> Result<()> {
        self(metrics)
    }
}

#[derive(Debug, Clone)]
struct Worker {
    env: SwingEnv,
    obs: Observation,
    rng: ChaCha8Rng,
    episode_return: f64,
}

#[derive(Debug, Default)]
struct WorkerRollout {
    obs: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: f64,
    /// (unscaled return, success) of finished episodes.
    finished: Vec<(f64, bool)>,
}

impl Worker {
    fn new(env: &SwingEnv, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut env = env.clone();
        let obs = env.reset(rng.next_u64());
        Self {
            env,
            obs,
            rng,
            episode_return: 0.0,
        }
    }

    fn collect(&mut self, ac: &ActorCritic, steps: usize, cfg: &TrainConfig) -> Result<WorkerRollout> {
        let d = ac.policy.action_dim();
        let mut out = WorkerRollout::default();
        for _ in 0..steps {
            let noise: Vec<f64> = (0..d).map(|_| self.rng.sample(StandardNormal)).collect();
            let sample = ac.policy.sample(&self.obs, &noise)?;
            let value = ac.value(&self.obs)?;
            let res = self.env.step(&sample.action)?;
            let mut reward = res.reward * cfg.reward_scale;
            if res.truncated {
                // Time limit, not a terminal state: fold the bootstrap into
                // the reward so GAE can treat it as an episode boundary.
                reward += cfg.gamma * ac.value(&res.obs)?;
            }
            out.obs.extend_from_slice(&self.obs);
            out.actions.extend_from_slice(&sample.raw);
            out.log_probs.push(sample.log_prob);
            out.rewards.push(reward);
            out.values.push(value);
            out.dones.push(res.done);
            self.episode_return += res.reward;
            if res.done {
                out.finished.push((self.episode_return, res.info.success));
                self.episode_return = 0.0;
                self.obs = self.env.reset(self.rng.next_u64());
            } else {
                self.obs = res.obs;
            }
        }
        out.bootstrap = ac.value(&self.obs)?;
        Ok(out)
    }
}

/// Training state; advance with [`Trainer::update`].
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: ActorCritic,
    adam: AdamState,
    workers: Vec<Worker>,
    shuffle_rng: ChaCha8Rng,
    update: u64,
    steps: u64,
    started: Instant,
}

/// Stream ids: 0 for parameter init, `(update << 16) | (1 + env)` for
/// environments and `(update << 16)` for minibatch shuffling after a
/// (re)start at `update`.
fn stream_id(update: u64, slot: u64) -> u64 {
    (update << 16) | slot
}

impl Trainer {
    pub fn new(params: &ModelParams, gains: &Gains, env_config: &EnvConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = ActorCritic::new(OBS_DIM, &config.hidden, env_config.action_dim(), &mut init_rng);
        let adam = AdamState::new(&model);
        Self::assemble(params, gains, env_config, config, model, adam, 0, 0)
    }

    /// Continue from saved parameters, optimizer moments and counters.
    #[allow(clippy::too_many_arguments)]
    pub fn resume(
        params: &ModelParams,
        gains: &Gains,
        env_config: &EnvConfig,
        config: &TrainConfig,
        model: ActorCritic,
        adam: Option<AdamState>,
        update: u64,
        steps: u64,
    ) -> Result<Self> {
        config.validate()?;
        if model.policy.action_dim() != env_config.action_dim() || model.policy.mean.input_dim() != OBS_DIM {
            return Err(Error::Shape("checkpoint network does not match the environment".into()));
        }
        let adam = adam.unwrap_or_else(|| AdamState::new(&model));
        Self::assemble(params, gains, env_config, config, model, adam, update, steps)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        params: &ModelParams,
        gains: &Gains,
        env_config: &EnvConfig,
        config: &TrainConfig,
        model: ActorCritic,
        adam: AdamState,
        update: u64,
        steps: u64,
    ) -> Result<Self> {
        let env = SwingEnv::new(env_config, params, gains)?;
        let workers = (0..config.num_envs as u64)
            .map(|e| Worker::new(&env, config.seed, stream_id(update + 1, e + 1)))
            .collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(stream_id(update + 1, 0));
        Ok(Self {
            config: config.clone(),
            model,
            adam,
            workers,
            shuffle_rng,
            update,
            steps,
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &ActorCritic {
        &self.model
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn updates_done(&self) -> u64 {
        self.update
    }

    pub fn steps_done(&self) -> u64 {
        self.steps
    }

    pub fn finished(&self) -> bool {
        self.steps >= self.config.total_steps
    }

    /// Learning rate for the next update.
    pub fn learning_rate(&self) -> f64 {
        if !self.config.anneal_lr {
            return self.config.learning_rate;
        }
        let done = self.steps as f64 / self.config.total_steps as f64;
        self.config.learning_rate * (1.0 - done).max(0.0)
    }

    fn collect(&mut self) -> Result<(RolloutBuffer, Vec<(f64, bool)>)> {
        let cfg = &self.config;
        let model = &self.model;
        let t = cfg.steps_per_update;
        let rollouts: Vec<Result<WorkerRollout>> = self
            .workers
            .par_iter_mut()
            .map(|w| w.collect(model, t, cfg))
            .collect();

        let e_count = self.workers.len();
        let d = model.policy.action_dim();
        let mut buf = RolloutBuffer::new(t, e_count, OBS_DIM, d);
        let mut finished = Vec::new();
        for (e, r) in rollouts.into_iter().enumerate() {
            let r = r?;
            for step in 0..t {
                let i = buf.index(step, e);
                buf.obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(&r.obs[step * OBS_DIM..(step + 1) * OBS_DIM]);
                buf.actions[i * d..(i + 1) * d].copy_from_slice(&r.actions[step * d..(step + 1) * d]);
                buf.log_probs[i] = r.log_probs[step];
                buf.rewards[i] = r.rewards[step];
                buf.values[i] = r.values[step];
                buf.dones[i] = r.dones[step];
            }
            buf.bootstrap[e] = r.bootstrap;
            finished.extend(r.finished);
        }
        buf.validate().map_err(|e| Error::Divergence(format!("rollout: {e}")))?;
        Ok((buf, finished))
    }

    /// Collect one batch and run the PPO epochs on it.
    pub fn update(&mut self) -> Result<UpdateMetrics> {
        let (buffer, finished) = self.collect()?;
        let (mut adv, returns) = gae(&buffer, self.config.gamma, self.config.lambda);
        let explained_var = explained_variance(&buffer.values, &returns);
        normalize(&mut adv);

        let coefs = LossCoefs {
            clip_eps: self.config.clip_eps,
            value_coef: self.config.value_coef,
            entropy_coef: self.config.entropy_coef,
        };
        let lr = self.learning_rate();
        let n = buffer.len();
        let mb_size = n / self.config.minibatches;
        let mut indices: Vec<usize> = (0..n).collect();
        let (mut pol, mut val, mut ent, mut count) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..self.config.epochs {
            indices.shuffle(&mut self.shuffle_rng);
            for chunk in indices.chunks_exact(mb_size) {
                let batch = Minibatch::gather(&buffer, &adv, &returns, chunk);
                let (report, grads) = ppo_loss(&self.model, &batch, &coefs)?;
                adam_step(
                    &mut self.adam,
                    &mut self.model,
                    &grads,
                    lr,
                    self.config.max_grad_norm,
                );
                self.model.policy.clamp_log_std();
                pol += report.policy;
                val += report.value;
                ent += report.entropy;
                count += 1.0;
            }
        }
        if !self.model.is_finite() {
            return Err(Error::Divergence("non-finite parameters after update".into()));
        }

        self.update += 1;
        self.steps += buffer.len() as u64;
        let episodes = finished.len() as f64;
        Ok(UpdateMetrics {
            step: self.steps,
            mean_return: (!finished.is_empty()).then(|| finished.iter().map(|f| f.0).sum::<f64>() / episodes),
            success_rate: (!finished.is_empty()).then(|| finished.iter().filter(|f| f.1).count() as f64 / episodes),
            policy_loss: pol / count,
            value_loss: val / count,
            entropy: ent / count,
            explained_var,
            wall_s: if self.config.wall_clock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }
}

/// `1 - Var(returns - values) / Var(returns)`; zero when the returns are constant.
pub fn explained_variance(values: &[f64], returns: &[f64]) -> f64 {
    let var = |x: &mut dyn Iterator<Item = f64>, n: f64| {
        let v: Vec<f64> = x.collect();
        let mean = v.iter().sum::<f64>() / n;
        v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n
    };
    let n = returns.len() as f64;
    let var_ret = var(&mut returns.iter().copied(), n);
    if var_ret == 0.0 {
        return 0.0;
    }
    let var_err = var(&mut returns.iter().zip(values).map(|(r, v)| r - v), n);
    1.0 - var_err / var_ret
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub model: ActorCritic,
    pub steps: u64,
    pub updates: u64,
}

/// Run updates until `total_steps` is reached, reporting every update.
pub fn train(
    params: &ModelParams,
    gains: &Gains,
    env_config: &EnvConfig,
    config: &TrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<TrainedPolicy> {
    let mut trainer = Trainer::new(params, gains, env_config, config)?;
    while !trainer.finished() {
        let m = trainer.update()?;
        sink.record(&m)?;
    }
    Ok(TrainedPolicy {
        model: trainer.model,
        steps: trainer.steps,
        updates: trainer.update,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            steps_per_update: 64,
            num_envs: 2,
            total_steps: 128,
            epochs: 2,
            minibatches: 2,
            hidden: vec![16],
            wall_clock: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { gamma: 0.0, ..tiny() }.validate().is_err());
        assert!(TrainConfig { lambda: 1.5, ..tiny() }.validate().is_err());
        assert!(TrainConfig { clip_eps: 0.0, ..tiny() }.validate().is_err());
        assert!(TrainConfig { num_envs: 0, ..tiny() }.validate().is_err());
        assert_eq!(TrainConfig::default().num_updates(), 245);
    }

    #[test]
    fn single_update_smoke() {
        let cfg = TrainConfig { total_steps: 128, ..tiny() };
        let mut rows: Vec<UpdateMetrics> = Vec::new();
        let out = train(&ModelParams::default(), &Gains::default(), &EnvConfig::default(), &cfg, &mut rows).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(out.steps, 128);
        assert!(rows[0].policy_loss.is_finite());
    }

    #[test]
    fn same_seed_same_metrics() {
        let run = || {
            let cfg = TrainConfig { total_steps: 256, ..tiny() };
            let mut rows: Vec<UpdateMetrics> = Vec::new();
            let env = EnvConfig { episode_len: 40, ..EnvConfig::default() };
            let out = train(&ModelParams::default(), &Gains::default(), &env, &cfg, &mut rows).unwrap();
            (serde_json::to_string(&rows).unwrap(), out.model)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn explained_variance_cases() {
        assert_eq!(explained_variance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(explained_variance(&[0.0, 0.0], &[5.0, 5.0]), 0.0);
        assert!(explained_variance(&[0.0; 3], &[1.0, 2.0, 3.0]).abs() < 1e-15);
    }
}
