use crate::error::{Error, Result};

/// Rollout storage laid out time-major: sample `(t, e)` lives at `t * envs + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub steps: usize,
    pub envs: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f64>,
    /// Pre-squash actions.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Episode ended after this transition.
    pub dones: Vec<bool>,
    /// `V(s_T)` per environment for the state after the last stored step.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(steps: usize, envs: usize, obs_dim: usize, action_dim: usize) -> Self {
        let n = steps * envs;
        Self {
            steps,
            envs,
            obs_dim,
            action_dim,
            obs: vec![0.0; n * obs_dim],
            actions: vec![0.0; n * action_dim],
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            bootstrap: vec![0.0; envs],
        }
    }

    pub fn len(&self) -> usize {
        self.steps * self.envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: usize, e: usize) -> usize {
        t * self.envs + e
    }

    pub fn obs_at(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action_at(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.obs.len() == n * self.obs_dim
            && self.actions.len() == n * self.action_dim
            && self.log_probs.len() == n
            && self.rewards.len() == n
            && self.values.len() == n
            && self.dones.len() == n
            && self.bootstrap.len() == self.envs;
        if !ok {
            return Err(Error::Shape("rollout buffer arrays disagree on T x E".into()));
        }
        let finite = [&self.obs, &self.actions, &self.log_probs, &self.rewards, &self.values, &self.bootstrap]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFinite("rollout buffer"));
        }
        Ok(())
    }
}

/// Generalized advantage estimation, backwards recursion per environment.
///
/// Returns `(advantages, returns)` with `returns = advantages + values`.
/// Advantages are not normalized here.
pub fn gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = buffer.len();
    let mut adv = vec![0.0; n];
    for e in 0..buffer.envs {
        let mut next_adv = 0.0;
        let mut next_value = buffer.bootstrap[e];
        for t in (0..buffer.steps).rev() {
            let i = buffer.index(t, e);
            let live = if buffer.dones[i] { 0.0 } else { 1.0 };
            let delta = buffer.rewards[i] + gamma * next_value * live - buffer.values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = buffer.values[i];
        }
    }
    let returns = adv.iter().zip(&buffer.values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shift and scale to zero mean, unit (population) variance.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for v in values {
        *v = (*v - mean) * scale;
    }
}
