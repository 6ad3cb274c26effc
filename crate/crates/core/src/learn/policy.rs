//! tanh-squashed Gaussian policy and the actor-critic parameter set.

use nalgebra::DVector;
use rand::Rng;

use super::mlp::Mlp;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
/// Initial pre-squash std of about 0.22. Wider exploration noise random-walks
/// the swing reference and learns markedly less reliably.
pub const LOG_STD_INIT: f64 = -1.5;
/// Keeps the tanh change-of-variables term finite at saturation.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    /// State-independent log standard deviation of the pre-squash Gaussian.
    pub log_std: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// Squashed action in `[-1, 1]^d`.
    pub action: Vec<f64>,
    /// Pre-squash sample.
    pub raw: Vec<f64>,
    pub log_prob: f64,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self {
            // Small output layer so the initial policy is near zero-mean.
            mean: Mlp::init(&sizes, 0.01, rng),
            log_std: DVector::from_element(action_dim, LOG_STD_INIT),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((self.mean.forward(obs)?, self.log_std.clone()))
    }

    /// Reparameterised sample from injected standard-normal `noise`.
    pub fn sample(&self, obs: &[f64], noise: &[f64]) -> Result<PolicySample> {
        if noise.len() != self.action_dim() {
            return Err(Error::Shape(format!(
                "noise has {} components, policy has {}",
                noise.len(),
                self.action_dim()
            )));
        }
        let mean = self.mean.forward(obs)?;
        let raw: Vec<f64> = mean
            .iter()
            .zip(self.log_std.iter())
            .zip(noise)
            .map(|((m, ls), n)| m + ls.exp() * n)
            .collect();
        let gaussian: f64 = noise
            .iter()
            .zip(self.log_std.iter())
            .map(|(n, ls)| -0.5 * n * n - HALF_LN_2PI - ls)
            .sum();
        Ok(PolicySample {
            action: raw.iter().map(|r| r.tanh()).collect(),
            log_prob: gaussian - squash_correction(&raw),
            raw,
        })
    }

    /// Log density of a previously sampled pre-squash action.
    pub fn log_prob(&self, obs: &[f64], raw: &[f64]) -> Result<f64> {
        let mean = self.mean.forward(obs)?;
        let gaussian: f64 = mean
            .iter()
            .zip(self.log_std.iter())
            .zip(raw)
            .map(|((m, ls), r)| {
                let z = (r - m) * (-ls).exp();
                -0.5 * z * z - HALF_LN_2PI - ls
            })
            .sum();
        Ok(gaussian - squash_correction(raw))
    }

    /// Deterministic action `tanh(mean)`.
    pub fn mode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mean.forward(obs)?.iter().map(|m| m.tanh()).collect())
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.apply(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }
}

/// `sum_d log(1 - tanh(raw_d)^2 + eps)`.
pub fn squash_correction(raw: &[f64]) -> f64 {
    raw.iter().map(|r| (1.0 - r.tanh().powi(2) + SQUASH_EPS).ln()).sum()
}

/// Free-function form of [`GaussianPolicy::sample`].
pub fn sample_and_logprob(policy: &GaussianPolicy, obs: &[f64], noise: &[f64]) -> Result<PolicySample> {
    policy.sample(obs, noise)
}

/// Policy and value function; also used as the container for gradients
/// and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: GaussianPolicy,
    pub value: Mlp,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        let policy = GaussianPolicy::new(obs_dim, hidden, action_dim, rng);
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            policy,
            value: Mlp::init(&sizes, 1.0, rng),
        }
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.value.forward(obs)?[0])
    }

    /// Names aligned with [`ActorCritic::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (net, tag) in [(&self.policy.mean, "policy"), (&self.value, "value")] {
            for l in 0..net.layers.len() {
                names.push(format!("{tag}.layer{l}.weight"));
                names.push(format!("{tag}.layer{l}.bias"));
            }
            if tag == "policy" {
                names.push("policy.log_std".to_string());
            }
        }
        names
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.policy.mean.tensors();
        t.push(self.policy.log_std.as_slice());
        t.extend(self.value.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.policy.mean.tensors_mut();
        t.push(self.policy.log_std.as_mut_slice());
        t.extend(self.value.tensors_mut());
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            policy: GaussianPolicy {
                mean: self.policy.mean.zeros_like(),
                log_std: DVector::zeros(self.policy.log_std.len()),
            },
            value: self.value.zeros_like(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other` elementwise.
    pub fn accumulate(&mut self, other: &ActorCritic) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
