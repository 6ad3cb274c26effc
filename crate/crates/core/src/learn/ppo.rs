//! Clipped-surrogate loss and its gradient.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::buffer::RolloutBuffer;
use super::policy::{squash_correction, ActorCritic};
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Samples per gradient chunk. Fixed so the reduction order, and therefore
/// the floating-point result, does not depend on the thread count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    /// `obs_dim x B`.
    pub obs: DMatrix<f64>,
    /// Pre-squash actions, `action_dim x B`.
    pub actions: DMatrix<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn gather(buffer: &RolloutBuffer, advantages: &[f64], returns: &[f64], indices: &[usize]) -> Self {
        let b = indices.len();
        let mut obs = DMatrix::zeros(buffer.obs_dim, b);
        let mut actions = DMatrix::zeros(buffer.action_dim, b);
        for (col, &i) in indices.iter().enumerate() {
            obs.column_mut(col).copy_from_slice(buffer.obs_at(i));
            actions.column_mut(col).copy_from_slice(buffer.action_at(i));
        }
        Self {
            obs,
            actions,
            old_log_probs: indices.iter().map(|&i| buffer.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| advantages[i]).collect(),
            returns: indices.iter().map(|&i| returns[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn columns(&self, start: usize, end: usize) -> Self {
        Self {
            obs: self.obs.columns(start, end - start).into_owned(),
            actions: self.actions.columns(start, end - start).into_owned(),
            old_log_probs: self.old_log_probs[start..end].to_vec(),
            advantages: self.advantages[start..end].to_vec(),
            returns: self.returns[start..end].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Mean of `old_logp - new_logp`.
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl LossReport {
    fn add(&mut self, o: &LossReport) {
        self.total += o.total;
        self.policy += o.policy;
        self.value += o.value;
        self.approx_kl += o.approx_kl;
        self.clip_fraction += o.clip_fraction;
    }
}

/// Loss and gradient over a minibatch.
///
/// `total = policy + value_coef * value - entropy_coef * entropy` where
/// `policy = -mean(min(rho A, clip(rho) A))` and `value = mean((v - R)^2)`.
pub fn ppo_loss(ac: &ActorCritic, batch: &Minibatch, coefs: &LossCoefs) -> Result<(LossReport, ActorCritic)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Shape("empty minibatch".into()));
    }
    let parts: Vec<Result<(LossReport, ActorCritic)>> = (0..n)
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(n);
            chunk_loss(ac, &batch.columns(start, end), coefs, n as f64)
        })
        .collect();

    let mut report = LossReport::default();
    let mut grad = ac.zeros_like();
    for part in parts {
        let (r, g) = part?;
        report.add(&r);
        grad.accumulate(&g);
    }

    // Entropy does not depend on the batch.
    let entropy = ac.policy.entropy();
    report.entropy = entropy;
    report.total -= coefs.entropy_coef * entropy;
    for g in grad.policy.log_std.iter_mut() {
        *g -= coefs.entropy_coef;
    }

    if !report.total.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss (policy {}, value {})",
            report.policy, report.value
        )));
    }
    Ok((report, grad))
}

/// Partial sums over one chunk, every mean taken over `denom` samples.
fn chunk_loss(ac: &ActorCritic, batch: &Minibatch, coefs: &LossCoefs, denom: f64) -> Result<(LossReport, ActorCritic)> {
    let policy = &ac.policy;
    let d = policy.action_dim();
    let b = batch.len();
    if batch.actions.nrows() != d {
        return Err(Error::Shape(format!("actions have {} rows, policy has {d}", batch.actions.nrows())));
    }
    let mut grad = ac.zeros_like();
    let mut report = LossReport::default();

    let tape = policy.mean.forward_batch(batch.obs.clone())?;
    let mean = tape.output();
    let inv_std: Vec<f64> = policy.log_std.iter().map(|ls| (-ls).exp()).collect();
    let mut d_mean = DMatrix::zeros(d, b);

    for i in 0..b {
        let raw = batch.actions.column(i);
        let mut gaussian = 0.0;
        for k in 0..d {
            let z = (raw[k] - mean[(k, i)]) * inv_std[k];
            gaussian += -0.5 * z * z - HALF_LN_2PI - policy.log_std[k];
        }
        let new_lp = gaussian - squash_correction(raw.as_slice());
        let log_ratio = new_lp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let clipped = ratio.clamp(1.0 - coefs.clip_eps, 1.0 + coefs.clip_eps);
        let unclipped_obj = ratio * adv;
        let clipped_obj = clipped * adv;
        report.policy -= unclipped_obj.min(clipped_obj) / denom;
        report.approx_kl -= log_ratio / denom;
        if clipped != ratio {
            report.clip_fraction += 1.0 / denom;
        }

        // Gradient flows only through the active (unclipped) branch.
        if unclipped_obj <= clipped_obj {
            let g_logp = -adv * ratio / denom;
            for k in 0..d {
                let z = (raw[k] - mean[(k, i)]) * inv_std[k];
                d_mean[(k, i)] = g_logp * z * inv_std[k];
                grad.policy.log_std[k] += g_logp * (z * z - 1.0);
            }
        }
    }
    policy.mean.backward(&tape, d_mean, &mut grad.policy.mean);

    let vtape = ac.value.forward_batch(batch.obs.clone())?;
    let values = vtape.output();
    let mut d_value = DMatrix::zeros(1, b);
    for i in 0..b {
        let err = values[(0, i)] - batch.returns[i];
        report.value += err * err / denom;
        d_value[(0, i)] = coefs.value_coef * 2.0 * err / denom;
    }
    ac.value.backward(&vtape, d_value, &mut grad.value);

    report.total = report.policy + coefs.value_coef * report.value;
    Ok((report, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::policy::GaussianPolicy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coefs(clip_eps: f64) -> LossCoefs {
        LossCoefs {
            clip_eps,
            value_coef: 0.5,
            entropy_coef: 0.0,
        }
    }

    fn batch_from(ac: &ActorCritic, rng: &mut ChaCha8Rng, n: usize) -> Minibatch {
        let obs = DMatrix::from_fn(13, n, |_, _| rng.random_range(-1.0..1.0));
        let mut actions = DMatrix::zeros(1, n);
        let mut old = Vec::new();
        for i in 0..n {
            let o: Vec<f64> = obs.column(i).iter().copied().collect();
            let s = ac.policy.sample(&o, &[rng.random_range(-1.5..1.5)]).unwrap();
            actions[(0, i)] = s.raw[0];
            old.push(s.log_prob);
        }
        let mut adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        crate::learn::buffer::normalize(&mut adv);
        Minibatch {
            obs,
            actions,
            old_log_probs: old,
            advantages: adv,
            returns: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn unchanged_policy_gives_zero_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ac = ActorCritic::new(13, &[16, 16], 1, &mut rng);
        let mb = batch_from(&ac, &mut rng, 64);
        let (r, _) = ppo_loss(&ac, &mb, &coefs(0.2)).unwrap();
        assert!(r.policy.abs() < 1e-12, "{}", r.policy);
        assert!(r.approx_kl.abs() < 1e-12);
        assert_eq!(r.clip_fraction, 0.0);
    }

    #[test]
    fn clip_branch_uses_clamped_ratio() {
        // One sample with log-ratio ln 2 and positive advantage.
        let policy = GaussianPolicy {
            mean: crate::learn::mlp::Mlp::zeros(&[2, 1]),
            log_std: nalgebra::DVector::from_element(1, 0.0),
        };
        let ac = ActorCritic {
            policy,
            value: crate::learn::mlp::Mlp::zeros(&[2, 1]),
        };
        let new_lp = ac.policy.log_prob(&[0.0, 0.0], &[0.3]).unwrap();
        let mb = Minibatch {
            obs: DMatrix::zeros(2, 1),
            actions: DMatrix::from_element(1, 1, 0.3),
            old_log_probs: vec![new_lp - 2f64.ln()],
            advantages: vec![1.5],
            returns: vec![0.0],
        };
        let (r, g) = ppo_loss(&ac, &mb, &coefs(0.2)).unwrap();
        assert!((r.policy + 1.2 * 1.5).abs() < 1e-12);
        assert_eq!(r.clip_fraction, 1.0);
        assert!(g.policy.log_std.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn infinite_clip_is_plain_importance_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let old = ActorCritic::new(13, &[16, 16], 1, &mut rng);
        let mb = batch_from(&old, &mut rng, 200);
        let mut new = old.clone();
        for t in new.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
        }
        let (r, _) = ppo_loss(&new, &mb, &coefs(f64::INFINITY)).unwrap();
        let mut plain = 0.0;
        for i in 0..mb.len() {
            let o: Vec<f64> = mb.obs.column(i).iter().copied().collect();
            let lp = new.policy.log_prob(&o, &[mb.actions[(0, i)]]).unwrap();
            plain -= (lp - mb.old_log_probs[i]).exp() * mb.advantages[i];
        }
        plain /= mb.len() as f64;
        assert!((r.policy - plain).abs() < 1e-12);
    }

    #[test]
    fn chunking_does_not_change_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ac = ActorCritic::new(13, &[8], 1, &mut rng);
        let mb = batch_from(&ac, &mut rng, 700);
        let (full, g_full) = ppo_loss(&ac, &mb, &coefs(0.2)).unwrap();
        let (one, g_one) = chunk_loss(&ac, &mb, &coefs(0.2), 700.0).unwrap();
        assert!((full.total - one.total).abs() < 1e-12);
        for (a, b) in g_full.tensors().iter().zip(g_one.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ac = ActorCritic::new(3, &[4], 1, &mut rng);
        let mb = Minibatch {
            obs: DMatrix::zeros(3, 0),
            actions: DMatrix::zeros(1, 0),
            old_log_probs: vec![],
            advantages: vec![],
            returns: vec![],
        };
        assert!(ppo_loss(&ac, &mb, &coefs(0.2)).is_err());
    }
}
