use super::policy::ActorCritic;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments, shaped like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ActorCritic,
    pub v: ActorCritic,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ActorCritic) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam update after rescaling `grads` so their global norm is at most
/// `max_grad_norm` (skipped when that is not finite). Returns the pre-clip
/// gradient norm.
pub fn adam_step(state: &mut AdamState, params: &mut ActorCritic, grads: &ActorCritic, lr: f64, max_grad_norm: f64) -> f64 {
    let norm = grads.global_norm();
    let scale = if max_grad_norm.is_finite() && norm > max_grad_norm {
        max_grad_norm / norm
    } else {
        1.0
    };
    state.t += 1;
    let bias1 = 1.0 - BETA1.powi(state.t as i32);
    let bias2 = 1.0 - BETA2.powi(state.t as i32);

    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i] * scale;
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    norm
}
