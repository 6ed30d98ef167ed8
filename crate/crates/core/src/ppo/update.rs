//! Clipped-surrogate PPO update with Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::policy::{gaussian_entropy, GaussianPolicy};
use super::{PpoConfig, PpoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powf(self.t as f64);
        let b2t = 1.0 - self.beta2.powf(self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

fn clip_ratio(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    let (a, b) = (ratio * adv, clipped * adv);
    // The gradient flows only through the unclipped branch.
    if a <= b {
        (a, true)
    } else {
        (b, false)
    }
}

/// Mean clipped surrogate `min(rho A, clip(rho) A)` under the current policy.
pub fn clipped_surrogate(policy: &GaussianPolicy, buf: &RolloutBuffer, advantages: &[f64], clip_eps: f64) -> Result<f64, PpoError> {
    let mut total = 0.0;
    for i in 0..buf.len() {
        let logp = policy.log_prob(&buf.obs[i], &buf.actions[i])?;
        let ratio = (logp - buf.log_probs[i]).exp();
        total += clip_ratio(ratio, advantages[i], clip_eps).0;
    }
    Ok(total / buf.len() as f64)
}

fn normalized(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Runs `epochs_per_update` passes of minibatch gradient descent on the
/// PPO loss. The buffer must already carry advantages and returns.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    adam: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    if buf.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    if buf.advantages.len() != buf.len() || buf.returns.len() != buf.len() {
        return Err(PpoError::IncompleteEpisode);
    }
    let adv = normalized(&buf.advantages);
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mb = cfg.minibatch_size.max(1);
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let mut grad = vec![0.0; policy.num_params()];
            let inv = 1.0 / chunk.len() as f64;
            let (mut pl, mut vl, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0.0);
            for &i in chunk {
                let out = policy.forward(&buf.obs[i])?;
                let logp = super::policy::gaussian_log_prob(&out.mean, &out.log_std, &buf.actions[i]);
                let log_ratio = logp - buf.log_probs[i];
                let ratio = log_ratio.exp();
                let (surr, active) = clip_ratio(ratio, adv[i], cfg.clip_eps);
                let verr = out.value - buf.returns[i];
                pl -= surr;
                vl += verr * verr;
                kl += (ratio - 1.0) - log_ratio;
                clipped += f64::from(u8::from((ratio - 1.0).abs() > cfg.clip_eps));
                // Loss = -surr + c_v (V - R)^2 - c_e H, averaged over the batch.
                let w_logp = if active { -adv[i] * ratio * inv } else { 0.0 };
                policy.accumulate_grad(
                    &buf.obs[i],
                    &buf.actions[i],
                    w_logp,
                    -cfg.entropy_coef * inv,
                    2.0 * cfg.value_coef * verr * inv,
                    &mut grad,
                );
            }
            let entropy = gaussian_entropy(&policy.log_std);
            let loss = pl * inv + cfg.value_coef * vl * inv - cfg.entropy_coef * entropy;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PpoError::NonFiniteLoss);
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let mut params = policy.flat_params();
            adam.step(&mut params, &grad);
            policy.set_flat_params(&params);

            stats.policy_loss += pl * inv;
            stats.value_loss += vl * inv;
            stats.entropy += entropy;
            stats.approx_kl += kl * inv;
            stats.clip_fraction += clipped * inv;
            stats.grad_norm += norm;
            batches += 1;
        }
    }
    let b = batches.max(1) as f64;
    stats.policy_loss /= b;
    stats.value_loss /= b;
    stats.entropy /= b;
    stats.approx_kl /= b;
    stats.clip_fraction /= b;
    stats.grad_norm /= b;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit_buffer(policy: &GaussianPolicy, rng: &mut ChaCha8Rng, n: usize, reward: impl Fn(f64) -> f64) -> RolloutBuffer {
        let mut buf = RolloutBuffer::default();
        let obs = vec![0.0];
        for _ in 0..n {
            let out = policy.forward(&obs).unwrap();
            let a = policy.sample(&out, rng);
            let lp = super::super::policy::gaussian_log_prob(&out.mean, &out.log_std, &a);
            buf.push(obs.clone(), a.clone(), lp, reward(a[0]), out.value, true);
        }
        buf.compute_advantages(1.0, 0.95).unwrap();
        buf
    }

    #[test]
    fn surrogate_at_unit_ratio_is_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GaussianPolicy::new(1, 1, &[8], 0.0, &mut rng);
        let buf = bandit_buffer(&p, &mut rng, 64, |a| a);
        let s = clipped_surrogate(&p, &buf, &buf.advantages, 0.2).unwrap();
        let mean = buf.advantages.iter().sum::<f64>() / 64.0;
        assert!((s - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_leaves_actor_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = GaussianPolicy::new(1, 1, &[8], 0.0, &mut rng);
        let mut buf = bandit_buffer(&p, &mut rng, 32, |_| 0.0);
        buf.advantages = vec![0.0; 32];
        let before = p.clone();
        let cfg = PpoConfig { value_coef: 0.0, ..PpoConfig::default() };
        let mut adam = Adam::new(p.num_params(), 1e-2);
        ppo_update(&mut p, &mut adam, &buf, &cfg, &mut rng).unwrap();
        assert_eq!(p.actor, before.actor);
        assert_eq!(p.log_std, before.log_std);
    }

    #[test]
    fn bandit_mean_moves_toward_positive_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = GaussianPolicy::new(1, 1, &[8], 0.0, &mut rng);
        let buf = bandit_buffer(&p, &mut rng, 256, |a| if a > 0.0 { 1.0 } else { -1.0 });
        let before = p.forward(&[0.0]).unwrap().mean[0];
        let mut adam = Adam::new(p.num_params(), 1e-3);
        ppo_update(&mut p, &mut adam, &buf, &PpoConfig::default(), &mut rng).unwrap();
        let after = p.forward(&[0.0]).unwrap().mean[0];
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = GaussianPolicy::new(1, 1, &[4], 0.0, &mut rng);
        let mut adam = Adam::new(p.num_params(), 1e-3);
        let cfg = PpoConfig::default();
        assert_eq!(
            ppo_update(&mut p, &mut adam, &RolloutBuffer::default(), &cfg, &mut rng).unwrap_err(),
            PpoError::EmptyBuffer
        );
        let mut buf = bandit_buffer(&p, &mut rng, 4, |_| 1.0);
        buf.returns[0] = f64::NAN;
        assert_eq!(ppo_update(&mut p, &mut adam, &buf, &cfg, &mut rng).unwrap_err(), PpoError::NonFiniteLoss);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut adam = Adam::new(2, 0.05);
        let mut x = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)];
            adam.step(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }
}
