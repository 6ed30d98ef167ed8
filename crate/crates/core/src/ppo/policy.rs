//! Gaussian actor-critic policy, observation normaliser and checkpoints.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::PpoError;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const CHECKPOINT_VERSION: &str = "kyle-marl-policy-v1";

const NORM_CLIP: f64 = 10.0;
const NORM_EPS: f64 = 1e-8;

/// Running per-dimension mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    /// When frozen, `observe` leaves the statistics untouched.
    pub frozen: bool,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn observe(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[i] / self.count).sqrt()
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count < 1.0 {
            return x.iter().map(|v| v.clamp(-NORM_CLIP, NORM_CLIP)).collect();
        }
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = (self.std(i).powi(2) + NORM_EPS).sqrt();
                ((v - self.mean[i]) / s).clamp(-NORM_CLIP, NORM_CLIP)
            })
            .collect()
    }
}

/// Affine map from the network's action space to the environment's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionTransform {
    pub offset: f64,
    pub scale: f64,
}

impl Default for ActionTransform {
    fn default() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }
}

impl ActionTransform {
    pub fn apply(&self, raw: f64) -> f64 {
        self.offset + self.scale * raw
    }
}

/// Distribution parameters and value for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
    pub obs_norm: RunningNorm,
    pub transform: ActionTransform,
}

/// Gradient of the per-sample loss, laid out like [`GaussianPolicy::flat_params`].
pub type FlatGrad = Vec<f64>;

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(act_dim);
        sizes.push(1);
        let gain = 2f64.sqrt();
        Self {
            actor: Mlp::init(&actor_sizes, gain, 0.01, rng),
            critic: Mlp::init(&sizes, gain, 1.0, rng),
            log_std: vec![init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); act_dim],
            obs_norm: RunningNorm::new(obs_dim),
            transform: ActionTransform::default(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    fn check_dim(&self, obs: &[f64]) -> Result<(), PpoError> {
        if obs.len() != self.obs_dim() {
            return Err(PpoError::DimensionMismatch { expected: self.obs_dim(), got: obs.len() });
        }
        Ok(())
    }

    /// Distribution parameters on an already normalised observation.
    pub fn forward(&self, obs: &[f64]) -> Result<PolicyOutput, PpoError> {
        self.check_dim(obs)?;
        Ok(PolicyOutput {
            mean: self.actor.forward(obs),
            log_std: self.log_std.clone(),
            value: self.critic.forward(obs)[0],
        })
    }

    /// Normalises a raw observation with the running statistics.
    pub fn normalize(&self, raw_obs: &[f64]) -> Result<Vec<f64>, PpoError> {
        self.check_dim(raw_obs)?;
        Ok(self.obs_norm.normalize(raw_obs))
    }

    /// Deterministic environment action (the mean) for a raw observation.
    pub fn act_deterministic(&self, raw_obs: &[f64]) -> Result<f64, PpoError> {
        let obs = self.normalize(raw_obs)?;
        Ok(self.transform.apply(self.actor.forward(&obs)[0]))
    }

    pub fn sample<R: Rng + ?Sized>(&self, out: &PolicyOutput, rng: &mut R) -> Vec<f64> {
        out.mean
            .iter()
            .zip(&out.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, PpoError> {
        let out = self.forward(obs)?;
        Ok(gaussian_log_prob(&out.mean, &out.log_std, action))
    }

    pub fn num_params(&self) -> usize {
        self.actor.params().len() + self.log_std.len() + self.critic.params().len()
    }

    /// `[actor | log_std | critic]`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.actor.params());
        v.extend_from_slice(&self.log_std);
        v.extend_from_slice(self.critic.params());
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let a = self.actor.params().len();
        let s = self.log_std.len();
        self.actor.params_mut().copy_from_slice(&p[..a]);
        self.log_std.copy_from_slice(&p[a..a + s]);
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        self.critic.params_mut().copy_from_slice(&p[a + s..]);
    }

    /// Adds `w_logp * d log pi(a|s) + w_ent * d H + w_value * d V` into `grad`.
    /// Returns `(log pi(a|s), V(s))`.
    pub fn accumulate_grad(
        &self,
        obs: &[f64],
        action: &[f64],
        w_logp: f64,
        w_ent: f64,
        w_value: f64,
        grad: &mut [f64],
    ) -> (f64, f64) {
        let a_len = self.actor.params().len();
        let s_len = self.log_std.len();
        let acts = self.actor.forward_trace(obs);
        let mean = acts.last().expect("output");
        let logp = gaussian_log_prob(mean, &self.log_std, action);
        if w_logp != 0.0 || w_ent != 0.0 {
            let mut dmean = vec![0.0; mean.len()];
            for k in 0..mean.len() {
                let var = (2.0 * self.log_std[k]).exp();
                let d = action[k] - mean[k];
                dmean[k] = w_logp * d / var;
                grad[a_len + k] += w_logp * (d * d / var - 1.0) + w_ent;
            }
            if w_logp != 0.0 {
                self.actor.backward(&acts, &dmean, &mut grad[..a_len]);
            }
        }
        let cacts = self.critic.forward_trace(obs);
        let value = cacts.last().expect("output")[0];
        if w_value != 0.0 {
            self.critic.backward(&cacts, &[w_value], &mut grad[a_len + s_len..]);
        }
        (logp, value)
    }

    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        let file = Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            policy: self.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| PpoError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PpoError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let text = std::fs::read_to_string(path).map_err(|e| PpoError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, PpoError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PpoError::VersionMismatch(format!("unreadable checkpoint: {e}")))?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_VERSION) => {}
            Some(other) => return Err(PpoError::VersionMismatch(format!("found {other}, expected {CHECKPOINT_VERSION}"))),
            None => return Err(PpoError::VersionMismatch("missing version tag".into())),
        }
        let ck: Checkpoint =
            serde_json::from_value(value).map_err(|e| PpoError::VersionMismatch(format!("malformed checkpoint: {e}")))?;
        let p = ck.policy;
        let consistent = p.actor.input_dim() == p.critic.input_dim()
            && p.critic.output_dim() == 1
            && p.log_std.len() == p.actor.output_dim()
            && p.obs_norm.mean.len() == p.actor.input_dim()
            && p.obs_norm.m2.len() == p.actor.input_dim();
        if !consistent {
            return Err(PpoError::VersionMismatch("inconsistent layer sizes".into()));
        }
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: String,
    policy: GaussianPolicy,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_policy(seed: u64) -> (GaussianPolicy, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = rng.random_range(1..6);
        let act = rng.random_range(1..3);
        let h1 = rng.random_range(2..12);
        let h2 = rng.random_range(2..12);
        let mut p = GaussianPolicy::new(obs, act, &[h1, h2], rng.random_range(-1.0..0.5), &mut rng);
        // Larger output weights than the default init so the mean is not ~0.
        let mut big = Mlp::init(p.actor.sizes(), 1.0, 1.0, &mut rng);
        std::mem::swap(&mut p.actor, &mut big);
        (p, rng)
    }

    #[test]
    fn zero_weights_give_zero_mean_and_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GaussianPolicy::new(3, 1, &[64, 64], 0.0, &mut rng);
        let n = p.num_params();
        p.set_flat_params(&vec![0.0; n]);
        let out = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out.mean, vec![0.0]);
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GaussianPolicy::new(3, 1, &[4], 0.0, &mut rng);
        assert_eq!(p.forward(&[1.0]).unwrap_err(), PpoError::DimensionMismatch { expected: 3, got: 1 });
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (p, mut rng) = random_policy(seed);
            let obs: Vec<f64> = (0..p.obs_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let out = p.forward(&obs).unwrap();
            let action = p.sample(&out, &mut rng);
            let mut grad = vec![0.0; p.num_params()];
            p.accumulate_grad(&obs, &action, 1.0, 0.0, 0.0, &mut grad);
            let base = p.flat_params();
            let h = 1e-6;
            let mut err2 = 0.0;
            let mut norm2 = 0.0;
            let actor_and_std = p.actor.params().len() + p.log_std.len();
            for k in 0..actor_and_std {
                let mut q = p.clone();
                let mut v = base.clone();
                v[k] += h;
                q.set_flat_params(&v);
                let up = q.log_prob(&obs, &action).unwrap();
                v[k] -= 2.0 * h;
                q.set_flat_params(&v);
                let down = q.log_prob(&obs, &action).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() <= 1e-4 * fd.abs().max(grad[k].abs()) + 1e-7,
                    "seed {seed} param {k}: fd {fd} analytic {}",
                    grad[k]
                );
                err2 += (fd - grad[k]).powi(2);
                norm2 += fd * fd;
            }
            assert!(err2.sqrt() <= 1e-4 * norm2.sqrt());
            // The critic does not enter the log-probability.
            assert!(grad[actor_and_std..].iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn normalizer_statistics() {
        let mut n = RunningNorm::new(2);
        for i in 0..1000 {
            n.observe(&[i as f64, 5.0]);
        }
        assert!((n.mean[0] - 499.5).abs() < 1e-9);
        assert!((n.std(0) - (1000.0f64 * 1000.0 - 1.0).sqrt() / 12f64.sqrt()).abs() < 1e-6);
        let z = n.normalize(&[499.5, 5.0]);
        assert!(z[0].abs() < 1e-12 && z[1] == 0.0);
        n.frozen = true;
        let before = n.clone();
        n.observe(&[1e9, 1e9]);
        assert_eq!(n, before);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let (mut p, mut rng) = random_policy(7);
        for _ in 0..50 {
            let x: Vec<f64> = (0..p.obs_dim()).map(|_| rng.random_range(-300.0..1300.0)).collect();
            p.obs_norm.observe(&x);
        }
        p.transform = ActionTransform { offset: 1000.0, scale: 100.0 / 3.0 };
        p.save(&path).unwrap();
        let q = GaussianPolicy::load(&path).unwrap();
        assert_eq!(p, q);
        let x: Vec<f64> = (0..p.obs_dim()).map(|i| i as f64 * 0.37 - 1.0).collect();
        assert_eq!(p.act_deterministic(&x).unwrap().to_bits(), q.act_deterministic(&x).unwrap().to_bits());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let (p, _) = random_policy(1);
        assert!(matches!(GaussianPolicy::from_json("not json"), Err(PpoError::VersionMismatch(_))));
        let good = serde_json::to_string(&Checkpoint { version: CHECKPOINT_VERSION.into(), policy: p.clone() }).unwrap();
        let old = good.replace(CHECKPOINT_VERSION, "kyle-marl-policy-v0");
        assert!(matches!(GaussianPolicy::from_json(&old), Err(PpoError::VersionMismatch(_))));
        assert!(matches!(GaussianPolicy::from_json(&good[..good.len() / 2]), Err(PpoError::VersionMismatch(_))));
        assert!(matches!(GaussianPolicy::load(Path::new("/nonexistent/p.json")), Err(PpoError::Io(_))));
    }
}
