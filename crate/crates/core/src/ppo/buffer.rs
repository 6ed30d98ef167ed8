//! Rollout storage and generalised advantage estimation.

use super::PpoError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    /// Normalised observations as seen by the policy.
    pub obs: Vec<Vec<f64>>,
    /// Pre-transform actions.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// The episode ends after this step.
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, action: Vec<f64>, log_prob: f64, reward: f64, value: f64, done: bool) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    /// Fills `advantages` and `returns` from the stored rewards and values.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<(), PpoError> {
        let (a, r) = gae_advantages(&self.rewards, &self.values, &self.dones, gamma, lambda)?;
        self.advantages = a;
        self.returns = r;
        Ok(())
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// Advantages and value targets over complete episodes. Episodes end at
/// steps flagged done; the value after a terminal step is zero.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(PpoError::DimensionMismatch { expected: n, got: values.len().min(dones.len()) });
    }
    if n > 0 && !dones[n - 1] {
        return Err(PpoError::IncompleteEpisode);
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] { (0.0, 0.0) } else { (values[t + 1], running) };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}
