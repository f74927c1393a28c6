use super::gaussian::ACTION_DIM;
use crate::error::{Error, Result};

/// Fixed-length rollout of `num_steps` steps over `num_envs` environments.
/// Per-step arrays are indexed `t * num_envs + env`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub num_steps: usize,
    pub num_envs: usize,
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    /// Raw (pre-clip) sampled actions.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Episode ended at this step.
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Value of the observation following the last step, per environment.
    pub last_values: Vec<f64>,
}

impl RolloutBatch {
    pub fn with_capacity(num_steps: usize, num_envs: usize, obs_dim: usize) -> Self {
        let n = num_steps * num_envs;
        Self {
            num_steps: 0,
            num_envs,
            obs_dim,
            observations: Vec::with_capacity(n * obs_dim),
            actions: Vec::with_capacity(n * ACTION_DIM),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            advantages: Vec::new(),
            returns: Vec::new(),
            last_values: vec![0.0; num_envs],
        }
    }

    pub fn len(&self) -> usize {
        self.num_steps * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one synchronized step for every environment.
    #[allow(clippy::too_many_arguments)]
    pub fn push_step(
        &mut self,
        observations: &[f64],
        actions: &[f64],
        log_probs: &[f64],
        values: &[f64],
        rewards: &[f64],
        dones: &[bool],
    ) -> Result<()> {
        let n = self.num_envs;
        let checks = [
            (observations.len(), n * self.obs_dim),
            (actions.len(), n * ACTION_DIM),
            (log_probs.len(), n),
            (values.len(), n),
            (rewards.len(), n),
            (dones.len(), n),
        ];
        for (actual, expected) in checks {
            if actual != expected {
                return Err(Error::LengthMismatch { expected, actual });
            }
        }
        self.observations.extend_from_slice(observations);
        self.actions.extend_from_slice(actions);
        self.log_probs.extend_from_slice(log_probs);
        self.values.extend_from_slice(values);
        self.rewards.extend_from_slice(rewards);
        self.dones.extend_from_slice(dones);
        self.num_steps += 1;
        Ok(())
    }
}

/// Generalized advantage estimation within episode boundaries; terminal
/// steps do not bootstrap. Fills `advantages` and `returns`.
/// Divides rewards by the running standard deviation of the discounted
/// return, so value targets stay near unit scale whatever the reward
/// magnitude. The sign and relative size of rewards are unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardScaler {
    gamma: f64,
    returns: Vec<f64>,
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardScaler {
    pub fn new(num_envs: usize, gamma: f64) -> Self {
        Self {
            gamma,
            returns: vec![0.0; num_envs],
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }

    /// Updates the statistics with one step of rewards and rescales them in place.
    pub fn scale(&mut self, rewards: &mut [f64], dones: &[bool]) {
        for (ret, &r) in self.returns.iter_mut().zip(rewards.iter()) {
            *ret = *ret * self.gamma + r;
            self.count += 1.0;
            let delta = *ret - self.mean;
            self.mean += delta / self.count;
            self.m2 += delta * (*ret - self.mean);
        }
        let inv = 1.0 / (self.std() + 1e-8);
        for ((r, ret), &done) in rewards.iter_mut().zip(&mut self.returns).zip(dones) {
            *r *= inv;
            if done {
                *ret = 0.0;
            }
        }
    }
}

pub fn gae_advantages(batch: &mut RolloutBatch, gamma: f64, lambda: f64) {
    let (t_max, n) = (batch.num_steps, batch.num_envs);
    batch.advantages = vec![0.0; t_max * n];
    batch.returns = vec![0.0; t_max * n];
    for env in 0..n {
        let mut next_value = batch.last_values[env];
        let mut running = 0.0;
        for t in (0..t_max).rev() {
            let i = t * n + env;
            let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
            let delta = batch.rewards[i] + gamma * next_value * not_done - batch.values[i];
            running = delta + gamma * lambda * not_done * running;
            batch.advantages[i] = running;
            batch.returns[i] = running + batch.values[i];
            next_value = batch.values[i];
        }
    }
}
