//! Training loop: sample, filter, step, store, update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::variant::VariantConfig;
use crate::barrier::Vec2;
use crate::env::{self, EnvConfig, EnvState, ObsHistory, StepAction, Terminal};
use crate::error::{Error, Result};
use crate::filter::filter_action;
use crate::io::{derive_seed, sha256_hex, train_env_seed};
use crate::policy::{
    clip_to_ball, gae_advantages, ppo_update, Adam, Checkpoint, GaussianPolicy, PpoConfig, RewardScaler, RolloutBatch,
    ValueNet, ACTION_DIM,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_envs: usize,
    pub num_iterations: usize,
    pub steps_per_iteration: usize,
    pub seed: u64,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 256,
            num_iterations: 1500,
            steps_per_iteration: 24,
            seed: 0,
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 || self.steps_per_iteration == 0 {
            return Err(Error::InvalidParameter(
                "num_envs and steps_per_iteration must be at least 1".into(),
            ));
        }
        self.env.validate()?;
        self.ppo.validate()
    }

    /// Environment settings for `variant` (DR switched per variant).
    pub fn env_for(&self, variant: &VariantConfig) -> EnvConfig {
        EnvConfig {
            dr_enabled: variant.dr,
            ..self.env.clone()
        }
    }
}

/// Per-iteration training curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub mean_cbf_reward: f64,
    /// Fraction of steps where the filter changed the executed action
    /// (always 0 when the mode does not filter).
    pub filter_activation_rate: f64,
    /// Fraction of steps whose proposed action violated the barrier
    /// condition, filtered or not.
    pub violation_rate: f64,
    pub episodes: u64,
    pub goals: u64,
    pub obstacle_collisions: u64,
    pub wall_collisions: u64,
    pub timeouts: u64,
    /// Mean over environments of the smallest barrier value in the iteration.
    pub mean_min_h: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub action_std: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub variant: VariantConfig,
    pub checkpoint: Checkpoint,
    pub curves: Vec<IterationMetrics>,
}

impl TrainOutcome {
    pub fn total_obstacle_collisions(&self) -> u64 {
        self.curves.iter().map(|m| m.obstacle_collisions).sum()
    }

    pub fn total_wall_collisions(&self) -> u64 {
        self.curves.iter().map(|m| m.wall_collisions).sum()
    }
}

/// Hash identifying a (variant, training config) pair.
pub fn run_hash(variant: &VariantConfig, cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(&(variant, cfg)).expect("config serializes");
    sha256_hex(&json)
}

struct Slot {
    state: EnvState,
    history: ObsHistory,
    episode: u64,
}

impl Slot {
    fn new(env_cfg: &EnvConfig, seed: u64, index: usize) -> Result<Self> {
        let state = env::reset(env_cfg, train_env_seed(seed, index as u64, 0))?;
        let history = ObsHistory::new(env_cfg.obs_history, &state);
        Ok(Self {
            state,
            history,
            episode: 0,
        })
    }

    fn restart(&mut self, env_cfg: &EnvConfig, seed: u64, index: usize) -> Result<()> {
        self.episode += 1;
        self.state = env::reset(env_cfg, train_env_seed(seed, index as u64, self.episode))?;
        self.history = ObsHistory::new(env_cfg.obs_history, &self.state);
        Ok(())
    }
}

fn gather_obs(slots: &[Slot], obs_dim: usize, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(slots.len() * obs_dim);
    for s in slots {
        out.extend_from_slice(s.history.as_slice());
    }
}

pub fn train_variant(variant: &VariantConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_variant_with(variant, cfg, |_| {})
}

/// Trains one variant, calling `on_iteration` after every update.
pub fn train_variant_with(
    variant: &VariantConfig,
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env_cfg = cfg.env_for(variant);
    let mode = variant.training_mode;
    let fparams = env_cfg.filter_params();
    let obs_dim = env_cfg.policy_obs_dim();
    let n = cfg.num_envs;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x1417, 0));
    let mut policy = GaussianPolicy::new(obs_dim, &cfg.ppo.hidden_sizes, env_cfg.v_max, &mut init_rng)?;
    let mut value = ValueNet::new(obs_dim, &cfg.ppo.hidden_sizes, &mut init_rng)?;
    let mut optimizer = Adam::for_models(&policy, &value);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5A3D, 1));
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x0BD7, 2));

    let mut slots = (0..n)
        .map(|i| Slot::new(&env_cfg, cfg.seed, i))
        .collect::<Result<Vec<_>>>()?;

    let mut obs = Vec::new();
    let mut actions = vec![0.0; n * ACTION_DIM];
    let mut log_probs = vec![0.0; n];
    let mut rewards = vec![0.0; n];
    let mut dones = vec![false; n];
    let mut scaler = cfg.ppo.scale_rewards.then(|| RewardScaler::new(n, cfg.ppo.gamma));
    let mut curves = Vec::with_capacity(cfg.num_iterations);
    let mut env_steps = 0u64;

    for iteration in 0..cfg.num_iterations {
        let mut batch = RolloutBatch::with_capacity(cfg.steps_per_iteration, n, obs_dim);
        let mut reward_sum = 0.0;
        let mut cbf_sum = 0.0;
        let mut activations = 0u64;
        let mut violations = 0u64;
        let (mut episodes, mut goals, mut obstacle_hits, mut wall_hits, mut timeouts) = (0, 0, 0, 0, 0);
        let mut min_h: Vec<f64> = slots.iter().map(|s| s.state.barrier().value).collect();

        for _ in 0..cfg.steps_per_iteration {
            gather_obs(&slots, obs_dim, &mut obs);
            let means = policy.mean_batch(&obs, n)?;
            let values = value.predict(&obs, n)?;
            for (i, slot) in slots.iter_mut().enumerate() {
                let sample = policy.sample_from_mean(&means[i * ACTION_DIM..(i + 1) * ACTION_DIM], &mut sample_rng);
                actions[i * ACTION_DIM] = sample.raw.x;
                actions[i * ACTION_DIM + 1] = sample.raw.y;
                log_probs[i] = sample.log_prob;

                let v_policy = sample.clipped;
                let filtered = filter_action(&slot.state.barrier(), &fparams, &v_policy);
                if filtered.margin < 0.0 {
                    violations += 1;
                    if mode.filters() {
                        activations += 1;
                    }
                }
                let executed: Vec2 = if mode.filters() { filtered.v_safe } else { v_policy };
                let action = StepAction {
                    v_exec: clip_to_ball(executed, env_cfg.v_max),
                    v_policy,
                    v_safe: filtered.v_safe,
                    cbf_reward: mode.shapes_reward(),
                };
                let out = env::step(&mut slot.state, &action, &env_cfg);
                rewards[i] = out.total_reward;
                reward_sum += out.total_reward;
                cbf_sum += out.rewards.cbf;
                min_h[i] = min_h[i].min(out.h);
                dones[i] = out.terminal.is_done();
                match out.terminal {
                    Terminal::None => slot.history.push(&slot.state),
                    t => {
                        episodes += 1;
                        match t {
                            Terminal::GoalReached => goals += 1,
                            Terminal::ObstacleCollision => obstacle_hits += 1,
                            Terminal::WallCollision => wall_hits += 1,
                            Terminal::Timeout => timeouts += 1,
                            Terminal::None => unreachable!(),
                        }
                        slot.restart(&env_cfg, cfg.seed, i)?;
                    }
                }
            }
            if let Some(scaler) = scaler.as_mut() {
                scaler.scale(&mut rewards, &dones);
            }
            batch.push_step(&obs, &actions, &log_probs, &values, &rewards, &dones)?;
        }
        gather_obs(&slots, obs_dim, &mut obs);
        batch.last_values = value.predict(&obs, n)?;
        gae_advantages(&mut batch, cfg.ppo.gamma, cfg.ppo.lambda);
        let stats = ppo_update(
            &mut policy,
            &mut value,
            &batch,
            &cfg.ppo,
            &mut optimizer,
            &mut update_rng,
        )
        .map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("{} iteration {iteration}: {msg}", variant.label)),
            other => other,
        })?;

        let steps = (n * cfg.steps_per_iteration) as f64;
        env_steps += steps as u64;
        let metrics = IterationMetrics {
            iteration,
            env_steps,
            mean_reward: reward_sum / steps,
            mean_cbf_reward: cbf_sum / steps,
            filter_activation_rate: activations as f64 / steps,
            violation_rate: violations as f64 / steps,
            episodes,
            goals,
            obstacle_collisions: obstacle_hits,
            wall_collisions: wall_hits,
            timeouts,
            mean_min_h: min_h.iter().sum::<f64>() / n as f64,
            policy_loss: stats.after.policy,
            value_loss: stats.after.value,
            entropy: stats.after.entropy,
            approx_kl: stats.after.approx_kl,
            grad_norm: stats.grad_norm,
            action_std: policy.std().iter().sum::<f64>() / ACTION_DIM as f64,
        };
        if !metrics.mean_reward.is_finite() || !metrics.value_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} iteration {iteration}: mean reward {} value loss {}",
                variant.label, metrics.mean_reward, metrics.value_loss
            )));
        }
        on_iteration(&metrics);
        curves.push(metrics);
    }

    let checkpoint = Checkpoint::new(
        variant.label.clone(),
        run_hash(variant, cfg),
        env_steps,
        env_cfg,
        policy,
        value,
    );
    Ok(TrainOutcome {
        variant: variant.clone(),
        checkpoint,
        curves,
    })
}
