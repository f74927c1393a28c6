//! Deterministic evaluation over seeded test environments.

use serde::{Deserialize, Serialize};

use crate::barrier::Vec2;
use crate::env::{self, EnvConfig, EnvState, ObsHistory, StepAction, Terminal, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::filter::filter_action;
use crate::io::eval_env_seed;
use crate::policy::{clip_to_ball, Checkpoint, GaussianPolicy, ACTION_DIM};

/// Maps a batch of environments to proposed velocities.
pub trait Controller {
    /// `obs` is the stacked observation block, one row per state.
    fn act_batch(&self, states: &[&EnvState], obs: &[f64]) -> Result<Vec<Vec2>>;
}

/// Deployment uses the policy mean.
impl Controller for GaussianPolicy {
    fn act_batch(&self, states: &[&EnvState], obs: &[f64]) -> Result<Vec<Vec2>> {
        let means = self.mean_batch(obs, states.len())?;
        Ok(means
            .chunks_exact(ACTION_DIM)
            .map(|m| clip_to_ball(Vec2::new(m[0], m[1]), self.v_max))
            .collect())
    }
}

/// Heads straight for the goal at full speed.
#[derive(Debug, Clone, Copy)]
pub struct GoToGoal {
    pub v_max: f64,
}

impl Controller for GoToGoal {
    fn act_batch(&self, states: &[&EnvState], _obs: &[f64]) -> Result<Vec<Vec2>> {
        Ok(states
            .iter()
            .map(|s| {
                let d = s.goal - s.q;
                let n = d.norm();
                if n > 0.0 {
                    d * (self.v_max / n)
                } else {
                    Vec2::zeros()
                }
            })
            .collect())
    }
}

/// Controller from a per-state closure.
pub struct FnController<F>(pub F);

impl<F: Fn(&EnvState) -> Vec2> Controller for FnController<F> {
    fn act_batch(&self, states: &[&EnvState], _obs: &[f64]) -> Result<Vec<Vec2>> {
        Ok(states.iter().map(|s| (self.0)(s)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_episodes: usize,
    pub runtime_filter: bool,
    pub dr: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub runtime_filter: bool,
    pub dr: bool,
    pub seed: u64,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub obstacle_collision_rate: f64,
    pub wall_collision_rate: f64,
    pub timeout_rate: f64,
    pub mean_episode_length: f64,
    pub mean_min_h: f64,
    /// Fraction of steps whose proposed action violated the barrier condition
    /// (and was corrected, when the runtime filter is on).
    pub filter_activation_rate: f64,
}

impl EvalReport {
    pub fn collisions(&self) -> usize {
        (self.collision_rate * self.n_episodes as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub trajectories: Vec<TrajectoryRecord>,
}

pub fn evaluate<C: Controller + ?Sized>(controller: &C, env_cfg: &EnvConfig, opts: &EvalOptions) -> Result<EvalReport> {
    Ok(run_episodes(controller, env_cfg, opts, false)?.report)
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, opts: &EvalOptions) -> Result<EvalReport> {
    evaluate(&ckpt.policy, &ckpt.env, opts)
}

/// Runs `opts.n_episodes` episodes side by side until each terminates.
pub fn run_episodes<C: Controller + ?Sized>(
    controller: &C,
    env_cfg: &EnvConfig,
    opts: &EvalOptions,
    record: bool,
) -> Result<EvalRun> {
    if opts.n_episodes == 0 {
        return Err(Error::InvalidParameter("evaluation needs at least one episode".into()));
    }
    let cfg = EnvConfig {
        dr_enabled: opts.dr,
        ..env_cfg.clone()
    };
    cfg.validate()?;
    let fparams = cfg.filter_params();
    let mut states = (0..opts.n_episodes)
        .map(|i| env::reset(&cfg, eval_env_seed(opts.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut histories: Vec<ObsHistory> = states.iter().map(|s| ObsHistory::new(cfg.obs_history, s)).collect();
    let mut trajectories = Vec::new();
    let mut total_steps = 0u64;
    let mut activations = 0u64;
    let obs_dim = cfg.policy_obs_dim();

    loop {
        let active: Vec<usize> = (0..states.len()).filter(|&i| states[i].is_active()).collect();
        if active.is_empty() {
            break;
        }
        let mut obs = Vec::with_capacity(active.len() * obs_dim);
        for &i in &active {
            obs.extend_from_slice(histories[i].as_slice());
        }
        let proposals = {
            let refs: Vec<&EnvState> = active.iter().map(|&i| &states[i]).collect();
            controller.act_batch(&refs, &obs)?
        };
        if proposals.len() != active.len() {
            return Err(Error::LengthMismatch {
                expected: active.len(),
                actual: proposals.len(),
            });
        }
        for (&i, v) in active.iter().zip(proposals) {
            let state = &mut states[i];
            let v_policy = clip_to_ball(v, cfg.v_max);
            let filtered = filter_action(&state.barrier(), &fparams, &v_policy);
            if filtered.margin < 0.0 {
                activations += 1;
            }
            let executed = if opts.runtime_filter { filtered.v_safe } else { v_policy };
            let action = StepAction {
                v_exec: clip_to_ball(executed, cfg.v_max),
                v_policy,
                v_safe: filtered.v_safe,
                cbf_reward: false,
            };
            let q = state.q;
            let step_index = state.step_count;
            let out = env::step(state, &action, &cfg);
            total_steps += 1;
            if record {
                trajectories.push(TrajectoryRecord::new(i, step_index, q, &action, &out));
            }
            if !out.terminal.is_done() {
                histories[i].push(state);
            }
        }
    }

    let n = opts.n_episodes as f64;
    let count = |t: Terminal| states.iter().filter(|s| s.terminal == t).count() as f64;
    let obstacle = count(Terminal::ObstacleCollision);
    let wall = count(Terminal::WallCollision);
    let report = EvalReport {
        n_episodes: opts.n_episodes,
        runtime_filter: opts.runtime_filter,
        dr: opts.dr,
        seed: opts.seed,
        success_rate: count(Terminal::GoalReached) / n,
        collision_rate: (obstacle + wall) / n,
        obstacle_collision_rate: obstacle / n,
        wall_collision_rate: wall / n,
        timeout_rate: count(Terminal::Timeout) / n,
        mean_episode_length: states.iter().map(|s| s.step_count as f64).sum::<f64>() / n,
        mean_min_h: states.iter().map(|s| s.min_h).sum::<f64>() / n,
        filter_activation_rate: activations as f64 / total_steps.max(1) as f64,
    };
    Ok(EvalRun { report, trajectories })
}
