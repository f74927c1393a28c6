//! Randomized planar single-integrator navigation environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::barrier::{eval_composite, ActiveConstraint, Barrier, BarrierEval, Obstacle, Vec2, WorldSpec};
use crate::error::{Error, Result};
use crate::filter::FilterParams;

/// Obstacles described in the observation, nearest first.
pub const OBSERVED_OBSTACLES: usize = 3;
/// Length of a single observation frame.
pub const OBS_DIM: usize = 2 + 2 + 3 * OBSERVED_OBSTACLES + 1 + 4;

/// Rejection-sampling budget for one reset.
pub const MAX_RESET_ATTEMPTS: usize = 10_000;

pub const GOAL_REWARD: f64 = 1.0;
pub const OBSTACLE_PENALTY: f64 = -1.0;
pub const WALL_PENALTY: f64 = -1.0;
pub const PROGRESS_WEIGHT: f64 = 20.0;
pub const ALIVE_REWARD: f64 = 0.01;
pub const TIMEOUT_PENALTY: f64 = -10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub side_length: f64,
    pub agent_radius: f64,
    pub num_obstacles: usize,
    pub obstacle_radius_min: f64,
    pub obstacle_radius_max: f64,
    /// Minimum gap between inflated obstacles, and between inflated
    /// obstacles and the walls, at reset.
    pub obstacle_clearance: f64,
    pub dt: f64,
    pub v_max: f64,
    pub horizon: usize,
    pub goal_radius: f64,
    /// Minimum barrier value of the start and goal at reset.
    pub init_margin: f64,
    pub dr_enabled: bool,
    /// Per-axis noise std as a fraction of `v_max`.
    pub dr_scale: f64,
    pub cbf_weight: f64,
    pub cbf_sigma: f64,
    /// Caps the margin term of the cbf reward. Unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbf_margin_cap: Option<f64>,
    pub alpha: f64,
    /// Number of stacked observation frames fed to the policy.
    pub obs_history: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            side_length: 10.0,
            agent_radius: 0.3,
            num_obstacles: 3,
            obstacle_radius_min: 0.5,
            obstacle_radius_max: 1.0,
            obstacle_clearance: 0.2,
            dt: 0.05,
            v_max: 2.0,
            horizon: 200,
            goal_radius: 0.3,
            init_margin: 0.2,
            dr_enabled: false,
            dr_scale: 0.2,
            cbf_weight: 100.0,
            cbf_sigma: 0.5,
            cbf_margin_cap: None,
            alpha: 1.0,
            obs_history: 1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.v_max > 0.0) {
            return bad(format!("v_max must be positive, got {}", self.v_max));
        }
        if !(0.0..=1.0).contains(&self.dr_scale) {
            return bad(format!("dr_scale must lie in [0, 1], got {}", self.dr_scale));
        }
        if !(self.goal_radius > 0.0) {
            return bad(format!("goal_radius must be positive, got {}", self.goal_radius));
        }
        if !(self.side_length > 0.0) || !(self.agent_radius > 0.0) {
            return bad("side_length and agent_radius must be positive".into());
        }
        if !(self.obstacle_radius_min > 0.0 && self.obstacle_radius_min <= self.obstacle_radius_max) {
            return bad(format!(
                "obstacle radius range [{}, {}] is invalid",
                self.obstacle_radius_min, self.obstacle_radius_max
            ));
        }
        if !(self.obstacle_clearance >= 0.0) || !(self.init_margin >= 0.0) {
            return bad("obstacle_clearance and init_margin must be non-negative".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step".into());
        }
        if !(self.cbf_sigma > 0.0) || !(self.cbf_weight >= 0.0) {
            return bad("cbf_sigma must be positive and cbf_weight non-negative".into());
        }
        if self.cbf_margin_cap.is_some_and(|c| !(c >= 0.0)) {
            return bad("cbf_margin_cap must be non-negative".into());
        }
        if self.obs_history == 0 {
            return bad("obs_history must be at least 1".into());
        }
        FilterParams::new(self.alpha, self.dt)?;
        Ok(())
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            alpha: self.alpha,
            dt: self.dt,
        }
    }

    pub fn policy_obs_dim(&self) -> usize {
        OBS_DIM * self.obs_history
    }

    pub fn noise_std(&self) -> f64 {
        self.dr_scale * self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    GoalReached,
    ObstacleCollision,
    WallCollision,
    Timeout,
}

impl Terminal {
    pub fn is_done(&self) -> bool {
        *self != Terminal::None
    }

    pub fn is_collision(&self) -> bool {
        matches!(self, Terminal::ObstacleCollision | Terminal::WallCollision)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Terminal::None => "none",
            Terminal::GoalReached => "goal_reached",
            Terminal::ObstacleCollision => "obstacle_collision",
            Terminal::WallCollision => "wall_collision",
            Terminal::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub q: Vec2,
    pub goal: Vec2,
    pub world: WorldSpec,
    pub step_count: usize,
    pub rng: ChaCha8Rng,
    /// Set once the episode ends; later steps are inactive.
    pub terminal: Terminal,
    /// Smallest barrier value seen this episode.
    pub min_h: f64,
}

impl EnvState {
    pub fn is_active(&self) -> bool {
        !self.terminal.is_done()
    }

    pub fn barrier(&self) -> BarrierEval {
        eval_composite(&self.world, &self.q)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub goal: f64,
    pub obstacle: f64,
    pub wall: f64,
    pub progress: f64,
    pub alive: f64,
    pub cbf: f64,
    pub timeout: f64,
}

impl RewardComponents {
    pub fn total(&self) -> f64 {
        self.goal + self.obstacle + self.wall + self.progress + self.alive + self.cbf + self.timeout
    }
}

/// Velocities involved in one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAction {
    /// Velocity applied to the dynamics.
    pub v_exec: Vec2,
    pub v_policy: Vec2,
    pub v_safe: Vec2,
    /// Whether the barrier-shaped reward term is part of this run's reward.
    pub cbf_reward: bool,
}

impl StepAction {
    pub fn unfiltered(v: Vec2, cbf_reward: bool) -> Self {
        Self {
            v_exec: v,
            v_policy: v,
            v_safe: v,
            cbf_reward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// False when the episode had already ended; nothing moved and every
    /// reward is zero.
    pub active: bool,
    pub rewards: RewardComponents,
    pub total_reward: f64,
    pub terminal: Terminal,
    /// Barrier at the configuration before the step.
    pub h_prev: f64,
    /// Barrier at the configuration after the step.
    pub h: f64,
    pub active_constraint: ActiveConstraint,
    pub noise: Vec2,
}

impl StepOutcome {
    fn inactive(state: &EnvState) -> Self {
        let e = state.barrier();
        Self {
            active: false,
            rewards: RewardComponents::default(),
            total_reward: 0.0,
            terminal: Terminal::None,
            h_prev: e.value,
            h: e.value,
            active_constraint: e.active,
            noise: Vec2::zeros(),
        }
    }
}

fn sample_world(config: &EnvConfig, rng: &mut ChaCha8Rng, attempts: &mut usize) -> Result<WorldSpec> {
    let l = config.side_length;
    let ra = config.agent_radius;
    let gap = config.obstacle_clearance;
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(config.num_obstacles);
    while obstacles.len() < config.num_obstacles {
        *attempts += 1;
        if *attempts > MAX_RESET_ATTEMPTS {
            return Err(Error::RejectionExhausted {
                what: "obstacles",
                attempts: MAX_RESET_ATTEMPTS,
            });
        }
        let r = rng.random_range(config.obstacle_radius_min..=config.obstacle_radius_max);
        let inflated = ra + r;
        // inflated disc must stay `gap` away from the agent-center walls at `ra`
        let lo = ra + inflated + gap;
        let hi = l - ra - inflated - gap;
        if !(lo < hi) {
            continue;
        }
        let c = Vec2::new(rng.random_range(lo..hi), rng.random_range(lo..hi));
        let separated = obstacles
            .iter()
            .all(|o| (o.center - c).norm() - (ra + o.radius) - inflated >= gap);
        if separated {
            obstacles.push(Obstacle { center: c, radius: r });
        }
    }
    WorldSpec::new(l, ra, obstacles)
}

fn sample_free_point(
    world: &WorldSpec,
    margin: f64,
    rng: &mut ChaCha8Rng,
    attempts: &mut usize,
    accept: impl Fn(&Vec2) -> bool,
) -> Result<Vec2> {
    let l = world.side_length;
    loop {
        *attempts += 1;
        if *attempts > MAX_RESET_ATTEMPTS {
            return Err(Error::RejectionExhausted {
                what: "start/goal",
                attempts: MAX_RESET_ATTEMPTS,
            });
        }
        let p = Vec2::new(rng.random_range(0.0..l), rng.random_range(0.0..l));
        if world.value(&p) >= margin && accept(&p) {
            return Ok(p);
        }
    }
}

/// Samples a world, start and goal from a seeded stream.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<EnvState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0;
    let world = sample_world(config, &mut rng, &mut attempts)?;
    let goal = sample_free_point(&world, config.init_margin, &mut rng, &mut attempts, |_| true)?;
    let q = sample_free_point(&world, config.init_margin, &mut rng, &mut attempts, |p| {
        (p - goal).norm() > config.goal_radius
    })?;
    let min_h = world.value(&q);
    Ok(EnvState {
        q,
        goal,
        world,
        step_count: 0,
        rng,
        terminal: Terminal::None,
        min_h,
    })
}

/// `w * [max(a^T v_policy - b, 0) + exp(-||v_policy - v_safe||^2 / sigma^2) - 1]`
/// with `a = grad h`, `b = -alpha h`. Zero for a degenerate evaluation. The
/// margin term is clamped to `cbf_margin_cap` when one is set.
pub fn cbf_reward(eval: &BarrierEval, v_policy: &Vec2, v_safe: &Vec2, config: &EnvConfig) -> f64 {
    if eval.degenerate {
        return 0.0;
    }
    let margin = eval.gradient.dot(v_policy) + config.alpha * eval.value;
    let gap = (v_policy - v_safe).norm_squared();
    let sigma_sq = config.cbf_sigma * config.cbf_sigma;
    let margin = margin.max(0.0).min(config.cbf_margin_cap.unwrap_or(f64::INFINITY));
    config.cbf_weight * (margin + (-gap / sigma_sq).exp() - 1.0)
}

/// Distance-to-goal progress reward for moving from `prev` to `next`.
pub fn progress_reward(prev: &Vec2, next: &Vec2, goal: &Vec2, config: &EnvConfig) -> f64 {
    PROGRESS_WEIGHT * ((prev - goal).norm() - (next - goal).norm()) / (config.v_max * config.dt)
}

/// Advances one environment by one Euler step of `action.v_exec`.
pub fn step(state: &mut EnvState, action: &StepAction, config: &EnvConfig) -> StepOutcome {
    if !state.is_active() {
        return StepOutcome::inactive(state);
    }
    let before = state.barrier();
    let noise = if config.dr_enabled && config.dr_scale > 0.0 {
        let n = Normal::new(0.0, config.noise_std()).expect("finite std");
        Vec2::new(n.sample(&mut state.rng), n.sample(&mut state.rng))
    } else {
        Vec2::zeros()
    };
    let prev = state.q;
    let next = prev + (action.v_exec + noise) * config.dt;
    let after = eval_composite(&state.world, &next);
    state.q = next;
    state.step_count += 1;
    state.min_h = state.min_h.min(after.value);

    let terminal = if after.value < 0.0 {
        if after.active.is_obstacle() {
            Terminal::ObstacleCollision
        } else {
            Terminal::WallCollision
        }
    } else if (next - state.goal).norm() <= config.goal_radius {
        Terminal::GoalReached
    } else if state.step_count >= config.horizon {
        Terminal::Timeout
    } else {
        Terminal::None
    };
    state.terminal = terminal;

    let rewards = RewardComponents {
        goal: if terminal == Terminal::GoalReached {
            GOAL_REWARD
        } else {
            0.0
        },
        obstacle: if terminal == Terminal::ObstacleCollision {
            OBSTACLE_PENALTY
        } else {
            0.0
        },
        wall: if terminal == Terminal::WallCollision {
            WALL_PENALTY
        } else {
            0.0
        },
        progress: progress_reward(&prev, &next, &state.goal, config),
        alive: ALIVE_REWARD,
        cbf: if action.cbf_reward {
            cbf_reward(&before, &action.v_policy, &action.v_safe, config)
        } else {
            0.0
        },
        timeout: if terminal == Terminal::Timeout {
            TIMEOUT_PENALTY
        } else {
            0.0
        },
    };

    StepOutcome {
        active: true,
        total_reward: rewards.total(),
        rewards,
        terminal,
        h_prev: before.value,
        h: after.value,
        active_constraint: after.active,
        noise,
    }
}

/// Steps every environment with its own action.
pub fn batch_step(states: &mut [EnvState], actions: &[StepAction], config: &EnvConfig) -> Result<Vec<StepOutcome>> {
    if states.len() != actions.len() {
        return Err(Error::LengthMismatch {
            expected: states.len(),
            actual: actions.len(),
        });
    }
    Ok(states
        .iter_mut()
        .zip(actions)
        .map(|(s, a)| step(s, a, config))
        .collect())
}

/// Writes one observation frame into `out` (length [`OBS_DIM`]).
///
/// Layout: `(g - q)/L`, `q/L`, then for the nearest obstacles
/// `((p_j - q)/L, (r_agent + r_j)/L)` (zero-padded), `h(q)/L`, and the four
/// wall clearances `/L`.
pub fn observe_into(state: &EnvState, out: &mut [f64]) {
    assert_eq!(out.len(), OBS_DIM, "observation buffer length");
    let w = &state.world;
    let l = w.side_length;
    let q = state.q;
    out[0] = (state.goal.x - q.x) / l;
    out[1] = (state.goal.y - q.y) / l;
    out[2] = q.x / l;
    out[3] = q.y / l;

    let mut order: Vec<(f64, usize)> = (0..w.obstacles.len())
        .map(|j| (w.obstacle_clearance(j, &q), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for slot in 0..OBSERVED_OBSTACLES {
        let base = 4 + 3 * slot;
        match order.get(slot) {
            Some(&(_, j)) => {
                let o = &w.obstacles[j];
                out[base] = (o.center.x - q.x) / l;
                out[base + 1] = (o.center.y - q.y) / l;
                out[base + 2] = (w.agent_radius + o.radius) / l;
            }
            None => out[base..base + 3].fill(0.0),
        }
    }
    let base = 4 + 3 * OBSERVED_OBSTACLES;
    out[base] = w.value(&q) / l;
    for (i, c) in w.wall_clearances(&q).iter().enumerate() {
        out[base + 1 + i] = c / l;
    }
}

pub fn observe(state: &EnvState) -> Vec<f64> {
    let mut out = vec![0.0; OBS_DIM];
    observe_into(state, &mut out);
    out
}

/// Rolling stack of the most recent observation frames, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsHistory {
    frames: usize,
    buf: Vec<f64>,
}

impl ObsHistory {
    /// Fills every slot with the current frame.
    pub fn new(frames: usize, state: &EnvState) -> Self {
        let frame = observe(state);
        let buf = frame.iter().copied().cycle().take(frames * OBS_DIM).collect();
        Self { frames, buf }
    }

    pub fn push(&mut self, state: &EnvState) {
        if self.frames > 1 {
            self.buf.copy_within(0..(self.frames - 1) * OBS_DIM, OBS_DIM);
        }
        observe_into(state, &mut self.buf[..OBS_DIM]);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.buf
    }
}

/// One row of the trajectory export; identical columns in JSONL and CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub step: usize,
    pub q_x: f64,
    pub q_y: f64,
    pub v_policy_x: f64,
    pub v_policy_y: f64,
    pub v_safe_x: f64,
    pub v_safe_y: f64,
    pub v_exec_x: f64,
    pub v_exec_y: f64,
    pub h: f64,
    pub r_goal: f64,
    pub r_obstacle: f64,
    pub r_wall: f64,
    pub r_progress: f64,
    pub r_alive: f64,
    pub r_cbf: f64,
    pub r_timeout: f64,
    pub total_reward: f64,
    pub terminal: Terminal,
}

impl TrajectoryRecord {
    pub const COLUMNS: [&'static str; 20] = [
        "episode",
        "step",
        "q_x",
        "q_y",
        "v_policy_x",
        "v_policy_y",
        "v_safe_x",
        "v_safe_y",
        "v_exec_x",
        "v_exec_y",
        "h",
        "r_goal",
        "r_obstacle",
        "r_wall",
        "r_progress",
        "r_alive",
        "r_cbf",
        "r_timeout",
        "total_reward",
        "terminal",
    ];

    /// Record for the step that started at `q`.
    pub fn new(episode: usize, step: usize, q: Vec2, action: &StepAction, outcome: &StepOutcome) -> Self {
        let r = &outcome.rewards;
        Self {
            episode,
            step,
            q_x: q.x,
            q_y: q.y,
            v_policy_x: action.v_policy.x,
            v_policy_y: action.v_policy.y,
            v_safe_x: action.v_safe.x,
            v_safe_y: action.v_safe.y,
            v_exec_x: action.v_exec.x,
            v_exec_y: action.v_exec.y,
            h: outcome.h_prev,
            r_goal: r.goal,
            r_obstacle: r.obstacle,
            r_wall: r.wall,
            r_progress: r.progress,
            r_alive: r.alive,
            r_cbf: r.cbf,
            r_timeout: r.timeout,
            total_reward: outcome.total_reward,
            terminal: outcome.terminal,
        }
    }

    fn csv_fields(&self) -> Vec<String> {
        use crate::io::sig9;
        let mut f = vec![self.episode.to_string(), self.step.to_string()];
        f.extend(
            [
                self.q_x,
                self.q_y,
                self.v_policy_x,
                self.v_policy_y,
                self.v_safe_x,
                self.v_safe_y,
                self.v_exec_x,
                self.v_exec_y,
                self.h,
                self.r_goal,
                self.r_obstacle,
                self.r_wall,
                self.r_progress,
                self.r_alive,
                self.r_cbf,
                self.r_timeout,
                self.total_reward,
            ]
            .map(sig9),
        );
        f.push(self.terminal.as_str().to_string());
        f
    }
}

pub fn write_trajectory_csv<W: std::io::Write>(w: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TrajectoryRecord::COLUMNS)?;
    for r in records {
        out.write_record(r.csv_fields())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trajectory_jsonl<W: std::io::Write>(w: W, records: &[TrajectoryRecord]) -> Result<()> {
    crate::io::write_jsonl(w, records)
}
