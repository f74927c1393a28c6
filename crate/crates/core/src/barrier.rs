//! Barrier functions over the planar navigation world.
//!
//! The composite barrier is the minimum of one signed clearance per obstacle
//! and one per wall, all measured for the agent's center (obstacles are
//! inflated by the agent radius). Its zero-superlevel set is the safe set.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: Vec2::new(x, y),
            radius,
        }
    }
}

/// Square world `[0, L] x [0, L]` with circular obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub side_length: f64,
    pub agent_radius: f64,
    pub obstacles: Vec<Obstacle>,
}

impl WorldSpec {
    pub fn new(side_length: f64, agent_radius: f64, obstacles: Vec<Obstacle>) -> Result<Self> {
        let world = Self {
            side_length,
            agent_radius,
            obstacles,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side_length > 0.0) || !self.side_length.is_finite() {
            return Err(Error::InvalidWorld(format!(
                "side length must be positive, got {}",
                self.side_length
            )));
        }
        if !(self.agent_radius > 0.0) {
            return Err(Error::InvalidWorld(format!(
                "agent radius must be positive, got {}",
                self.agent_radius
            )));
        }
        for (j, obs) in self.obstacles.iter().enumerate() {
            if !(obs.radius > 0.0) {
                return Err(Error::InvalidWorld(format!(
                    "obstacle {j} radius must be positive, got {}",
                    obs.radius
                )));
            }
            if !(self.agent_radius + obs.radius < 0.5 * self.side_length) {
                return Err(Error::InvalidWorld(format!(
                    "obstacle {j}: agent radius + obstacle radius must be below L/2"
                )));
            }
        }
        Ok(())
    }

    /// Clearance of the agent to obstacle `j`.
    pub fn obstacle_clearance(&self, j: usize, q: &Vec2) -> f64 {
        let obs = &self.obstacles[j];
        (q - obs.center).norm() - (self.agent_radius + obs.radius)
    }

    /// Clearances to the left, right, bottom and top walls.
    pub fn wall_clearances(&self, q: &Vec2) -> [f64; 4] {
        let r = self.agent_radius;
        let l = self.side_length;
        [q.x - r, (l - q.x) - r, q.y - r, (l - q.y) - r]
    }
}

/// Which term of the composite minimum attains the barrier value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveConstraint {
    Obstacle(usize),
    WallLeft,
    WallRight,
    WallBottom,
    WallTop,
    Halfspace,
}

impl ActiveConstraint {
    pub fn is_obstacle(&self) -> bool {
        matches!(self, ActiveConstraint::Obstacle(_))
    }

    pub fn is_wall(&self) -> bool {
        matches!(
            self,
            ActiveConstraint::WallLeft
                | ActiveConstraint::WallRight
                | ActiveConstraint::WallBottom
                | ActiveConstraint::WallTop
        )
    }
}

const WALLS: [ActiveConstraint; 4] = [
    ActiveConstraint::WallLeft,
    ActiveConstraint::WallRight,
    ActiveConstraint::WallBottom,
    ActiveConstraint::WallTop,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierEval {
    pub value: f64,
    pub gradient: Vec2,
    pub active: ActiveConstraint,
    /// Set when the gradient is undefined (agent centered on an obstacle
    /// center); `gradient` then holds the fallback `(1, 0)`.
    pub degenerate: bool,
}

pub trait Barrier {
    fn eval(&self, q: &Vec2) -> BarrierEval;

    fn value(&self, q: &Vec2) -> f64 {
        self.eval(q).value
    }
}

/// `h(q) = c - n^T q`, safe on the side opposite to `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceBarrier {
    pub offset: f64,
    pub normal: Vec2,
}

impl HalfspaceBarrier {
    pub fn new(offset: f64, normal: Vec2) -> Result<Self> {
        let norm = normal.norm();
        if !((norm - 1.0).abs() <= 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "halfspace normal must have unit norm, got {norm}"
            )));
        }
        Ok(Self { offset, normal })
    }
}

impl Barrier for WorldSpec {
    fn eval(&self, q: &Vec2) -> BarrierEval {
        eval_composite(self, q)
    }

    fn value(&self, q: &Vec2) -> f64 {
        let walls = self.wall_clearances(q);
        let mut h = walls.iter().copied().fold(f64::INFINITY, f64::min);
        for j in 0..self.obstacles.len() {
            h = h.min(self.obstacle_clearance(j, q));
        }
        h
    }
}

impl Barrier for HalfspaceBarrier {
    fn eval(&self, q: &Vec2) -> BarrierEval {
        eval_halfspace(self, q)
    }
}

/// Evaluates the composite min-barrier. Ties go to the lowest obstacle index,
/// then left, right, bottom, top wall.
pub fn eval_composite(world: &WorldSpec, q: &Vec2) -> BarrierEval {
    let mut best = f64::INFINITY;
    let mut active = ActiveConstraint::WallLeft;
    for j in 0..world.obstacles.len() {
        let hj = world.obstacle_clearance(j, q);
        if hj < best {
            best = hj;
            active = ActiveConstraint::Obstacle(j);
        }
    }
    for (hw, wall) in world.wall_clearances(q).into_iter().zip(WALLS) {
        if hw < best {
            best = hw;
            active = wall;
        }
    }

    let (gradient, degenerate) = match active {
        ActiveConstraint::Obstacle(j) => {
            let d = q - world.obstacles[j].center;
            let dist = d.norm();
            if dist > 0.0 {
                (d / dist, false)
            } else {
                (Vec2::new(1.0, 0.0), true)
            }
        }
        ActiveConstraint::WallLeft => (Vec2::new(1.0, 0.0), false),
        ActiveConstraint::WallRight => (Vec2::new(-1.0, 0.0), false),
        ActiveConstraint::WallBottom => (Vec2::new(0.0, 1.0), false),
        ActiveConstraint::WallTop => (Vec2::new(0.0, -1.0), false),
        ActiveConstraint::Halfspace => unreachable!(),
    };

    BarrierEval {
        value: best,
        gradient,
        active,
        degenerate,
    }
}

pub fn eval_halfspace(b: &HalfspaceBarrier, q: &Vec2) -> BarrierEval {
    BarrierEval {
        value: b.offset - b.normal.dot(q),
        gradient: -b.normal,
        active: ActiveConstraint::Halfspace,
        degenerate: false,
    }
}

/// Central-difference gradient of the barrier value field.
pub fn finite_diff_grad<B: Barrier + ?Sized>(barrier: &B, q: &Vec2, step: f64) -> Vec2 {
    let ex = Vec2::new(step, 0.0);
    let ey = Vec2::new(0.0, step);
    Vec2::new(
        (barrier.value(&(q + ex)) - barrier.value(&(q - ex))) / (2.0 * step),
        (barrier.value(&(q + ey)) - barrier.value(&(q - ey))) / (2.0 * step),
    )
}

/// First-order Taylor remainder `h(q + w) - h(q) - grad h(q)^T w`.
pub fn taylor_remainder<B: Barrier + ?Sized>(barrier: &B, q: &Vec2, w: &Vec2) -> f64 {
    let at = barrier.eval(q);
    barrier.value(&(q + w)) - at.value - at.gradient.dot(w)
}

/// Axis-aligned box of configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Vec2,
    pub max: Vec2,
}

impl Region {
    pub fn new(min: Vec2, max: Vec2) -> Result<Self> {
        if !(min.x <= max.x && min.y <= max.y) {
            return Err(Error::InvalidParameter(format!("empty region [{min:?}, {max:?}]")));
        }
        Ok(Self { min, max })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        Vec2::new(
            self.min.x + (self.max.x - self.min.x) * rng.random::<f64>(),
            self.min.y + (self.max.y - self.min.y) * rng.random::<f64>(),
        )
    }
}

/// Monte-Carlo lower estimate of `sup_{q in region} |R(q, dt * k(q))|`.
///
/// The same `seed` reproduces the same sample points, so estimates for
/// different `dt` are directly comparable.
pub fn estimate_remainder_mu<B, C>(
    barrier: &B,
    region: &Region,
    controller: C,
    dt: f64,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    B: Barrier + ?Sized,
    C: Fn(&Vec2) -> Vec2,
{
    if samples == 0 {
        return Err(Error::InvalidParameter(
            "remainder estimate needs at least one sample".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mu = 0.0f64;
    for _ in 0..samples {
        let q = region.sample(&mut rng);
        let at = barrier.eval(&q);
        if at.degenerate {
            return Err(Error::DegenerateBarrier { x: q.x, y: q.y });
        }
        let w = dt * controller(&q);
        let r = barrier.value(&(q + w)) - at.value - at.gradient.dot(&w);
        mu = mu.max(r.abs());
    }
    Ok(mu)
}
