use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{tanh, Mlp};
use crate::barrier::Vec2;
use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 2;

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian policy over planar velocities. The mean is
/// `v_max * tanh(net(o))` per axis; the standard deviation is a learned,
/// state-independent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
    pub v_max: f64,
    pub log_std_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// Raw Gaussian draw, used for the log-probability.
    pub raw: Vec2,
    /// `raw` projected into the `v_max` ball.
    pub clipped: Vec2,
    pub log_prob: f64,
}

/// Scales `v` back onto the `v_max` ball when it lies outside.
pub fn clip_to_ball(v: Vec2, v_max: f64) -> Vec2 {
    let n = v.norm();
    if n > v_max {
        v * (v_max / n)
    } else {
        v
    }
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, ls), x)| {
            let z = (x - m) * (-ls).exp();
            -0.5 * z * z - ls - LOG_SQRT_2PI
        })
        .sum()
}

/// Differential entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + LOG_SQRT_2PI).sum()
}

impl GaussianPolicy {
    /// Hidden tanh layers of the given widths; `log_std` starts at
    /// `ln(0.5 v_max)` and is floored at `ln(1e-3)`.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], v_max: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(ACTION_DIM);
        Ok(Self {
            mean_net: Mlp::random(&sizes, 0.01, rng)?,
            log_std: vec![(0.5 * v_max).ln(); ACTION_DIM],
            v_max,
            log_std_min: 1e-3f64.ln(),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.mean_net.validate()?;
        if self.mean_net.output_dim() != ACTION_DIM || self.log_std.len() != ACTION_DIM {
            return Err(Error::Shape(format!(
                "policy must output {ACTION_DIM} actions, has {} outputs and {} log-stds",
                self.mean_net.output_dim(),
                self.log_std.len()
            )));
        }
        if !(self.v_max > 0.0) || self.log_std.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("policy v_max or log_std".into()));
        }
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        let floor = self.log_std_min;
        self.log_std.iter_mut().for_each(|l| *l = l.max(floor));
    }

    /// Mean actions for a `batch x obs_dim` block, flattened `batch x 2`.
    pub fn mean_batch(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut out = self.mean_net.forward(obs, batch)?;
        let v_max = self.v_max;
        out.iter_mut().for_each(|z| *z = v_max * tanh(*z));
        Ok(out)
    }

    /// Mean and standard deviation for one observation.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec2, Vec2)> {
        let m = self.mean_batch(obs, 1)?;
        let s = self.std();
        Ok((Vec2::new(m[0], m[1]), Vec2::new(s[0], s[1])))
    }

    /// Draws from `N(mean, std)`; the log-probability is of the raw draw.
    pub fn sample_from_mean<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> SampledAction {
        let mut raw = [0.0; ACTION_DIM];
        for (d, r) in raw.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(rng);
            *r = mean[d] + self.log_std[d].exp() * eps;
        }
        let log_prob = gaussian_log_prob(mean, &self.log_std, &raw);
        let raw = Vec2::new(raw[0], raw[1]);
        SampledAction {
            raw,
            clipped: clip_to_ball(raw, self.v_max),
            log_prob,
        }
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<SampledAction> {
        let mean = self.mean_batch(obs, 1)?;
        Ok(self.sample_from_mean(&mean, rng))
    }

    /// Deterministic deployment action: the mean, clipped to the ball.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec2> {
        let (m, _) = self.forward(obs)?;
        Ok(clip_to_ball(m, self.v_max))
    }
}

/// Scalar state-value network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub net: Mlp,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::random(&sizes, 1.0, rng)?,
        })
    }

    pub fn predict(&self, obs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.net.forward(obs, batch)
    }
}
