//! Clipped-surrogate PPO with a value baseline and entropy bonus.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{gaussian_entropy, gaussian_log_prob, GaussianPolicy, ValueNet, ACTION_DIM};
use super::mlp::tanh;
use super::rollout::RolloutBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub hidden_sizes: Vec<usize>,
    /// Divide training rewards by the running std of the discounted return.
    pub scale_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 4096,
            entropy_coef: 0.005,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            hidden_sizes: vec![64, 64],
            scale_rewards: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "gamma and lambda must lie in (0, 1], got {} and {}",
                self.gamma, self.lambda
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::InvalidParameter(
                "learning_rate, epochs and minibatch_size must be positive".into(),
            ));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::InvalidParameter("max_grad_norm must be positive".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "hidden_sizes must be non-empty and positive, got {:?}",
                self.hidden_sizes
            )));
        }
        Ok(())
    }
}

/// Borrowed view of the samples used for one gradient step.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub observations: &'a [f64],
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

impl Minibatch<'_> {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub policy: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.policy
            .iter()
            .chain(&self.log_std)
            .chain(&self.value)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, s: f64) {
        for g in self.policy.iter_mut().chain(&mut self.log_std).chain(&mut self.value) {
            *g *= s;
        }
    }
}

/// Loss `-surrogate + c_v * mse(V, R) - c_e * entropy` and, when requested,
/// its gradient with respect to every parameter.
fn evaluate_loss(
    policy: &GaussianPolicy,
    value: &ValueNet,
    mb: &Minibatch,
    cfg: &PpoConfig,
    want_grad: bool,
) -> Result<(LossStats, Option<Gradients>)> {
    let n = mb.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty minibatch".into()));
    }
    let obs_dim = policy.obs_dim();
    if mb.observations.len() != n * obs_dim || mb.actions.len() != n * ACTION_DIM {
        return Err(Error::Shape("minibatch arrays disagree in length".into()));
    }
    let inv_n = 1.0 / n as f64;
    let v_max = policy.v_max;
    let log_std = &policy.log_std;
    let inv_var: Vec<f64> = log_std.iter().map(|l| (-2.0 * l).exp()).collect();

    let p_cache = policy.mean_net.forward_cached(mb.observations, n)?;
    let v_cache = value.net.forward_cached(mb.observations, n)?;
    let pre = p_cache.output();
    let v_pred = v_cache.output();

    let mut stats = LossStats::default();
    let mut d_pre = vec![0.0; n * ACTION_DIM];
    let mut d_log_std = vec![0.0; ACTION_DIM];
    let mut d_v = vec![0.0; n];
    let mut mean = [0.0; ACTION_DIM];
    let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);

    for i in 0..n {
        let act = &mb.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM];
        let tanh: [f64; ACTION_DIM] = std::array::from_fn(|d| tanh(pre[i * ACTION_DIM + d]));
        for d in 0..ACTION_DIM {
            mean[d] = v_max * tanh[d];
        }
        let logp = gaussian_log_prob(&mean, log_std, act);
        let log_ratio = logp - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        stats.policy -= unclipped.min(clipped) * inv_n;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
        if (ratio - 1.0).abs() > cfg.clip {
            stats.clip_fraction += inv_n;
        }

        let err = v_pred[i] - mb.returns[i];
        stats.value += err * err * inv_n;

        if want_grad {
            // d(-min(r A, clip(r) A))/d logp; zero when the clipped branch is flat
            let flat = (adv >= 0.0 && ratio > hi) || (adv < 0.0 && ratio < lo);
            let c = if flat { 0.0 } else { -ratio * adv * inv_n };
            for d in 0..ACTION_DIM {
                let diff = act[d] - mean[d];
                let dlogp_dmean = diff * inv_var[d];
                d_pre[i * ACTION_DIM + d] = c * dlogp_dmean * v_max * (1.0 - tanh[d] * tanh[d]);
                d_log_std[d] += c * (diff * diff * inv_var[d] - 1.0);
            }
            d_v[i] = cfg.value_coef * 2.0 * err * inv_n;
        }
    }
    stats.entropy = gaussian_entropy(log_std);
    stats.total = stats.policy + cfg.value_coef * stats.value - cfg.entropy_coef * stats.entropy;
    if !stats.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "PPO loss is {} (policy {}, value {}, entropy {})",
            stats.total, stats.policy, stats.value, stats.entropy
        )));
    }
    if !want_grad {
        return Ok((stats, None));
    }

    d_log_std.iter_mut().for_each(|g| *g -= cfg.entropy_coef);
    let mut g_policy = vec![0.0; policy.mean_net.params.len()];
    policy.mean_net.backward(&p_cache, &d_pre, &mut g_policy);
    let mut g_value = vec![0.0; value.net.params.len()];
    value.net.backward(&v_cache, &d_v, &mut g_value);
    Ok((
        stats,
        Some(Gradients {
            policy: g_policy,
            log_std: d_log_std,
            value: g_value,
        }),
    ))
}

pub fn loss_and_grad(
    policy: &GaussianPolicy,
    value: &ValueNet,
    mb: &Minibatch,
    cfg: &PpoConfig,
) -> Result<(LossStats, Gradients)> {
    let (stats, grad) = evaluate_loss(policy, value, mb, cfg, true)?;
    Ok((stats, grad.expect("gradient requested")))
}

pub fn loss(policy: &GaussianPolicy, value: &ValueNet, mb: &Minibatch, cfg: &PpoConfig) -> Result<LossStats> {
    Ok(evaluate_loss(policy, value, mb, cfg, false)?.0)
}

/// Adam over the concatenation `[policy params, log_std, value params]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_models(policy: &GaussianPolicy, value: &ValueNet) -> Self {
        Self::new(policy.mean_net.params.len() + policy.log_std.len() + value.net.params.len())
    }

    fn apply(&mut self, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                let m_hat = self.m[k] / bc1;
                let v_hat = self.v[k] / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + self.eps);
                k += 1;
            }
        }
        debug_assert_eq!(k, self.m.len());
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Full-batch loss before the first gradient step.
    pub before: LossStats,
    /// Full-batch loss after the last gradient step.
    pub after: LossStats,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub num_steps: usize,
}

fn gather(src: &[f64], idx: &[usize], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

fn normalized(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Runs `epochs` passes of shuffled minibatch updates over `batch`, whose
/// advantages must already be computed.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut ValueNet,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    optimizer: &mut Adam,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = batch.len();
    if n == 0 || batch.advantages.len() != n || batch.returns.len() != n {
        return Err(Error::InvalidParameter(
            "rollout batch is empty or has no advantages".into(),
        ));
    }
    let advantages = normalized(&batch.advantages);
    let full = Minibatch {
        observations: &batch.observations,
        actions: &batch.actions,
        old_log_probs: &batch.log_probs,
        advantages: &advantages,
        returns: &batch.returns,
    };
    let before = loss(policy, value, &full, cfg)?;

    let obs_dim = batch.obs_dim;
    let mb_size = cfg.minibatch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad_norm_sum = 0.0;
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb_size) {
            let obs = gather(&batch.observations, idx, obs_dim);
            let act = gather(&batch.actions, idx, ACTION_DIM);
            let old = gather(&batch.log_probs, idx, 1);
            let adv = gather(&advantages, idx, 1);
            let ret = gather(&batch.returns, idx, 1);
            let mb = Minibatch {
                observations: &obs,
                actions: &act,
                old_log_probs: &old,
                advantages: &adv,
                returns: &ret,
            };
            let (_, mut grad) = loss_and_grad(policy, value, &mb, cfg)?;
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm is {norm}")));
            }
            grad_norm_sum += norm;
            if norm > cfg.max_grad_norm {
                grad.scale(cfg.max_grad_norm / norm);
            }
            optimizer.apply(
                cfg.learning_rate,
                &mut [&mut policy.mean_net.params, &mut policy.log_std, &mut value.net.params],
                &[&grad.policy, &grad.log_std, &grad.value],
            );
            policy.clamp_log_std();
            steps += 1;
        }
    }
    let after = loss(policy, value, &full, cfg)?;
    Ok(UpdateStats {
        before,
        after,
        grad_norm: grad_norm_sum / steps as f64,
        num_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::mlp::Mlp;
    use crate::policy::rollout::gae_advantages;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        policy: GaussianPolicy,
        value: ValueNet,
        obs: Vec<f64>,
        act: Vec<f64>,
        old: Vec<f64>,
        adv: Vec<f64>,
        ret: Vec<f64>,
    }

    impl Fixture {
        fn new(seed: u64, n: usize) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut policy = GaussianPolicy::new(4, &[8], 2.0, &mut rng).unwrap();
            policy.mean_net = Mlp::random(&[4, 8, 2], 0.5, &mut rng).unwrap();
            policy.log_std = vec![-0.3, 0.2];
            let value = ValueNet::new(4, &[8], &mut rng).unwrap();
            let obs: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = policy.mean_batch(&obs, n).unwrap();
            let mut act = Vec::new();
            let mut old = Vec::new();
            for i in 0..n {
                let s = policy.sample_from_mean(&mean[2 * i..2 * i + 2], &mut rng);
                act.extend_from_slice(&[s.raw.x, s.raw.y]);
                // keep ratios near 1 but away from the clip kinks
                old.push(s.log_prob + rng.random_range(-0.05..0.05));
            }
            let adv = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ret = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Self {
                policy,
                value,
                obs,
                act,
                old,
                adv,
                ret,
            }
        }

        fn mb(&self) -> Minibatch<'_> {
            Minibatch {
                observations: &self.obs,
                actions: &self.act,
                old_log_probs: &self.old,
                advantages: &self.adv,
                returns: &self.ret,
            }
        }
    }

    fn assert_close(fd: f64, an: f64, what: &str) {
        let scale = fd.abs().max(an.abs()).max(1e-6);
        assert!((fd - an).abs() / scale <= 1e-4, "{what}: fd {fd} vs analytic {an}");
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let f = Fixture::new(1, 6);
        let cfg = PpoConfig::default();
        let (_, g) = loss_and_grad(&f.policy, &f.value, &f.mb(), &cfg).unwrap();
        let h = 1e-6;
        let total = |p: &GaussianPolicy, v: &ValueNet| loss(p, v, &f.mb(), &cfg).unwrap().total;
        for i in 0..f.policy.mean_net.params.len() {
            let mut p = f.policy.clone();
            p.mean_net.params[i] += h;
            let up = total(&p, &f.value);
            p.mean_net.params[i] -= 2.0 * h;
            let down = total(&p, &f.value);
            assert_close((up - down) / (2.0 * h), g.policy[i], "policy");
        }
        for d in 0..2 {
            let mut p = f.policy.clone();
            p.log_std[d] += h;
            let up = total(&p, &f.value);
            p.log_std[d] -= 2.0 * h;
            let down = total(&p, &f.value);
            assert_close((up - down) / (2.0 * h), g.log_std[d], "log_std");
        }
        for i in 0..f.value.net.params.len() {
            let mut v = f.value.clone();
            v.net.params[i] += h;
            let up = total(&f.policy, &v);
            v.net.params[i] -= 2.0 * h;
            let down = total(&f.policy, &v);
            assert_close((up - down) / (2.0 * h), g.value[i], "value");
        }
    }

    #[test]
    fn surrogate_gradient_on_two_samples() {
        let f = Fixture::new(2, 2);
        let cfg = PpoConfig {
            value_coef: 0.0,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let (_, g) = loss_and_grad(&f.policy, &f.value, &f.mb(), &cfg).unwrap();
        let h = 1e-6;
        for i in 0..f.policy.mean_net.params.len() {
            let mut p = f.policy.clone();
            p.mean_net.params[i] += h;
            let up = loss(&p, &f.value, &f.mb(), &cfg).unwrap().policy;
            p.mean_net.params[i] -= 2.0 * h;
            let down = loss(&p, &f.value, &f.mb(), &cfg).unwrap().policy;
            assert_close((up - down) / (2.0 * h), g.policy[i], "surrogate");
        }
        assert!(g.value.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn infinite_clip_is_vanilla_policy_gradient() {
        let mut f = Fixture::new(3, 5);
        // on-policy: old log-probs equal the current ones
        let mean = f.policy.mean_batch(&f.obs, 5).unwrap();
        for i in 0..5 {
            f.old[i] = gaussian_log_prob(&mean[2 * i..2 * i + 2], &f.policy.log_std, &f.act[2 * i..2 * i + 2]);
        }
        let cfg = PpoConfig {
            clip: f64::INFINITY,
            value_coef: 0.0,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let (_, g) = loss_and_grad(&f.policy, &f.value, &f.mb(), &cfg).unwrap();
        // vanilla: -mean(A * log pi), differentiated numerically
        let pg = |p: &GaussianPolicy| -> f64 {
            let m = p.mean_batch(&f.obs, 5).unwrap();
            -(0..5)
                .map(|i| f.adv[i] * gaussian_log_prob(&m[2 * i..2 * i + 2], &p.log_std, &f.act[2 * i..2 * i + 2]))
                .sum::<f64>()
                / 5.0
        };
        let h = 1e-6;
        for i in 0..f.policy.mean_net.params.len() {
            let mut p = f.policy.clone();
            p.mean_net.params[i] += h;
            let up = pg(&p);
            p.mean_net.params[i] -= 2.0 * h;
            assert_close((up - pg(&p)) / (2.0 * h), g.policy[i], "vanilla");
        }
    }

    fn synthetic_batch(f: &Fixture, zero_adv: bool) -> RolloutBatch {
        let n = f.old.len();
        let mut b = RolloutBatch::with_capacity(1, n, 4);
        let mean = f.policy.mean_batch(&f.obs, n).unwrap();
        let old: Vec<f64> = (0..n)
            .map(|i| gaussian_log_prob(&mean[2 * i..2 * i + 2], &f.policy.log_std, &f.act[2 * i..2 * i + 2]))
            .collect();
        let values = f.value.predict(&f.obs, n).unwrap();
        let rewards: Vec<f64> = if zero_adv { values.clone() } else { f.adv.clone() };
        b.push_step(&f.obs, &f.act, &old, &values, &rewards, &vec![true; n])
            .unwrap();
        gae_advantages(&mut b, 0.99, 0.95);
        b
    }

    #[test]
    fn zero_advantages_leave_mean_network_unchanged() {
        let f = Fixture::new(4, 16);
        let batch = synthetic_batch(&f, true);
        assert!(batch.advantages.iter().all(|a| *a == 0.0));
        let cfg = PpoConfig::default();
        let mut p = f.policy.clone();
        let mut v = f.value.clone();
        let mut opt = Adam::for_models(&p, &v);
        ppo_update(
            &mut p,
            &mut v,
            &batch,
            &cfg,
            &mut opt,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(p.mean_net.params, f.policy.mean_net.params);
        // entropy bonus pushes log-std up
        assert!(p.log_std.iter().zip(&f.policy.log_std).all(|(a, b)| a > b));
    }

    #[test]
    fn update_is_deterministic_and_lowers_loss() {
        let f = Fixture::new(5, 64);
        let batch = synthetic_batch(&f, false);
        let cfg = PpoConfig {
            minibatch_size: 16,
            learning_rate: 1e-3,
            ..PpoConfig::default()
        };
        let run = || {
            let mut p = f.policy.clone();
            let mut v = f.value.clone();
            let mut opt = Adam::for_models(&p, &v);
            let stats = ppo_update(
                &mut p,
                &mut v,
                &batch,
                &cfg,
                &mut opt,
                &mut ChaCha8Rng::seed_from_u64(7),
            )
            .unwrap();
            (p, v, stats)
        };
        let (p1, v1, s1) = run();
        let (p2, v2, s2) = run();
        assert_eq!(p1, p2);
        assert_eq!(v1, v2);
        assert_eq!(s1, s2);
        assert_eq!(s1.num_steps, 16);
        assert!(s1.after.total < s1.before.total);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut f = Fixture::new(6, 4);
        f.ret[0] = f64::NAN;
        let err = loss_and_grad(&f.policy, &f.value, &f.mb(), &PpoConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig {
            gamma: 0.0,
            ..PpoConfig::default()
        }
        .validate()
        .is_err());
        assert!(PpoConfig {
            clip: 0.0,
            ..PpoConfig::default()
        }
        .validate()
        .is_err());
    }
}
