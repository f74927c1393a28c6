//! Hand-built rollout batch, GAE, and a single PPO update.
//!
//! ```bash
//! cargo run --example ppo_rollout
//! ```

use cbf_rl::policy::{gae_advantages, ppo_update, Adam, GaussianPolicy, PpoConfig, RolloutBatch, ValueNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cbf_rl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (obs_dim, steps, envs) = (3, 32, 8);
    let cfg = PpoConfig {
        hidden_sizes: vec![16, 16],
        minibatch_size: 64,
        ..PpoConfig::default()
    };
    let mut policy = GaussianPolicy::new(obs_dim, &cfg.hidden_sizes, 1.0, &mut rng)?;
    let mut value = ValueNet::new(obs_dim, &cfg.hidden_sizes, &mut rng)?;

    // reward = first action component; the optimum pushes it to +v_max
    let mut batch = RolloutBatch::with_capacity(steps, envs, obs_dim);
    for _ in 0..steps {
        let obs: Vec<f64> = (0..envs * obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = value.predict(&obs, envs)?;
        let (mut actions, mut log_probs, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
        for e in 0..envs {
            let s = policy.sample_action(&obs[e * obs_dim..(e + 1) * obs_dim], &mut rng)?;
            actions.extend_from_slice(&[s.raw.x, s.raw.y]);
            log_probs.push(s.log_prob);
            rewards.push(s.clipped.x);
        }
        let dones: Vec<bool> = (0..envs).map(|_| rng.random_bool(0.1)).collect();
        batch.push_step(&obs, &actions, &log_probs, &values, &rewards, &dones)?;
    }
    batch.last_values = vec![0.0; envs];
    gae_advantages(&mut batch, cfg.gamma, cfg.lambda);

    let mut optimizer = Adam::for_models(&policy, &value);
    for round in 0..5 {
        let stats = ppo_update(&mut policy, &mut value, &batch, &cfg, &mut optimizer, &mut rng)?;
        println!(
            "round {round}: loss {:.4} -> {:.4}, kl {:.2e}, clip frac {:.3}, grad norm {:.3}",
            stats.before.total, stats.after.total, stats.after.approx_kl, stats.after.clip_fraction, stats.grad_norm
        );
    }
    Ok(())
}
