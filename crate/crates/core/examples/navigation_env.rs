//! One filtered episode in the navigation environment, with the reward
//! breakdown and a trajectory export.
//!
//! ```bash
//! cargo run --example navigation_env
//! ```

use cbf_rl::env::{self, observe, write_trajectory_csv, EnvConfig, StepAction, TrajectoryRecord};
use cbf_rl::filter::filter_action;
use cbf_rl::policy::clip_to_ball;

fn main() -> cbf_rl::Result<()> {
    let cfg = EnvConfig::default();
    let mut state = env::reset(&cfg, 42)?;
    println!("start {:?} goal {:?}", state.q.as_slice(), state.goal.as_slice());
    for o in &state.world.obstacles {
        println!("  obstacle at {:?} r = {:.2}", o.center.as_slice(), o.radius);
    }
    println!(
        "observation ({} values): {:?}\n",
        observe(&state).len(),
        observe(&state)
    );

    let params = cfg.filter_params();
    let mut records = Vec::new();
    let mut totals = env::RewardComponents::default();
    while state.is_active() {
        let to_goal = state.goal - state.q;
        let v_policy = clip_to_ball(to_goal * 10.0, cfg.v_max);
        let filtered = filter_action(&state.barrier(), &params, &v_policy);
        let action = StepAction {
            v_exec: clip_to_ball(filtered.v_safe, cfg.v_max),
            v_policy,
            v_safe: filtered.v_safe,
            cbf_reward: true,
        };
        let (q, k) = (state.q, state.step_count);
        let out = env::step(&mut state, &action, &cfg);
        totals.progress += out.rewards.progress;
        totals.cbf += out.rewards.cbf;
        totals.alive += out.rewards.alive;
        totals.goal += out.rewards.goal;
        totals.timeout += out.rewards.timeout;
        totals.obstacle += out.rewards.obstacle;
        totals.wall += out.rewards.wall;
        records.push(TrajectoryRecord::new(0, k, q, &action, &out));
    }
    println!(
        "terminal {:?} after {} steps, min h {:.3}",
        state.terminal, state.step_count, state.min_h
    );
    println!("return components: {totals:#?}");

    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &records)?;
    let text = String::from_utf8_lossy(&csv);
    for line in text.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
