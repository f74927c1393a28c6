//! Evaluates the scripted go-to-goal controller with and without the
//! runtime filter and with dynamics noise.
//!
//! ```bash
//! cargo run --release --example scripted_eval
//! ```

use cbf_rl::env::EnvConfig;
use cbf_rl::experiment::{evaluate, EvalOptions, GoToGoal};

fn main() -> cbf_rl::Result<()> {
    let cfg = EnvConfig::default();
    let controller = GoToGoal { v_max: cfg.v_max };
    let empty = EnvConfig {
        num_obstacles: 0,
        ..cfg.clone()
    };
    let r = evaluate(
        &controller,
        &empty,
        &EvalOptions {
            n_episodes: 200,
            runtime_filter: false,
            dr: false,
            seed: 0,
        },
    )?;
    println!("empty world: success {:.3}", r.success_rate);

    println!(
        "\n{:<8} {:<6} {:>8} {:>10} {:>8} {:>11}",
        "filter", "dr", "success", "collision", "timeout", "activation"
    );
    for (runtime_filter, dr) in [(false, false), (true, false), (false, true), (true, true)] {
        let r = evaluate(
            &controller,
            &cfg,
            &EvalOptions {
                n_episodes: 1000,
                runtime_filter,
                dr,
                seed: 0,
            },
        )?;
        println!(
            "{:<8} {:<6} {:>8.3} {:>10.3} {:>8.3} {:>11.3}",
            runtime_filter, dr, r.success_rate, r.collision_rate, r.timeout_rate, r.filter_activation_rate
        );
    }
    Ok(())
}
