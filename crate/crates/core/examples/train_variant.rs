//! Trains one variant at a reduced scale and evaluates the result.
//!
//! ```bash
//! cargo run --release --example train_variant -- dual 100
//! ```

use cbf_rl::experiment::{
    evaluate_checkpoint, train_variant_with, EvalOptions, TrainConfig, TrainingMode, VariantConfig,
};

fn main() -> cbf_rl::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: TrainingMode = args.next().as_deref().unwrap_or("filter-only").parse()?;
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);

    let cfg = TrainConfig {
        num_iterations: iterations,
        ..TrainConfig::default()
    };
    let variant = VariantConfig::new(mode, false, false);
    let outcome = train_variant_with(&variant, &cfg, |m| {
        if m.iteration % 10 == 0 {
            println!(
                "it {:>4} reward {:>9.3} cbf {:>9.3} activation {:.3} goals {:>3} obstacle hits {:>3} std {:.3}",
                m.iteration,
                m.mean_reward,
                m.mean_cbf_reward,
                m.filter_activation_rate,
                m.goals,
                m.obstacle_collisions,
                m.action_std
            );
        }
    })?;
    println!("training obstacle collisions: {}", outcome.total_obstacle_collisions());

    for runtime_filter in [false, true] {
        let r = evaluate_checkpoint(
            &outcome.checkpoint,
            &EvalOptions {
                n_episodes: 500,
                runtime_filter,
                dr: false,
                seed: 1,
            },
        )?;
        println!(
            "deploy (runtime filter {runtime_filter}): success {:.3} collision {:.3} timeout {:.3}",
            r.success_rate, r.collision_rate, r.timeout_rate
        );
    }
    Ok(())
}
