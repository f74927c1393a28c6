//! A miniature ablation: every training mode with and without DR, twelve
//! deployment rows, printed as the CSV table.
//!
//! ```bash
//! cargo run --release --example ablation
//! ```

use cbf_rl::experiment::{ablation_matrix, EvalSettings, TrainConfig};

fn main() -> cbf_rl::Result<()> {
    let base = TrainConfig {
        num_envs: 32,
        num_iterations: 20,
        steps_per_iteration: 16,
        ..TrainConfig::default()
    };
    let result = ablation_matrix(
        &base,
        &EvalSettings {
            n_episodes: 100,
            seed: 1,
        },
    );
    for run in &result.runs {
        println!(
            "{:<24} training obstacle hits {:>4}  wall hits {:>4}",
            run.variant.label,
            run.total_obstacle_collisions(),
            run.total_wall_collisions()
        );
    }
    println!();
    result.table.write_csv(std::io::stdout().lock())?;
    Ok(())
}
