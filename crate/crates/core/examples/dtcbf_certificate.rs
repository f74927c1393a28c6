//! Discrete-time barrier certificates: exact for a halfspace, and with an
//! estimated Taylor remainder for a circular obstacle.
//!
//! ```bash
//! cargo run --example dtcbf_certificate [out_dir]
//! ```

use std::fs::File;
use std::path::PathBuf;

use cbf_rl::barrier::{estimate_remainder_mu, eval_composite, Region, Vec2};
use cbf_rl::filter::{certify_dtcbf_bound, filter_action, project_halfspace, FilterParams};
use cbf_rl::verify::{circle_rollout, halfspace_rollout, remainder_scaling, CIRCLE_COMMAND};

fn main() -> cbf_rl::Result<()> {
    let params = FilterParams::default();

    let (_, trace) = halfspace_rollout(&params, project_halfspace, 1000)?;
    let cert = certify_dtcbf_bound(&trace, trace[0], &params, 0.0)?;
    let worst = cert.rows.iter().map(|r| r.slack.abs()).fold(0.0, f64::max);
    println!(
        "halfspace: {} steps, max |slack| {worst:.2e}, passed {}",
        trace.len() - 1,
        cert.passed
    );

    let (world, path, trace) = circle_rollout(&params, project_halfspace, 200)?;
    let lo = path.iter().fold(path[0], |a, q| a.inf(q)) - Vec2::new(0.1, 0.1);
    let hi = path.iter().fold(path[0], |a, q| a.sup(q)) + Vec2::new(0.1, 0.1);
    let mu_hat = estimate_remainder_mu(
        &world,
        &Region::new(lo, hi)?,
        |q: &Vec2| filter_action(&eval_composite(&world, q), &params, &CIRCLE_COMMAND).v_safe,
        params.dt,
        10_000,
        7,
    )?;
    let circle = certify_dtcbf_bound(&trace, trace[0], &params, 2.0 * mu_hat)?;
    println!(
        "circle: mu_hat {mu_hat:.3e}, floor {:.3e}, min h {:.4}, min slack {:.3e}, passed {}",
        2.0 * mu_hat / (params.dt * params.alpha),
        trace.iter().copied().fold(f64::INFINITY, f64::min),
        circle.min_slack,
        circle.passed
    );

    println!("\nremainder scaling (mu_hat / dt should shrink with dt):");
    for (dt, mu) in remainder_scaling(10_000, 0)? {
        println!("  dt {dt:<7} mu_hat {mu:.4e}  mu_hat/dt {:.4e}", mu / dt);
    }

    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&out)?;
    circle.write_csv(File::create(out.join("certificate_circle.csv"))?)?;
    println!("\nwrote {}", out.join("certificate_circle.csv").display());
    Ok(())
}
