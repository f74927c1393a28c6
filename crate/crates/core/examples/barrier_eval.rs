//! Composite min-barrier: values, gradients and the active constraint.
//!
//! ```bash
//! cargo run --example barrier_eval
//! ```

use cbf_rl::barrier::{eval_composite, finite_diff_grad, Obstacle, Vec2, WorldSpec};

fn main() -> cbf_rl::Result<()> {
    let world = WorldSpec::new(
        10.0,
        0.3,
        vec![Obstacle::new(3.0, 3.0, 1.0), Obstacle::new(7.0, 6.0, 0.6)],
    )?;

    println!("{:>12} {:>10} {:>22} {:>14}", "q", "h", "grad h", "active");
    for q in [
        Vec2::new(5.0, 5.0),
        Vec2::new(3.0, 4.5),
        Vec2::new(0.5, 8.0),
        Vec2::new(7.0, 6.95),
        Vec2::new(9.9, 9.9),
    ] {
        let e = eval_composite(&world, &q);
        println!(
            "({:>4.1}, {:>4.1}) {:>10.4} ({:>9.5}, {:>9.5}) {:>14}",
            q.x,
            q.y,
            e.value,
            e.gradient.x,
            e.gradient.y,
            format!("{:?}", e.active)
        );
    }

    // the analytic gradient agrees with central differences away from ties
    let q = Vec2::new(4.2, 3.9);
    let analytic = eval_composite(&world, &q).gradient;
    let numeric = finite_diff_grad(&world, &q, 1e-5);
    println!(
        "\nat ({}, {}): analytic {:?}, finite difference {:?}, rel. err {:.2e}",
        q.x,
        q.y,
        analytic.as_slice(),
        numeric.as_slice(),
        (analytic - numeric).norm() / analytic.norm()
    );
    Ok(())
}
