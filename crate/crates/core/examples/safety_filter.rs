//! Closed-form safety filter and its KKT oracle.
//!
//! ```bash
//! cargo run --example safety_filter
//! ```

use cbf_rl::barrier::{eval_composite, Obstacle, Vec2, WorldSpec};
use cbf_rl::filter::{filter_action, kkt_oracle_check, FilterParams};

fn main() -> cbf_rl::Result<()> {
    let world = WorldSpec::new(10.0, 0.3, vec![Obstacle::new(5.0, 5.0, 1.0)])?;
    let params = FilterParams::new(1.0, 0.05)?;
    // agent just left of the obstacle, 0.2 m of clearance
    let q = Vec2::new(3.5, 5.0);
    let eval = eval_composite(&world, &q);
    println!(
        "h = {:.3}, grad h = {:?}, active {:?}\n",
        eval.value,
        eval.gradient.as_slice(),
        eval.active
    );

    for v in [
        Vec2::new(-1.0, 0.0),
        Vec2::new(0.1, 1.0),
        Vec2::new(2.0, 0.0),
        Vec2::new(1.5, 1.5),
    ] {
        let out = filter_action(&eval, &params, &v);
        let kkt = kkt_oracle_check(&eval, &params, &v, &out.v_safe, 1e-9);
        println!(
            "v_policy ({:>5.2}, {:>5.2}) -> v_safe ({:>6.3}, {:>6.3})  margin {:>6.3}  activated {:<5}  kkt {}",
            v.x, v.y, out.v_safe.x, out.v_safe.y, out.margin, out.activated, kkt
        );
    }
    Ok(())
}
