//! Numerical verification suites for the filter, the barrier and the
//! discrete-time bound. Each check is a pass/fail line.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{
    estimate_remainder_mu, eval_composite, finite_diff_grad, taylor_remainder, Barrier, HalfspaceBarrier, Obstacle,
    Region, Vec2, WorldSpec,
};
use crate::env::{self, EnvConfig};
use crate::error::{Error, Result};
use crate::filter::{
    certify_dtcbf_bound, filter_with, kkt_check_constraint, kkt_oracle_check, project_halfspace, CertificateReport,
    Constraint, FilterParams, Projection,
};
use crate::io::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Filter,
    Barrier,
    Bound,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Filter, Suite::Barrier, Suite::Bound];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Filter => "filter",
            Suite::Barrier => "barrier",
            Suite::Bound => "bound",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Suite::Filter),
            "barrier" => Ok(Suite::Barrier),
            "bound" => Ok(Suite::Bound),
            other => Err(Error::Config(format!("unknown suite `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}/{}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    /// Named certificates produced by the bound suite.
    pub certificates: Vec<(String, CertificateReport)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    fn push(&mut self, suite: Suite, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            suite,
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub projection: Projection,
    pub seed: u64,
    pub filter_instances: usize,
    pub gradient_points: usize,
    pub lipschitz_pairs: usize,
    pub bound_steps: usize,
    pub remainder_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            projection: project_halfspace,
            seed: 0,
            filter_instances: 100_000,
            gradient_points: 10_000,
            lipschitz_pairs: 100_000,
            bound_steps: 1000,
            remainder_samples: 10_000,
        }
    }
}

pub const KKT_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_REL_TOLERANCE: f64 = 1e-4;
pub const REMAINDER_DTS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

pub fn run_suites(suites: &[Suite], opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for &suite in suites {
        match suite {
            Suite::Filter => filter_suite(opts, &mut report)?,
            Suite::Barrier => barrier_suite(opts, &mut report)?,
            Suite::Bound => bound_suite(opts, &mut report)?,
        }
    }
    Ok(report)
}

/// Worlds drawn from the default environment distribution.
fn sample_worlds(count: usize, seed: u64) -> Result<Vec<WorldSpec>> {
    let cfg = EnvConfig::default();
    (0..count as u64)
        .map(|i| env::reset(&cfg, derive_seed(seed, 0xB0A7, i)).map(|s| s.world))
        .collect()
}

fn in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let t = std::f64::consts::TAU * rng.random::<f64>();
    Vec2::new(r * t.cos(), r * t.sin())
}

fn in_world<R: Rng + ?Sized>(rng: &mut R, world: &WorldSpec) -> Vec2 {
    let l = world.side_length;
    Vec2::new(l * rng.random::<f64>(), l * rng.random::<f64>())
}

fn filter_suite(opts: &VerifyOptions, report: &mut VerifyReport) -> Result<()> {
    let v_max = EnvConfig::default().v_max;
    let worlds = sample_worlds(100, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0xF117, 0));
    let n = opts.filter_instances;

    let (mut kkt_fail, mut idem_fail, mut active) = (0usize, 0usize, 0usize);
    let mut step_fail = 0usize;
    let mut worst_step = 0.0f64;
    let mut instances = Vec::new();
    for i in 0..n {
        let world = &worlds[i % worlds.len()];
        let q = in_world(&mut rng, world);
        let eval = eval_composite(world, &q);
        if eval.degenerate {
            continue;
        }
        let params = FilterParams::new(rng.random_range(0.1..=5.0), 0.05)?;
        let v = in_ball(&mut rng, 2.0 * v_max);
        let out = filter_with(opts.projection, &eval, &params, &v);
        if !kkt_oracle_check(&eval, &params, &v, &out.v_safe, KKT_TOLERANCE) {
            kkt_fail += 1;
        }
        let again = filter_with(opts.projection, &eval, &params, &out.v_safe);
        if (again.v_safe - out.v_safe).norm() > 1e-12 {
            idem_fail += 1;
        }
        if out.activated {
            active += 1;
            if instances.len() < 10_000 {
                instances.push((Constraint::from_eval(&eval, &params), v, out.v_safe));
            }
        }
        // one step: h(q') >= (1 - dt alpha) h(q) - |R|
        if eval.value >= 0.0 {
            let w = out.v_safe * params.dt;
            let r = taylor_remainder(world, &q, &w);
            let h_next = world.value(&(q + w));
            let gap = h_next - (params.decay() * eval.value - r.abs());
            worst_step = worst_step.min(gap);
            if gap < -1e-12 {
                step_fail += 1;
            }
        }
    }
    report.push(
        Suite::Filter,
        "kkt",
        kkt_fail == 0,
        format!("{kkt_fail} of {n} instances violate KKT at tol {KKT_TOLERANCE:e} ({active} active)"),
    );
    report.push(
        Suite::Filter,
        "idempotence",
        idem_fail == 0,
        format!("{idem_fail} of {n} instances change when filtered twice"),
    );
    report.push(
        Suite::Filter,
        "one_step_bound",
        step_fail == 0,
        format!("{step_fail} violations, worst gap {worst_step:.3e}"),
    );

    // no feasible sample is closer to v_policy than the filtered action
    let mut minimal_fail = 0usize;
    for (c, v, v_safe) in &instances {
        let dist = (v_safe - v).norm();
        for _ in 0..1000 {
            let cand = v + in_ball(&mut rng, 2.0 * dist);
            if c.margin(&cand) >= 0.0 && (cand - v).norm() < dist - 1e-9 {
                minimal_fail += 1;
                break;
            }
        }
    }
    report.push(
        Suite::Filter,
        "minimality",
        minimal_fail == 0,
        format!(
            "{minimal_fail} of {} active instances beaten by a feasible sample",
            instances.len()
        ),
    );

    let mut scale_fail = 0usize;
    for (c, v, _) in &instances {
        let k = rng.random_range(0.1..10.0);
        let scaled = Constraint { a: c.a * k, b: c.b * k };
        let (p1, p2) = ((opts.projection)(c, v), (opts.projection)(&scaled, v));
        if (p1 - p2).norm() > 1e-12 * (1.0 + p1.norm()) || !kkt_check_constraint(&scaled, v, &p2, KKT_TOLERANCE) {
            scale_fail += 1;
        }
    }
    report.push(
        Suite::Filter,
        "scale_invariance",
        scale_fail == 0,
        format!(
            "{scale_fail} of {} instances change under (a, b) -> (k a, k b)",
            instances.len()
        ),
    );
    Ok(())
}

/// Distance between the two smallest composite terms and to every obstacle
/// center; finite differences are only meaningful away from both.
fn smooth_margin(world: &WorldSpec, q: &Vec2) -> f64 {
    let mut terms: Vec<f64> = world.wall_clearances(q).to_vec();
    let mut center = f64::INFINITY;
    for (j, o) in world.obstacles.iter().enumerate() {
        terms.push(world.obstacle_clearance(j, q));
        center = center.min((q - o.center).norm());
    }
    terms.sort_by(f64::total_cmp);
    (terms[1] - terms[0]).min(center)
}

/// The single-obstacle setting used for the remainder scaling check.
pub fn remainder_scaling_setup() -> Result<(WorldSpec, Region, Vec2)> {
    let world = WorldSpec::new(10.0, 0.3, vec![Obstacle::new(5.0, 5.0, 1.0)])?;
    let region = Region::new(Vec2::new(3.0, 6.2), Vec2::new(4.0, 7.0))?;
    Ok((world, region, Vec2::new(1.0, 0.0)))
}

/// `mu_hat(dt)` for each of [`REMAINDER_DTS`].
pub fn remainder_scaling(samples: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let (world, region, v) = remainder_scaling_setup()?;
    REMAINDER_DTS
        .iter()
        .map(|&dt| Ok((dt, estimate_remainder_mu(&world, &region, |_| v, dt, samples, seed)?)))
        .collect()
}

fn barrier_suite(opts: &VerifyOptions, report: &mut VerifyReport) -> Result<()> {
    let worlds = sample_worlds(100, derive_seed(opts.seed, 1, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0xBA22, 0));

    let step = 1e-5;
    let (mut accepted, mut grad_fail) = (0usize, 0usize);
    let mut worst = 0.0f64;
    while accepted < opts.gradient_points {
        let world = &worlds[accepted % worlds.len()];
        let q = in_world(&mut rng, world);
        if smooth_margin(world, &q) < 10.0 * step {
            continue;
        }
        accepted += 1;
        let g = eval_composite(world, &q).gradient;
        let fd = finite_diff_grad(world, &q, step);
        let rel = (fd - g).norm() / g.norm();
        worst = worst.max(rel);
        if rel > GRADIENT_REL_TOLERANCE {
            grad_fail += 1;
        }
    }
    report.push(
        Suite::Barrier,
        "gradient",
        grad_fail == 0,
        format!(
            "{grad_fail} of {accepted} points exceed relative error {GRADIENT_REL_TOLERANCE:e} (worst {worst:.2e})"
        ),
    );

    let mut lip_fail = 0usize;
    let mut worst_ratio = 0.0f64;
    for i in 0..opts.lipschitz_pairs {
        let world = &worlds[i % worlds.len()];
        let q1 = in_world(&mut rng, world);
        let q2 = if i % 2 == 0 {
            q1 + in_ball(&mut rng, 0.5)
        } else {
            in_world(&mut rng, world)
        };
        let d = (q1 - q2).norm();
        let dh = (world.value(&q1) - world.value(&q2)).abs();
        if d > 0.0 {
            worst_ratio = worst_ratio.max(dh / d);
        }
        if dh > d + 1e-12 {
            lip_fail += 1;
        }
    }
    report.push(
        Suite::Barrier,
        "lipschitz",
        lip_fail == 0,
        format!(
            "{lip_fail} of {} pairs exceed |dh| <= |dq| (max ratio {worst_ratio:.6})",
            opts.lipschitz_pairs
        ),
    );

    let mut worst_r = 0.0f64;
    for _ in 0..opts.gradient_points {
        let t = std::f64::consts::TAU * rng.random::<f64>();
        let hs = HalfspaceBarrier::new(rng.random_range(-5.0..5.0), Vec2::new(t.cos(), t.sin()))?;
        let q = Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let w = in_ball(&mut rng, 1.0);
        worst_r = worst_r.max(taylor_remainder(&hs, &q, &w).abs());
    }
    report.push(
        Suite::Barrier,
        "halfspace_remainder",
        worst_r <= 1e-12,
        format!("max |R| = {worst_r:.2e}"),
    );

    let mu = remainder_scaling(opts.remainder_samples, derive_seed(opts.seed, 0x2E3, 0))?;
    let ratios: Vec<f64> = mu.iter().map(|(dt, m)| m / dt).collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    report.push(
        Suite::Barrier,
        "remainder_scaling",
        decreasing,
        format!(
            "mu/dt = {}",
            mu.iter()
                .zip(&ratios)
                .map(|((dt, _), r)| format!("{r:.3e}@{dt}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    Ok(())
}

/// Filtered rollout against `h(q) = 3 - q_x` with a nominal command pushing
/// into the boundary. Returns the barrier trace.
pub fn halfspace_rollout(
    params: &FilterParams,
    projection: Projection,
    steps: usize,
) -> Result<(HalfspaceBarrier, Vec<f64>)> {
    let hs = HalfspaceBarrier::new(3.0, Vec2::new(1.0, 0.0))?;
    let v_des = Vec2::new(4.0, 0.5);
    let mut q = Vec2::new(1.0, 0.0);
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        let eval = hs.eval(&q);
        trace.push(eval.value);
        let v = filter_with(projection, &eval, params, &v_des).v_safe;
        q += v * params.dt;
    }
    Ok((hs, trace))
}

/// Filtered rollout of a constant command skirting a circular obstacle,
/// far from every wall so the obstacle term is always active.
pub fn circle_rollout(
    params: &FilterParams,
    projection: Projection,
    steps: usize,
) -> Result<(WorldSpec, Vec<Vec2>, Vec<f64>)> {
    let world = WorldSpec::new(100.0, 0.3, vec![Obstacle::new(50.0, 50.0, 1.0)])?;
    let v_des = CIRCLE_COMMAND;
    let mut q = Vec2::new(46.0, 50.3);
    let mut path = Vec::with_capacity(steps + 1);
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        let eval = eval_composite(&world, &q);
        path.push(q);
        trace.push(eval.value);
        let v = filter_with(projection, &eval, params, &v_des).v_safe;
        q += v * params.dt;
    }
    Ok((world, path, trace))
}

pub const CIRCLE_COMMAND: Vec2 = Vec2::new(1.5, 0.0);

fn bound_suite(opts: &VerifyOptions, report: &mut VerifyReport) -> Result<()> {
    let params = FilterParams::default();

    let (_, trace) = halfspace_rollout(&params, opts.projection, opts.bound_steps)?;
    let cert = certify_dtcbf_bound(&trace, trace[0], &params, 0.0)?;
    let worst = cert.rows.iter().map(|r| r.slack.abs()).fold(0.0, f64::max);
    report.push(
        Suite::Bound,
        "halfspace_exact",
        cert.passed && worst <= 1e-12,
        format!("{} steps, max |slack| = {worst:.2e}", cert.rows.len() - 1),
    );
    report.certificates.push(("halfspace".into(), cert));

    let (world, path, trace) = circle_rollout(&params, opts.projection, 200)?;
    let (mut lo, mut hi) = (path[0], path[0]);
    for q in &path {
        lo = lo.inf(q);
        hi = hi.sup(q);
    }
    let pad = Vec2::new(0.1, 0.1);
    let region = Region::new(lo - pad, hi + pad)?;
    let controller =
        |q: &Vec2| filter_with(opts.projection, &eval_composite(&world, q), &params, &CIRCLE_COMMAND).v_safe;
    let mu_hat = estimate_remainder_mu(
        &world,
        &region,
        controller,
        params.dt,
        opts.remainder_samples,
        derive_seed(opts.seed, 0xC12C, 0),
    )?;
    let mu = 2.0 * mu_hat;
    let cert = certify_dtcbf_bound(&trace, trace[0], &params, mu)?;
    report.push(
        Suite::Bound,
        "circle_filtered",
        cert.passed,
        format!(
            "{} steps, mu = {mu:.3e} (2x estimate), min slack {:.3e}, min h {:.3e}",
            cert.rows.len() - 1,
            cert.min_slack,
            trace.iter().copied().fold(f64::INFINITY, f64::min)
        ),
    );
    report.certificates.push(("circle".into(), cert));
    Ok(())
}
