//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line.
//!
//! Criteria 4 to 6 train the full desk-scale ablation (3 seeds x 8 runs,
//! roughly three hours on one core) and are ignored by default:
//!
//! ```text
//! cargo test --release --test acceptance -- --ignored --nocapture
//! ```
//!
//! Artifacts go to `$CBFRL_ACCEPTANCE_OUT` (default `target/acceptance`),
//! including `criteria.txt` with the three result lines. A default run
//! echoes the recorded lines from there, or from `results/desk_scale/`.
//!
//! Result lines go straight to the stdout handle so they show up without
//! `--nocapture`.

use std::cell::RefCell;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use cbf_rl::barrier::{eval_composite, finite_diff_grad, ActiveConstraint, BarrierEval, HalfspaceBarrier, Vec2};
use cbf_rl::cli::run_ablation;
use cbf_rl::config::RunConfig;
use cbf_rl::env::{self, cbf_reward, EnvConfig};
use cbf_rl::experiment::{evaluate_checkpoint, train_variant, AblationTable, EvalOptions, TrainingMode};
use cbf_rl::filter::{certify_dtcbf_bound, filter_action, kkt_oracle_check, FilterParams};
use cbf_rl::policy::{loss, loss_and_grad, Checkpoint, GaussianPolicy, Minibatch, Mlp, PpoConfig, ValueNet};
use cbf_rl::verify::{remainder_scaling, REMAINDER_DTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, passed: bool, detail: impl AsRef<str>) -> String {
    let line = format!(
        "criterion {n}: {} {}",
        if passed { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    writeln!(std::io::stdout().lock(), "{line}").unwrap();
    line
}

fn in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let t = std::f64::consts::TAU * rng.random::<f64>();
    Vec2::new(r * t.cos(), r * t.sin())
}

#[test]
fn criterion_1_filter_kkt() {
    let cfg = EnvConfig::default();
    let worlds: Vec<_> = (0..200u64)
        .map(|s| env::reset(&cfg, 10_000 + s).unwrap().world)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let (mut failures, mut checked, mut active) = (0, 0, 0);
    while checked < 100_000 {
        let world = &worlds[checked % worlds.len()];
        let l = world.side_length;
        let q = Vec2::new(l * rng.random::<f64>(), l * rng.random::<f64>());
        let eval = eval_composite(world, &q);
        if eval.degenerate {
            continue;
        }
        let params = FilterParams::new(rng.random_range(0.1..=5.0), cfg.dt).unwrap();
        let v = in_ball(&mut rng, 2.0 * cfg.v_max);
        let out = filter_action(&eval, &params, &v);
        active += out.activated as usize;
        if !kkt_oracle_check(&eval, &params, &v, &out.v_safe, 1e-9) {
            failures += 1;
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    let passed = failures == 0 && elapsed < Duration::from_secs(5);
    report(
        1,
        passed,
        format!("{failures} KKT failures in {checked} instances ({active} active), {elapsed:.2?}"),
    );
    assert!(passed);
}

#[test]
fn criterion_2_exact_halfspace_bound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut all_passed = true;
    for _ in 0..20 {
        let t = std::f64::consts::TAU * rng.random::<f64>();
        let n = Vec2::new(t.cos(), t.sin());
        let hs = HalfspaceBarrier::new(rng.random_range(0.0..5.0), n).unwrap();
        let params = FilterParams::new(rng.random_range(0.1..5.0), 0.05).unwrap();
        // start inside the safe set, h0 in (0, 4]
        let mut q = n * (hs.offset - rng.random_range(0.1..4.0)) + Vec2::new(-n.y, n.x) * rng.random_range(-3.0..3.0);
        let mut trace = Vec::with_capacity(1001);
        for _ in 0..=1000 {
            let h = hs.offset - hs.normal.dot(&q);
            trace.push(h);
            // grad h^T v = -alpha h with grad h = -n
            let v = n * (params.alpha * h);
            q += v * params.dt;
        }
        let cert = certify_dtcbf_bound(&trace, trace[0], &params, 0.0).unwrap();
        all_passed &= cert.passed;
        worst = cert.rows.iter().map(|r| r.slack.abs()).fold(worst, f64::max);
    }
    let elapsed = start.elapsed();
    let passed = all_passed && worst <= 1e-12 && elapsed < Duration::from_secs(1);
    report(
        2,
        passed,
        format!("20 traces x 1000 steps, max |slack| = {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(passed);
}

#[test]
fn criterion_3_remainder_scaling() {
    let start = Instant::now();
    let mu = remainder_scaling(10_000, 3).unwrap();
    let elapsed = start.elapsed();
    let ratios: Vec<f64> = mu.iter().map(|(dt, m)| m / dt).collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let passed = decreasing && elapsed < Duration::from_secs(10);
    let shown: Vec<String> = REMAINDER_DTS
        .iter()
        .zip(&ratios)
        .map(|(dt, r)| format!("{dt}:{r:.4e}"))
        .collect();
    report(3, passed, format!("mu/dt = [{}], {elapsed:.2?}", shown.join(", ")));
    assert!(passed);
}

fn out_dir() -> PathBuf {
    std::env::var_os("CBFRL_ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"))
}

#[test]
#[ignore = "desk-scale ablation, about three hours on one core"]
fn criteria_4_5_6_desk_scale_ablation() {
    let cfg = RunConfig::default();
    let out = out_dir();
    let collisions: RefCell<Vec<(String, u64, u64, Duration)>> = RefCell::new(Vec::new());
    let code = run_ablation(&cfg, &out, |v, t| {
        let start = Instant::now();
        let outcome = train_variant(v, t)?;
        collisions.borrow_mut().push((
            v.label.clone(),
            t.seed,
            outcome.total_obstacle_collisions(),
            start.elapsed(),
        ));
        eprintln!("trained {} seed {} in {:.0?}", v.label, t.seed, start.elapsed());
        Ok(outcome)
    })
    .unwrap();
    assert_eq!(code, 0, "ablation rows failed");
    let summary: AblationTable = serde_json::from_slice(&std::fs::read(out.join("ablation.json")).unwrap()).unwrap();

    // 4: filtered training runs without DR never hit an obstacle
    let filtered: Vec<_> = collisions
        .borrow()
        .iter()
        .filter(|(label, ..)| !label.ends_with(" DR") && (label.starts_with("Dual") || label.starts_with("Filter")))
        .cloned()
        .collect();
    let hits: u64 = filtered.iter().map(|r| r.2).sum();
    let slowest = filtered.iter().map(|r| r.3).max().unwrap();
    let pass4 = filtered.len() == 6 && hits == 0 && slowest < Duration::from_secs(15 * 60);
    let line4 = report(
        4,
        pass4,
        format!(
            "{hits} obstacle collisions over {} FilterOnly/Dual runs, slowest run {slowest:.0?}",
            filtered.len()
        ),
    );

    // 5: ordering and runtime-filter safety
    let success = |label: &str| summary.row(label).and_then(|r| r.success_rate()).unwrap();
    let dual = success("Dual (w/o rt. filt.)");
    let nominal = success("Nominal");
    let filter_only = success("Filter Only (w/o rt. filt.)");
    let mut filtered_collisions = 0usize;
    let mut filtered_episodes = 0usize;
    for seed in &cfg.ablation.seeds {
        for mode in TrainingMode::ALL {
            let path = out
                .join(format!("seed_{seed}"))
                .join(mode.to_string())
                .join("checkpoint.json");
            let ckpt = Checkpoint::load(&path).unwrap();
            let r = evaluate_checkpoint(
                &ckpt,
                &EvalOptions {
                    n_episodes: cfg.eval.episodes,
                    runtime_filter: true,
                    dr: false,
                    seed: cfg.eval.seed,
                },
            )
            .unwrap();
            filtered_collisions += r.collisions();
            filtered_episodes += r.n_episodes;
        }
    }
    let pass5 = dual >= 0.85 && nominal <= dual - 0.15 && filter_only <= dual - 0.30 && filtered_collisions == 0;
    let line5 = report(
        5,
        pass5,
        format!(
            "Dual(w/o rt.) {:.1}%, Nominal {:.1}%, FilterOnly(w/o rt.) {:.1}%, runtime-filter collisions {filtered_collisions}/{filtered_episodes}",
            100.0 * dual,
            100.0 * nominal,
            100.0 * filter_only
        ),
    );

    // 6: DR degradation
    let delta = |label: &str| summary.row(&format!("{label} DR")).and_then(|r| r.dr_delta).unwrap();
    let d_dual = delta("Dual (w/o rt. filt.)");
    let d_reward = delta("Reward Only");
    let pass6 = d_dual.abs() < d_reward.abs();
    let line6 = report(
        6,
        pass6,
        format!(
            "DR delta Dual(w/o rt.) {:+.1} pts, Reward Only {:+.1} pts",
            100.0 * d_dual,
            100.0 * d_reward
        ),
    );

    std::fs::write(out.join("criteria.txt"), format!("{line4}\n{line5}\n{line6}\n")).unwrap();
    assert!(pass4 && pass5 && pass6);
}

#[test]
fn criteria_4_5_6_recorded_results() {
    let recorded = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../results/desk_scale/criteria.txt");
    let fresh = out_dir().join("criteria.txt");
    let source = [
        (fresh.display().to_string(), fresh),
        ("results/desk_scale/criteria.txt".to_string(), recorded),
    ]
    .into_iter()
    .find(|(_, p)| p.exists());
    let mut stdout = std::io::stdout().lock();
    match source {
        Some((name, p)) => {
            for line in std::fs::read_to_string(&p).unwrap().lines() {
                writeln!(stdout, "{line} (recorded in {name})").unwrap();
            }
        }
        None => {
            for n in 4..=6 {
                writeln!(stdout, "criterion {n}: NOT RUN (run the ignored desk-scale test)").unwrap();
            }
        }
    }
}

#[test]
fn criterion_7_gradient_numerics() {
    let start = Instant::now();

    // barrier gradient at smooth points
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let step = 1e-5;
    let (mut accepted, mut barrier_worst) = (0, 0.0f64);
    while accepted < 10_000 {
        let world = env::reset(&cfg, 20_000 + accepted as u64 % 100).unwrap().world;
        let q = Vec2::new(10.0 * rng.random::<f64>(), 10.0 * rng.random::<f64>());
        let mut terms: Vec<f64> = world.wall_clearances(&q).to_vec();
        terms.extend((0..world.obstacles.len()).map(|j| world.obstacle_clearance(j, &q)));
        terms.sort_by(f64::total_cmp);
        let near_center = world.obstacles.iter().any(|o| (q - o.center).norm() < 10.0 * step);
        if terms[1] - terms[0] < 10.0 * step || near_center {
            continue;
        }
        let g = eval_composite(&world, &q).gradient;
        let fd = finite_diff_grad(&world, &q, step);
        barrier_worst = barrier_worst.max((fd - g).norm() / g.norm());
        accepted += 1;
    }

    // full PPO loss on [4, 8, 2] networks
    let mut ppo_worst = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 8;
        let mut policy = GaussianPolicy::new(4, &[8], 2.0, &mut rng).unwrap();
        policy.mean_net = Mlp::random(&[4, 8, 2], 0.5, &mut rng).unwrap();
        let value = ValueNet::new(4, &[8], &mut rng).unwrap();
        let obs: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = policy.mean_batch(&obs, n).unwrap();
        let mut act = Vec::new();
        let mut old = Vec::new();
        for i in 0..n {
            let s = policy.sample_from_mean(&mean[2 * i..2 * i + 2], &mut rng);
            act.extend_from_slice(&[s.raw.x, s.raw.y]);
            old.push(s.log_prob + rng.random_range(-0.05..0.05));
        }
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ret: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mb = Minibatch {
            observations: &obs,
            actions: &act,
            old_log_probs: &old,
            advantages: &adv,
            returns: &ret,
        };
        let ppo = PpoConfig::default();
        let (_, g) = loss_and_grad(&policy, &value, &mb, &ppo).unwrap();
        let total = |p: &GaussianPolicy, v: &ValueNet| loss(p, v, &mb, &ppo).unwrap().total;
        let h = 1e-6;
        let mut fd = Vec::new();
        for i in 0..policy.mean_net.params.len() {
            let (mut up, mut down) = (policy.clone(), policy.clone());
            up.mean_net.params[i] += h;
            down.mean_net.params[i] -= h;
            fd.push((total(&up, &value) - total(&down, &value)) / (2.0 * h));
        }
        for d in 0..2 {
            let (mut up, mut down) = (policy.clone(), policy.clone());
            up.log_std[d] += h;
            down.log_std[d] -= h;
            fd.push((total(&up, &value) - total(&down, &value)) / (2.0 * h));
        }
        for i in 0..value.net.params.len() {
            let (mut up, mut down) = (value.clone(), value.clone());
            up.net.params[i] += h;
            down.net.params[i] -= h;
            fd.push((total(&policy, &up) - total(&policy, &down)) / (2.0 * h));
        }
        let an: Vec<f64> = g.policy.iter().chain(&g.log_std).chain(&g.value).copied().collect();
        let err = fd.iter().zip(&an).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm = an.iter().map(|a| a * a).sum::<f64>().sqrt();
        ppo_worst = ppo_worst.max(err / norm);
    }
    let elapsed = start.elapsed();
    let passed = barrier_worst <= 1e-4 && ppo_worst <= 1e-4 && elapsed < Duration::from_secs(30);
    report(
        7,
        passed,
        format!(
            "barrier rel. err {barrier_worst:.2e} at {accepted} points, PPO rel. err {ppo_worst:.2e}, {elapsed:.2?}"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_8_cbf_reward_examples() {
    let cfg = EnvConfig::default();
    let eval = BarrierEval {
        value: 1.0,
        gradient: Vec2::new(1.0, 0.0),
        active: ActiveConstraint::WallLeft,
        degenerate: false,
    };
    let r1 = cbf_reward(&eval, &Vec2::new(2.0, 0.0), &Vec2::new(2.0, 0.0), &cfg);
    let r2 = cbf_reward(&eval, &Vec2::new(-3.0, 0.0), &Vec2::new(-1.0, 0.0), &cfg);
    let r3 = cbf_reward(&eval, &Vec2::new(-1.0, 0.0), &Vec2::new(-1.0, 0.0), &cfg);
    let e1 = (r1 - 300.0).abs();
    let e2 = (r2 - 100.0 * ((-16.0f64).exp() - 1.0)).abs();
    let e3 = r3.abs();
    let passed = e1 <= 1e-9 && e2 <= 1e-9 && e3 <= 1e-9;
    report(
        8,
        passed,
        format!("r = {r1}, {r2:.7}, {r3} (errors {e1:.1e}, {e2:.1e}, {e3:.1e})"),
    );
    assert!(passed);
}
