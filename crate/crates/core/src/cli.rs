//! Command-line front end: `train`, `eval`, `verify`, `ablate`.
//!
//! Exit codes: 0 success, 1 a run or check failed, 2 usage or config error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::env::{write_trajectory_csv, write_trajectory_jsonl, EnvConfig};
use crate::error::{Error, Result};
use crate::experiment::{
    ablation_matrix_with, run_episodes, train_variant, train_variant_with, AblationTable, EvalOptions, GoToGoal,
    TrainConfig, TrainOutcome, TrainingMode, VariantConfig,
};
use crate::io::write_jsonl;
use crate::policy::Checkpoint;
use crate::verify::{run_suites, Suite, VerifyOptions};

pub const OUT_DIR_ENV: &str = "CBFRL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "cbf-rl",
    version,
    about = "Barrier-filtered reinforcement learning for 2D navigation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint or the scripted go-to-goal controller.
    Eval(EvalArgs),
    /// Run numerical verification suites.
    Verify(VerifyArgs),
    /// Train and evaluate the full ablation table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set env.dt=0.02`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// nominal, reward-only, filter-only or dual.
    #[arg(long)]
    pub variant: Option<TrainingMode>,
    #[arg(long)]
    pub dr: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs/train")]
    pub out: PathBuf,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, conflicts_with = "scripted", required_unless_present = "scripted")]
    pub checkpoint: Option<PathBuf>,
    /// Go straight to the goal at full speed instead of a learned policy.
    #[arg(long)]
    pub scripted: bool,
    #[arg(long, short = 'n')]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub runtime_filter: bool,
    #[arg(long)]
    pub dr: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write per-step trajectories (JSONL and CSV).
    #[arg(long)]
    pub trajectories: bool,
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Suite to run; repeat for several. Defaults to all.
    #[arg(long)]
    pub suite: Vec<Suite>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for certificate files.
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, short = 'n')]
    pub episodes: Option<usize>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs/ablation")]
    pub out: PathBuf,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config_hash: String,
    seeds: Vec<u64>,
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, seeds: Vec<u64>) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_hash: cfg.hash(),
        seeds,
    };
    fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&m)?)?;
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) | Error::InvalidParameter(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = a.config.load()?;
    if let Some(m) = a.variant {
        cfg.variant.training_mode = m;
    }
    cfg.variant.dr |= a.dr;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.train.num_iterations = n;
    }
    cfg.validate()?;
    let variant = cfg.variant_config();
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.canonical())?;

    let train_cfg = cfg.train_config();
    let total = train_cfg.num_iterations;
    let quiet = a.quiet;
    let outcome = train_variant_with(&variant, &train_cfg, |m| {
        if !quiet && (m.iteration % 10 == 0 || m.iteration + 1 == total) {
            eprintln!(
                "{} it {:>5}/{total} reward {:+.4} goals {} collisions {} activation {:.3}",
                variant.label,
                m.iteration + 1,
                m.mean_reward,
                m.goals,
                m.obstacle_collisions + m.wall_collisions,
                m.filter_activation_rate
            );
        }
    })?;
    let mut checkpoint = outcome.checkpoint;
    checkpoint.config_hash = cfg.hash();
    checkpoint.save(&a.out.join("checkpoint.json"))?;
    write_jsonl(create(&a.out.join("metrics.jsonl"))?, &outcome.curves)?;
    write_manifest(&a.out, "train", &cfg, vec![cfg.train.seed])?;
    println!("{}", a.out.join("checkpoint.json").display());
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let cfg = a.config.load()?;
    let opts = EvalOptions {
        n_episodes: a.episodes.unwrap_or(cfg.eval.episodes),
        runtime_filter: a.runtime_filter,
        dr: a.dr,
        seed: a.seed.unwrap_or(cfg.eval.seed),
    };
    let record = a.trajectories && a.out.is_some();
    let run = match &a.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            run_episodes(&ckpt.policy, &ckpt.env, &opts, record)?
        }
        None => {
            let env: &EnvConfig = &cfg.env;
            run_episodes(&GoToGoal { v_max: env.v_max }, env, &opts, record)?
        }
    };
    let json = serde_json::to_string_pretty(&run.report)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("report.json"), format!("{json}\n"))?;
        if record {
            write_trajectory_jsonl(create(&out.join("trajectories.jsonl"))?, &run.trajectories)?;
            write_trajectory_csv(create(&out.join("trajectories.csv"))?, &run.trajectories)?;
        }
    }
    println!("{json}");
    Ok(0)
}

fn cmd_verify(a: VerifyArgs) -> Result<i32> {
    let suites = if a.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suite
    };
    let opts = VerifyOptions {
        seed: a.seed,
        ..VerifyOptions::default()
    };
    let report = run_suites(&suites, &opts)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for c in &report.checks {
        writeln!(lock, "{c}")?;
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        for (name, cert) in &report.certificates {
            cert.write_csv(create(&out.join(format!("certificate_{name}.csv")))?)?;
            cert.write_jsonl(create(&out.join(format!("certificate_{name}.jsonl")))?)?;
        }
    }
    writeln!(
        lock,
        "{} of {} checks passed",
        report.checks.iter().filter(|c| c.passed).count(),
        report.checks.len()
    )?;
    Ok(report.exit_code())
}

fn cmd_ablate(a: AblateArgs) -> Result<i32> {
    let mut cfg = a.config.load()?;
    if let Some(seeds) = a.seeds {
        cfg.ablation.seeds = seeds;
    }
    if let Some(n) = a.episodes {
        cfg.eval.episodes = n;
    }
    cfg.validate()?;
    let quiet = a.quiet;
    run_ablation(&cfg, &a.out, |v, t| {
        if !quiet {
            eprintln!("training {} (seed {})", v.label, t.seed);
        }
        train_variant(v, t)
    })
}

/// Trains and evaluates the ablation for every configured seed and writes
/// per-seed and averaged tables to `out`. Returns 1 if any row failed.
pub fn run_ablation<F>(cfg: &RunConfig, out: &Path, mut trainer: F) -> Result<i32>
where
    F: FnMut(&VariantConfig, &TrainConfig) -> Result<TrainOutcome>,
{
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.canonical())?;
    let eval = cfg.eval_settings();
    let mut tables = Vec::new();
    for &seed in &cfg.ablation.seeds {
        let base = TrainConfig {
            seed,
            ..cfg.train_config()
        };
        let result = ablation_matrix_with(&base, &eval, &mut trainer);
        let dir = out.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir)?;
        for run in &result.runs {
            let name = format!(
                "{}{}",
                run.variant.training_mode,
                if run.variant.dr { "_dr" } else { "" }
            );
            let run_dir = dir.join(name);
            fs::create_dir_all(&run_dir)?;
            run.checkpoint.save(&run_dir.join("checkpoint.json"))?;
            write_jsonl(create(&run_dir.join("metrics.jsonl"))?, &run.curves)?;
        }
        result.table.write_csv(create(&dir.join("ablation.csv"))?)?;
        tables.push(result.table);
    }
    let summary = AblationTable::mean_over(&tables);
    summary.write_csv(create(&out.join("ablation.csv"))?)?;
    fs::write(out.join("ablation.json"), serde_json::to_vec_pretty(&summary)?)?;
    write_manifest(out, "ablate", cfg, cfg.ablation.seeds.clone())?;
    for row in &summary.rows {
        match row.success_rate() {
            Some(s) => println!("{:<34} success {:.3}", row.label, s),
            None => println!("{:<34} FAILED", row.label),
        }
    }
    Ok(if summary.all_ok() { 0 } else { 1 })
}
