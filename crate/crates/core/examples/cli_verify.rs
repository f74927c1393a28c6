//! Drives the command-line front end in process: load a config with an
//! override, then run the verification suites.
//!
//! ```bash
//! cargo run --release --example cli_verify
//! ```

use cbf_rl::config::RunConfig;

fn main() -> cbf_rl::Result<()> {
    let mut cfg = RunConfig::from_toml_str(
        r#"
[train]
num_envs = 64
seed = 3

[variant]
training_mode = "filter-only"
"#,
    )?;
    cfg.set("env.alpha=2.0")?;
    println!("config hash {}", cfg.hash());
    println!("{}", cfg.canonical());

    if let Err(e) = RunConfig::from_toml_str("[env]\ndt = 0.05\nmax_speed = 3\n") {
        println!("rejected: {e}\n");
    }

    let code = cbf_rl::cli::run(["cbf-rl", "verify", "--suite", "filter", "--suite", "bound"]);
    println!("exit code {code}");
    Ok(())
}
