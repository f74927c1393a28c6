//! Run configuration file (TOML). Every key is optional; unknown keys are
//! rejected. The canonical form is the re-serialized config, and its
//! SHA-256 is the config hash recorded in every output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::experiment::{EvalSettings, TrainConfig, TrainingMode, VariantConfig};
use crate::io::sha256_hex;
use crate::policy::PpoConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub num_envs: usize,
    pub num_iterations: usize,
    pub steps_per_iteration: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            num_envs: t.num_envs,
            num_iterations: t.num_iterations,
            steps_per_iteration: t.steps_per_iteration,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSection {
    pub training_mode: TrainingMode,
    pub deploy_runtime_filter: bool,
    pub dr: bool,
}

impl Default for VariantSection {
    fn default() -> Self {
        Self {
            training_mode: TrainingMode::Dual,
            deploy_runtime_filter: false,
            dr: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    /// Base seed of the evaluation environments.
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub variant: VariantSection,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

/// 1-based line of `key = ...` inside `[section]`, or of the section header.
fn locate(src: &str, section: &str, message: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            in_section = t == header;
            if in_section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some((key, _)) = t.split_once('=') {
                let key = key.trim();
                if !key.is_empty() && message.contains(key) {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

impl RunConfig {
    /// Parses and validates; errors carry the offending line number.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate_located(src)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&src).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn sections(&self) -> [(&'static str, Result<()>); 4] {
        [
            ("train", self.train_config().validate_shape()),
            ("env", self.env.validate()),
            ("ppo", self.ppo.validate()),
            (
                "eval",
                if self.eval.episodes == 0 {
                    Err(Error::InvalidParameter("episodes must be at least 1".into()))
                } else {
                    Ok(())
                },
            ),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_located("")
    }

    fn validate_located(&self, src: &str) -> Result<()> {
        for (section, result) in self.sections() {
            if let Err(e) = result {
                let msg = e.to_string();
                return Err(Error::Config(match locate(src, section, &msg) {
                    Some(line) => format!("line {line}: [{section}] {msg}"),
                    None => format!("[{section}] {msg}"),
                }));
            }
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("[ablation] seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            num_envs: self.train.num_envs,
            num_iterations: self.train.num_iterations,
            steps_per_iteration: self.train.steps_per_iteration,
            seed: self.train.seed,
            env: self.env.clone(),
            ppo: self.ppo.clone(),
        }
    }

    pub fn variant_config(&self) -> VariantConfig {
        VariantConfig::new(
            self.variant.training_mode,
            self.variant.deploy_runtime_filter,
            self.variant.dr,
        )
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            n_episodes: self.eval.episodes,
            seed: self.eval.seed,
        }
    }

    /// Applies `section.key=value` with `value` in TOML syntax.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{path}` must be section.key")))?;
        let parsed: toml::Table = toml::from_str(&format!("v = {}", value.trim()))
            .or_else(|_| toml::from_str(&format!("v = \"{}\"", value.trim())))
            .map_err(|e| Error::Config(format!("override `{assignment}`: {e}")))?;
        let mut root: toml::Table = toml::from_str(&self.canonical()).map_err(|e| Error::Config(e.to_string()))?;
        let table = root
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown section `{section}`")))?;
        table.insert(key.trim().to_string(), parsed["v"].clone());
        let updated: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

impl TrainConfig {
    fn validate_shape(&self) -> Result<()> {
        if self.num_envs == 0 || self.steps_per_iteration == 0 {
            return Err(Error::InvalidParameter(
                "num_envs and steps_per_iteration must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
