use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gaussian::{GaussianPolicy, ValueNet};
use crate::env::EnvConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "cbf-rl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing JSON checkpoint. Layer shapes travel with the flat
/// parameter arrays inside each network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub config_hash: String,
    pub training_step: u64,
    pub env: EnvConfig,
    pub policy: GaussianPolicy,
    pub value: ValueNet,
}

impl Checkpoint {
    pub fn new(
        label: impl Into<String>,
        config_hash: impl Into<String>,
        training_step: u64,
        env: EnvConfig,
        policy: GaussianPolicy,
        value: ValueNet,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            label: label.into(),
            config_hash: config_hash.into(),
            training_step,
            env,
            policy,
            value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        self.policy.validate()?;
        self.value.net.validate()?;
        let obs_dim = self.env.policy_obs_dim();
        if self.policy.obs_dim() != obs_dim || self.value.net.input_dim() != obs_dim {
            return Err(Error::Checkpoint(format!(
                "networks expect {} inputs but the environment produces {obs_dim}",
                self.policy.obs_dim()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ckpt: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip() {
        let env = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = GaussianPolicy::new(env.policy_obs_dim(), &[16, 16], env.v_max, &mut rng).unwrap();
        let value = ValueNet::new(env.policy_obs_dim(), &[16, 16], &mut rng).unwrap();
        let ckpt = Checkpoint::new("dual", "abc", 12, env, policy, value);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let env = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = GaussianPolicy::new(5, &[4], env.v_max, &mut rng).unwrap();
        let value = ValueNet::new(5, &[4], &mut rng).unwrap();
        assert!(Checkpoint::new("x", "h", 0, env, policy, value).validate().is_err());
    }
}
