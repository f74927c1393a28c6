use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which safety components are active while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    Nominal,
    RewardOnly,
    FilterOnly,
    Dual,
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 4] = [
        TrainingMode::Nominal,
        TrainingMode::Dual,
        TrainingMode::RewardOnly,
        TrainingMode::FilterOnly,
    ];

    /// Executed actions pass through the safety filter during training.
    pub fn filters(&self) -> bool {
        matches!(self, TrainingMode::FilterOnly | TrainingMode::Dual)
    }

    /// The barrier-shaped reward term is added during training.
    pub fn shapes_reward(&self) -> bool {
        matches!(self, TrainingMode::RewardOnly | TrainingMode::Dual)
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            TrainingMode::Nominal => "Nominal",
            TrainingMode::RewardOnly => "Reward Only",
            TrainingMode::FilterOnly => "Filter Only",
            TrainingMode::Dual => "Dual",
        }
    }

    /// Training column wording, e.g. `Reward+Filter`.
    pub fn components(&self) -> &'static str {
        match self {
            TrainingMode::Nominal => "Nominal",
            TrainingMode::RewardOnly => "Reward",
            TrainingMode::FilterOnly => "Filter",
            TrainingMode::Dual => "Reward+Filter",
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingMode::Nominal => "nominal",
            TrainingMode::RewardOnly => "reward-only",
            TrainingMode::FilterOnly => "filter-only",
            TrainingMode::Dual => "dual",
        })
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "nominal" => Ok(TrainingMode::Nominal),
            "reward-only" | "reward" => Ok(TrainingMode::RewardOnly),
            "filter-only" | "filter" => Ok(TrainingMode::FilterOnly),
            "dual" => Ok(TrainingMode::Dual),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

/// One method configuration: training mode, deployment filter and DR.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub training_mode: TrainingMode,
    pub deploy_runtime_filter: bool,
    pub dr: bool,
    pub label: String,
}

impl VariantConfig {
    pub fn new(training_mode: TrainingMode, deploy_runtime_filter: bool, dr: bool) -> Self {
        let mut label = training_mode.display_name().to_string();
        match (training_mode.filters(), deploy_runtime_filter) {
            (true, false) => label.push_str(" (w/o rt. filt.)"),
            (false, true) => label.push_str(" (w/ rt. filt.)"),
            _ => {}
        }
        if dr {
            label.push_str(" DR");
        }
        Self {
            training_mode,
            deploy_runtime_filter,
            dr,
            label,
        }
    }

    /// The twelve method rows: every training mode with and without DR,
    /// filter-trained modes deployed both with and without the filter.
    pub fn table() -> Vec<VariantConfig> {
        let mut rows = Vec::with_capacity(12);
        for dr in [false, true] {
            rows.push(Self::new(TrainingMode::Nominal, false, dr));
            rows.push(Self::new(TrainingMode::Dual, true, dr));
            rows.push(Self::new(TrainingMode::Dual, false, dr));
            rows.push(Self::new(TrainingMode::RewardOnly, false, dr));
            rows.push(Self::new(TrainingMode::FilterOnly, true, dr));
            rows.push(Self::new(TrainingMode::FilterOnly, false, dr));
        }
        rows
    }

    pub fn deployment(&self) -> &'static str {
        if self.deploy_runtime_filter {
            "Runtime Filter"
        } else {
            "No Runtime Filter"
        }
    }
}
