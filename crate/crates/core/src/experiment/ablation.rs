//! Four training modes x {no DR, DR}, evaluated under each deployment row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_checkpoint, EvalOptions, EvalReport};
use super::train::{train_variant, TrainConfig, TrainOutcome};
use super::variant::{TrainingMode, VariantConfig};
use crate::error::Result;
use crate::io::sig9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_episodes: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_episodes: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "message")]
pub enum RowStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub training: String,
    pub deployment: String,
    pub dr: bool,
    #[serde(flatten)]
    pub status: RowStatus,
    pub report: Option<EvalReport>,
    /// DR success minus no-DR success for the matching row (DR rows only).
    pub dr_delta: Option<f64>,
}

impl AblationRow {
    pub fn success_rate(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.success_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

pub struct AblationResult {
    pub table: AblationTable,
    pub runs: Vec<TrainOutcome>,
}

/// `(-1.0%)`-style percentage-point delta.
pub fn format_delta(delta: f64) -> String {
    let pts = 100.0 * delta;
    let pts = if pts.abs() < 0.05 { 0.0 } else { pts };
    if pts < 0.0 {
        format!("({pts:.1}%)")
    } else {
        format!("(+{pts:.1}%)")
    }
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.status == RowStatus::Ok)
    }

    fn fill_deltas(&mut self) {
        let success: BTreeMap<String, f64> = self
            .rows
            .iter()
            .filter_map(|r| Some((r.label.clone(), r.success_rate()?)))
            .collect();
        for row in &mut self.rows {
            row.dr_delta = None;
            if let (true, Some(s)) = (row.dr, row.success_rate()) {
                let base = row.label.trim_end_matches(" DR");
                row.dr_delta = success.get(base).map(|b| s - b);
            }
        }
    }

    /// Averages reports row by row over tables from different seeds; a row
    /// failed in any seed is failed in the summary.
    pub fn mean_over(tables: &[AblationTable]) -> AblationTable {
        let first = &tables[0];
        let mut rows = Vec::with_capacity(first.rows.len());
        for (k, template) in first.rows.iter().enumerate() {
            let cells: Vec<&AblationRow> = tables.iter().map(|t| &t.rows[k]).collect();
            let failed = cells.iter().find_map(|c| match &c.status {
                RowStatus::Failed(m) => Some(m.clone()),
                RowStatus::Ok => None,
            });
            let report = if failed.is_some() {
                None
            } else {
                let reports: Vec<&EvalReport> = cells.iter().filter_map(|c| c.report.as_ref()).collect();
                let m = reports.len() as f64;
                let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / m;
                Some(EvalReport {
                    n_episodes: reports.iter().map(|r| r.n_episodes).sum(),
                    runtime_filter: reports[0].runtime_filter,
                    dr: reports[0].dr,
                    seed: reports[0].seed,
                    success_rate: avg(|r| r.success_rate),
                    collision_rate: avg(|r| r.collision_rate),
                    obstacle_collision_rate: avg(|r| r.obstacle_collision_rate),
                    wall_collision_rate: avg(|r| r.wall_collision_rate),
                    timeout_rate: avg(|r| r.timeout_rate),
                    mean_episode_length: avg(|r| r.mean_episode_length),
                    mean_min_h: avg(|r| r.mean_min_h),
                    filter_activation_rate: avg(|r| r.filter_activation_rate),
                })
            };
            rows.push(AblationRow {
                status: failed.map_or(RowStatus::Ok, RowStatus::Failed),
                report,
                dr_delta: None,
                ..template.clone()
            });
        }
        let mut table = AblationTable {
            seeds: tables.iter().flat_map(|t| t.seeds.iter().copied()).collect(),
            rows,
        };
        table.fill_deltas();
        table
    }

    pub const CSV_COLUMNS: [&'static str; 16] = [
        "label",
        "training",
        "deployment",
        "dr",
        "status",
        "n_episodes",
        "success_rate",
        "collision_rate",
        "obstacle_collision_rate",
        "wall_collision_rate",
        "timeout_rate",
        "mean_episode_length",
        "mean_min_h",
        "filter_activation_rate",
        "dr_delta",
        "dr_delta_display",
    ];

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_COLUMNS)?;
        for row in &self.rows {
            let mut rec = vec![
                row.label.clone(),
                row.training.clone(),
                row.deployment.clone(),
                if row.dr { "Yes" } else { "No" }.to_string(),
                match &row.status {
                    RowStatus::Ok => "ok".to_string(),
                    RowStatus::Failed(_) => "failed".to_string(),
                },
            ];
            match &row.report {
                Some(r) => {
                    rec.push(r.n_episodes.to_string());
                    rec.extend(
                        [
                            r.success_rate,
                            r.collision_rate,
                            r.obstacle_collision_rate,
                            r.wall_collision_rate,
                            r.timeout_rate,
                            r.mean_episode_length,
                            r.mean_min_h,
                            r.filter_activation_rate,
                        ]
                        .map(sig9),
                    );
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 9)),
            }
            rec.push(row.dr_delta.map(sig9).unwrap_or_default());
            rec.push(row.dr_delta.map(format_delta).unwrap_or_default());
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains every mode with and without DR under `base` and evaluates each
/// deployment row of [`VariantConfig::table`].
pub fn ablation_matrix(base: &TrainConfig, eval: &EvalSettings) -> AblationResult {
    ablation_matrix_with(base, eval, train_variant)
}

/// [`ablation_matrix`] with a caller-supplied trainer. A failed training run
/// marks its rows failed and the remaining runs continue.
pub fn ablation_matrix_with<F>(base: &TrainConfig, eval: &EvalSettings, mut trainer: F) -> AblationResult
where
    F: FnMut(&VariantConfig, &TrainConfig) -> Result<TrainOutcome>,
{
    let table_rows = VariantConfig::table();
    let mut rows: Vec<Option<AblationRow>> = vec![None; table_rows.len()];
    let mut runs = Vec::new();
    for dr in [false, true] {
        for mode in TrainingMode::ALL {
            // train once, deploy with and without the filter as listed
            let deploy: Vec<usize> = (0..table_rows.len())
                .filter(|&k| table_rows[k].training_mode == mode && table_rows[k].dr == dr)
                .collect();
            let train_as = VariantConfig::new(mode, false, dr);
            let trained = trainer(&train_as, base);
            for &k in &deploy {
                let v = &table_rows[k];
                let result = trained.as_ref().map_err(|e| e.to_string()).and_then(|outcome| {
                    evaluate_checkpoint(
                        &outcome.checkpoint,
                        &EvalOptions {
                            n_episodes: eval.n_episodes,
                            runtime_filter: v.deploy_runtime_filter,
                            dr,
                            seed: eval.seed,
                        },
                    )
                    .map_err(|e| e.to_string())
                });
                let (status, report) = match result {
                    Ok(r) => (RowStatus::Ok, Some(r)),
                    Err(msg) => (RowStatus::Failed(msg), None),
                };
                rows[k] = Some(AblationRow {
                    label: v.label.clone(),
                    training: mode.components().to_string(),
                    deployment: v.deployment().to_string(),
                    dr,
                    status,
                    report,
                    dr_delta: None,
                });
            }
            if let Ok(outcome) = trained {
                runs.push(outcome);
            }
        }
    }
    let mut table = AblationTable {
        seeds: vec![base.seed],
        rows: rows
            .into_iter()
            .map(|r| r.expect("every table row evaluated"))
            .collect(),
    };
    table.fill_deltas();
    AblationResult { table, runs }
}
