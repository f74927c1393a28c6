//! Training variants, evaluation, and the ablation harness.

pub mod ablation;
pub mod eval;
pub mod train;
pub mod variant;

pub use ablation::{
    ablation_matrix, ablation_matrix_with, AblationResult, AblationRow, AblationTable, EvalSettings, RowStatus,
};
pub use eval::{
    evaluate, evaluate_checkpoint, run_episodes, Controller, EvalOptions, EvalReport, EvalRun, FnController, GoToGoal,
};
pub use train::{run_hash, train_variant, train_variant_with, IterationMetrics, TrainConfig, TrainOutcome};
pub use variant::{TrainingMode, VariantConfig};
