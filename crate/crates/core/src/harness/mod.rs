//! Experiment driver: run configs, cached pipeline stages, manifests and
//! sweeps. Backs the `expertdp` binary.

pub mod commands;
mod config;
mod manifest;
mod pipeline;
pub mod sweep;

pub use config::{desk_ensemble, BudgetBlock, DatasetBlock, EvalBlock, Method, ReleaseBlock, RunConfig, SweepBlock};
pub use manifest::{artifacts, Artifact, RunManifest};
pub use pipeline::{EvalSummary, Pipeline, ReleaseStage, TrainStage, TrainSummary, CHECKPOINT_STEM, CURVE_FILE, STREAMS};
pub use sweep::{run_sweep, summarize, ResultRow, SummaryRow, SweepOutcome};
