//! Experiment orchestration: TOML configuration, named scenarios, the
//! end-to-end pipeline and CSV summaries.

mod config;
mod pipeline;
mod scenario;
mod summary;

pub use config::{
    DataConfig, ExperimentConfig, Method, Mode, ModelConfig, ModelKind, Sweep, SweepValue,
    SystemConfig, SWEEP_AXES,
};
pub use pipeline::{
    build_setup, device_data, discover, model_arch, read_csv, run_cell, run_oracle, run_pipeline,
    write_csv, AnyEnv, CellFailure, PipelineOutput, ResultRow, Setup,
};
pub use scenario::{scenario, SCENARIOS};
pub use summary::{rounds_to_threshold, summarize, write_summary_csv, SummaryRow};
