//! Run configuration, the staged synthetic-data pipeline, and the
//! dataset-size ablation with its reports.

mod ablation;
mod config;
mod pipeline;

pub use ablation::{
    emit_report, make_nested_subsets, render_csv, render_first_epoch_table, render_series, run_ablation,
    AblationResult, AblationRow, ImprovementSummary, ReportFormat, ABLATION_FILE, REPORT_CSV, REPORT_JSON,
    REPORT_TABLE,
};
pub use config::{
    AblationParams, BackendSection, CorpusSection, EmbeddingBackendConfig, EncoderBackendConfig, EvalParams,
    LlmBackendConfig, OutDomainSource, PipelineParams, PromptSection, RunConfig,
};
pub use pipeline::*;
