//! Configured end-to-end runs, persisted records, reference-table
//! reproduction and report emission.

mod config;
mod report;
mod reproduce;
mod run;

pub use config::{DiversityConfig, EvalConfig, ExperimentConfig, SeedConfig};
pub use report::{emit_report, grouped_summary, regime_trends, RegimeTrend, ReportBundle};
pub use reproduce::{
    read_accuracy_table, read_delta_table, read_es_table, reconstruct_effect_sizes,
    reproduce_decisions, reproduce_table_decisions, summarize_settings, write_repro_table,
    write_summary_table, AccuracyRow, EsRow, ReproRow, ReproStatus,
};
pub use run::{
    load_record, make_decisions, meta_test_task_seed, persist_record, run_comparison,
    DecisionRecord, EvalRecord, MethodRecord, RunRecord, RunStatus, Timing,
};

#[cfg(test)]
mod tests;
