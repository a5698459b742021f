//! Experiment front door: datasets, configuration, method comparison, reports.

mod compare;
mod config;
mod data;
mod report;

pub use compare::{
    build_ensemble, compare_methods, run_method, write_method_dir, ComparisonReport, ComparisonRow,
    MethodFailure, MethodResult,
};
pub use config::{parse_pairs, DatasetSpec, EnsembleOptions, ExperimentConfig};
pub use data::{
    gen_blobs, gen_spirals, gen_two_moons, load_csv, split, split_data, split_indices, Dataset,
    Provenance, SplitFractions, SplitIndices, Standardizer,
};
pub use report::{
    accuracy_lr_series, comparison_table, emit_report, lr_series, ReportFormat, RunArtifacts, Table,
};
