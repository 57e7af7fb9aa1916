//! Declarative experiment runner: trains every configured cell, evaluates
//! EER and renders the result tables.

mod config;
mod report;
mod run;

use thiserror::Error;

pub use config::{CorpusPaths, CorpusSource, ExperimentConfig, Mode, OutputPaths};
pub use report::{
    parse_report_json, render_report, Provenance, ReferenceResult, Report, ReportFormat, ReportRow, RowProvenance,
    RowStatus, SeedResult, CSV_HEADER, REFERENCE_RESULTS, REPORT_SCHEMA,
};
pub use run::{
    run_cross_corpus, run_experiment, run_fusion_grid, run_itw_protocol, run_single, worker_budget, write_outputs,
    WORKERS_ENV,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("corpora.{dataset}.{ptm}: file {path} does not exist")]
    MissingFile { dataset: String, ptm: String, path: String },
    #[error("pca_k = {k} exceeds the {dim}-dimensional corpus {dataset}/{ptm}")]
    PcaK {
        k: usize,
        dataset: String,
        ptm: String,
        dim: usize,
    },
    #[error("{0}")]
    Cell(String),
    #[error("rendering: {0}")]
    Render(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
