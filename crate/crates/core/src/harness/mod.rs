//! Dataset ingestion, run configuration, score persistence and the
//! experiment drivers used by the command-line tool.

mod cache;
mod config;
mod experiments;
mod manifest;
mod pipeline;

pub use cache::{CacheLine, CacheWriter, ScoreCache};
pub use config::{RunConfig, RESOLVED_CONFIG_FILE, SIDECAR_FILE};
pub use experiments::{
    ablate_noise, default_lambda_grid, sweep_lambda, AblationRow, AblationTable, Metric, SweepRow, SweepTable,
    ABLATION_LAMBDA,
};
pub use manifest::{load_manifest, parse_manifest, write_manifest, Manifest};
pub use pipeline::{
    load_image, load_samples, read_scores, score_dataset, score_images, write_atomic, write_report, write_scores,
    LoadedSample, SampleFailure, ScoreOutcome, CACHE_DIR, REPORT_CSV, REPORT_JSON, SCORES_FILE,
};
