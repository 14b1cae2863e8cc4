//! Dataset ingestion, metrics, sweeps, result persistence and plots.

mod config;
mod data;
mod metrics;
mod output;
mod sweep;

pub use config::{parse_list, ExperimentConfig, SchemeName, FEATURE_STRIDE};
pub use data::{center_crop, generate_corpus, ingest_dataset, synth_image, Ingested};
pub use metrics::{compute_psnr, psnr_from_mse, PSNR_CAP_DB};
pub use output::{emit_outputs, emit_plots, read_csv, write_csv, CsvAppender, Outputs, CSV_HEADER, RESULTS_FILE};
pub use sweep::{cell_seed, load_corpus, load_for_sweep, run_sweep, train_pipeline, RunRecord};
