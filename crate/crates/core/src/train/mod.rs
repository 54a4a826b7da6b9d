//! Losses, optimizer, training and evaluation.

mod adam;
mod config;
mod eval;
mod extractor;
mod loss;
mod run;


pub use adam::{Adam, AdamConfig};
pub use config::{apply_override, ExtractorConfig, TrainConfig};
pub use eval::{evaluate, evaluate_pairs, EvalReport, EvalRow, BICUBIC_METRICS_FILE, ERROR_MAP_DIR, METRICS_FILE};
pub use extractor::{FeatureExtractor, DEFAULT_WIDTHS};
pub use loss::{combine, l1_loss, perceptual_loss, total_loss, LossParts};
pub use run::{load_extractor, preflight, train, train_on, StepLog, TrainReport, FINAL_CHECKPOINT, LOG_FILE, LOG_HEADER};
