//! Checkpoints, run directories and metric files.

mod checkpoint;
mod metrics;
mod run_dir;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, spec_hash, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use metrics::{
    write_config, write_curve_csv, write_run_metrics, write_suite_report, write_test_csv, write_train_csv, CONFIG_FILE,
    CURVE_CSV, SUMMARY_JSON, TEST_CSV, TRAIN_CSV,
};
pub use run_dir::{RunDir, LOCK_FILE};

#[cfg(test)]
mod tests;
