//! Dataset construction, training, evaluation and the experiment matrix.

mod dataset;
mod experiment;
mod matrix;
mod sample;

pub use dataset::{
    build_dataset, Dataset, DatasetManifest, LocationData, LocationEntry, Split, MANIFEST_FILE,
    MANIFEST_VERSION, N_BINS, PANO_HEIGHT, SLICE_HFOV, STREET_HEADING_JITTER_DEG,
    USER_HEADING_JITTER_DEG, USER_HFOV,
};
pub use experiment::{
    accuracy, baseline_rows, distance_histogram, evaluate, evaluate_model, predict_all,
    results_csv, run_experiment, scheduled_lr, train, write_results, ExperimentConfig,
    ModelPredictor, NccPredictor, Predictor, ResultsRow, TrainLog, RESULTS_HEADER,
};
pub use matrix::{default_patch, matrix_entries, row_id, run_matrix, MatrixEntry, MatrixPlan};
pub use sample::{
    make_sample_input, ncc_baseline, same_moment_samples, test_samples, train_items, InputOptions,
    Sample, SampleFactory, StyleSource, TargetSource, TrainItem,
};
