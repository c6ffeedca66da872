//! Datasets, source training, experiment configuration and metrics.

mod config;
mod dataset;
mod experiment;
mod synthetic;
mod train;

pub use config::{DataSource, ExperimentConfig, FlatConfig, Method, SweepAxis, SweepConfig};
pub use dataset::{
    encode_idx, idx_labels_path, load_dataset, parse_cifar_binary, parse_idx, write_cifar_binary, Dataset,
    DatasetFormat, IdxArray, CIFAR_CLASSES,
};
pub use experiment::{
    load_test_set, load_train_set, prepare, read_metrics, run_experiment, run_prepared, run_sweep, summarize,
    write_jsonl, write_outputs, write_source, ExperimentOutput, MetricsRecord, Prepared, Summary, SummaryCell,
    SweepOutput, SweepRecord, TimingRecord, SYNTHETIC_TEST_OFFSET,
};
pub use synthetic::{class_names as synthetic_class_names, render as render_synthetic, synthetic_dataset, SYNTHETIC_CLASSES};
pub use train::{evaluate, train_source_model, EpochLog, TrainOutcome, TrainRecipe};
