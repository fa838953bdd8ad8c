//! Synthetic spurious-correlation benchmark: grayscale grids whose label
//! is carried by high-frequency texture while a low-frequency brightness
//! cue co-occurs with it at a controllable rate. Includes dataset
//! generation and disk format, the classifier pair under test, training
//! with spectral and invariance penalties, and the bias-level sweep.

mod data;
mod model;
mod sweep;
mod train;

pub use data::{
    color_only_accuracy, gen_dataset, load_dataset, save_dataset, shape_only_accuracy, BiasSpec,
    ColorTag, DataRecord, Dataset, Split, SyntheticSample, LABEL_BUS, LABEL_TRUCK,
};
pub use model::{patchify, BiasModel, ModelKind, NetConfig, TapedNet};
pub use sweep::{bias_sweep, write_report_csv, MedianGap, SeedComparison, SweepConfig, SweepReport, SweepRow, SweepSummary};
pub use train::{
    evaluate_checkpoint, train_model, write_history_csv, EpochStats, MetricsRecord, TrainedModel,
};
