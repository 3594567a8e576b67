//! Evaluation: confusion matrices, training logs, feature importance and
//! inference throughput.

mod bench;
mod confusion;
mod importance;
mod log;

pub use bench::{throughput_bench, BenchReport, WARMUP_ITERATIONS};
pub use confusion::{
    binary_collapse, confusion_matrix, per_class_accuracy, ClassAccuracy, ConfusionMatrix,
};
pub use importance::{permutation_importance, ImportanceReport};
pub use log::{read_log, read_log_from, write_log, write_log_to, Split, TrainLogRow, LOG_HEADER};
