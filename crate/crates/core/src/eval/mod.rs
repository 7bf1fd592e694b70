//! Split protocols, accuracy reporting and latency measurement.

pub mod bench;
pub mod metrics;
pub mod split;

pub use bench::{benchmark_latency, hardware_description, BenchReport, LatencyStats, BENCH_HEADER};
pub use metrics::{
    confused_pairs, confusion_csv, evaluate, per_class_csv, summary_csv, top_recognized, Classifier, ConfusedPair,
    ConfusionMatrix, EvalReport,
};
pub use split::{apply_split, Split, SplitKind, SplitProtocol};
