//! Tracking metrics, the one-pass evaluation driver and the reference
//! correlation tracker.

pub mod metrics;
pub mod ncc;
pub mod ope;

pub use metrics::{center_error, compute_metrics, compute_metrics_with, iou, norm_center_error, MetricConfig, MetricReport, SequenceMetrics, TrackRun};
pub use ncc::{ncc_score, NccTracker, TrackerConfig};
pub use ope::{run_ope, BuiltinTracker, Comparison, ComparisonRow, Deltas, Enhancer, OpeOptions, OracleTracker, StaticTracker, Tracker, TrackerFactory, TrackerKind};
