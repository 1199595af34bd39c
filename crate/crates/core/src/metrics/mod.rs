//! Classification and labeling metrics.
//!
//! Confusion matrices are stored with rows indexed by the predicted class and
//! columns by the actual class, so per-class accuracy divides the diagonal by
//! the column (actual-instance) total. Classes with no actual instances are
//! left out of averaged metrics instead of being scored as zero.

mod confusion;
mod multilabel;
mod report;

pub use confusion::{
    accumulate_cm, average_accuracy, kappa, miou, overall_accuracy, AverageAccuracy, ConfusionMatrix,
};
pub use multilabel::{mean_average_precision, multilabel_metrics, ClassPr, MultiLabelMetrics};
pub use report::{MetricReport, MultiLabelReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions but {truths} ground-truth labels")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelRange { label: usize, classes: usize },
    #[error("metric undefined on empty input: {0}")]
    Empty(&'static str),
    #[error("shape error: {0}")]
    Shape(String),
}
