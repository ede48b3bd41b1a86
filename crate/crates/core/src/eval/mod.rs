//! Detection metrics, prompt sweeps and multi-seed aggregation.

mod ap;
mod report;
mod seeds;
mod sweep;

use thiserror::Error;

pub use ap::{average_precision, coco_iou_thresholds, recall_points, ApOptions, ScoredBox};
pub use report::{evaluate, ground_records, CategoryMetrics, EvalReport, ImageDetections};
pub use seeds::{aggregate_seeds, SeedAggregate, SeedSummary};
pub use sweep::{
    prompt_sweep, render_table, sweep_id, write_sweep, PromptSource, SweepRow, SweepTable,
    SweepTableRow, SweepVariant,
};

use crate::grounding::GroundingError;
use crate::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth boxes for this category")]
    NoGroundTruth,
    #[error("detections cover {detections} images but ground truth covers {ground_truth}")]
    ImageCountMismatch { detections: usize, ground_truth: usize },
    #[error("run does not cover the evaluation split: missing {missing:?}, unexpected {extra:?}")]
    SplitMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("no prompt for image {0}")]
    MissingPrompt(String),
    #[error("grounding image {image_id}: {source}")]
    Grounding { image_id: String, source: GroundingError },
    #[error("a sweep needs at least one variant")]
    NoVariants,
    #[error("no reports to aggregate")]
    NoReports,
    #[error("category sets differ: expected {expected:?}, found {found:?}")]
    CategorySetMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("invalid evaluation options: {0}")]
    InvalidOptions(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);
        assert!((iou(&a, &b(5.0, 5.0, 15.0, 15.0)) - 25.0 / 175.0).abs() < 1e-15);
    }
}
