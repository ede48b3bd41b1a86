//! COCO-style average precision for one category.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::BBox;

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Recall sample points `i / 100` for `i in 0..=100`.
pub fn recall_points() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApOptions {
    pub iou_thresholds: Vec<f64>,
    pub max_detections: usize,
}

impl Default for ApOptions {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_iou_thresholds(),
            max_detections: 100,
        }
    }
}

impl ApOptions {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty()
            || self.iou_thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0 && *t <= 1.0))
        {
            return Err(EvalError::InvalidOptions(format!(
                "IoU thresholds must be non-empty and in (0, 1]: {:?}",
                self.iou_thresholds
            )));
        }
        if !self.iou_thresholds.contains(&0.5) {
            return Err(EvalError::InvalidOptions("IoU thresholds must include 0.5".into()));
        }
        if self.max_detections == 0 {
            return Err(EvalError::InvalidOptions("max_detections must be positive".into()));
        }
        Ok(())
    }
}

/// Indices of `dets` by descending score, ties in input order, capped.
fn ranked(dets: &[ScoredBox], cap: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order.truncate(cap);
    order
}

/// Greedy matching in rank order; each detection takes the unmatched
/// ground truth with the highest IoU at or above `threshold` (first one on
/// ties). Returns a true-positive flag per ranked detection.
fn match_image(dets: &[ScoredBox], order: &[usize], gts: &[BBox], threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = dets[d].bbox.iou(gt);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// AP at each threshold, in threshold order. `detections[i]` and
/// `ground_truth[i]` belong to image `i`.
///
/// Detections from all images are ranked by score (ties: image index, then
/// rank within the image); precision is made monotone from the right and
/// sampled at recall `i / 100`, taking the first rank whose recall reaches
/// the sample point, 0 when none does.
pub fn average_precision(
    detections: &[Vec<ScoredBox>],
    ground_truth: &[Vec<BBox>],
    iou_thresholds: &[f64],
    max_detections: usize,
) -> Result<Vec<f64>, EvalError> {
    if detections.len() != ground_truth.len() {
        return Err(EvalError::ImageCountMismatch {
            detections: detections.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let npos: usize = ground_truth.iter().map(Vec::len).sum();
    if npos == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let orders: Vec<Vec<usize>> = detections.iter().map(|d| ranked(d, max_detections)).collect();
    let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
    for (img, order) in orders.iter().enumerate() {
        for (rank, &d) in order.iter().enumerate() {
            pooled.push((detections[img][d].score, img, rank));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let recalls = recall_points();

    Ok(iou_thresholds
        .iter()
        .map(|&t| {
            let flags: Vec<Vec<bool>> = (0..detections.len())
                .map(|i| match_image(&detections[i], &orders[i], &ground_truth[i], t))
                .collect();
            let mut tp = 0usize;
            let mut rec = Vec::with_capacity(pooled.len());
            let mut prec = Vec::with_capacity(pooled.len());
            for (k, &(_, img, rank)) in pooled.iter().enumerate() {
                if flags[img][rank] {
                    tp += 1;
                }
                rec.push(tp as f64 / npos as f64);
                prec.push(tp as f64 / (k + 1) as f64);
            }
            for i in (1..prec.len()).rev() {
                if prec[i] > prec[i - 1] {
                    prec[i - 1] = prec[i];
                }
            }
            let total: f64 = recalls
                .iter()
                .map(|&r| {
                    let idx = rec.partition_point(|&x| x < r);
                    prec.get(idx).copied().unwrap_or(0.0)
                })
                .sum();
            total / recalls.len() as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn sb(bbox: BBox, score: f64) -> ScoredBox {
        ScoredBox { bbox, score }
    }

    #[test]
    fn thresholds_are_exact() {
        let t = coco_iou_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[4], 0.7);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn perfect_detector() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let ap = average_precision(&[vec![sb(g, 0.01)]], &[vec![g]], &coco_iou_thresholds(), 100).unwrap();
        assert!(ap.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disjoint_detection() {
        let ap = average_precision(
            &[vec![sb(b(20.0, 20.0, 30.0, 30.0), 0.9)]],
            &[vec![b(0.0, 0.0, 10.0, 10.0)]],
            &[0.5],
            100,
        )
        .unwrap();
        assert_eq!(ap, vec![0.0]);
    }

    #[test]
    fn half_recall() {
        let g1 = b(0.0, 0.0, 10.0, 10.0);
        let g2 = b(50.0, 50.0, 60.0, 60.0);
        let ap = average_precision(&[vec![sb(g1, 0.9)]], &[vec![g1, g2]], &[0.5], 100).unwrap();
        assert!((ap[0] - 51.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn false_positive_first() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let ap = average_precision(
            &[vec![sb(b(30.0, 30.0, 40.0, 40.0), 0.9), sb(g, 0.5)]],
            &[vec![g]],
            &[0.5],
            100,
        )
        .unwrap();
        assert!((ap[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn detection_cap_applies_per_image() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let dets = vec![sb(b(30.0, 30.0, 40.0, 40.0), 0.9), sb(g, 0.5)];
        let ap = average_precision(&[dets], &[vec![g]], &[0.5], 1).unwrap();
        assert_eq!(ap, vec![0.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            average_precision(&[vec![]], &[vec![]], &[0.5], 100),
            Err(EvalError::NoGroundTruth)
        ));
        assert!(matches!(
            average_precision(&[], &[vec![b(0.0, 0.0, 1.0, 1.0)]], &[0.5], 100),
            Err(EvalError::ImageCountMismatch { .. })
        ));
    }

    #[test]
    fn options_validation() {
        ApOptions::default().validate().unwrap();
        let o = ApOptions {
            iou_thresholds: vec![0.75],
            ..Default::default()
        };
        assert!(o.validate().is_err());
    }
}
