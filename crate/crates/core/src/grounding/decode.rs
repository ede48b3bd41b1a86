//! Turning score matrices into labelled boxes.

use serde::{Deserialize, Serialize};

use super::{sigmoid, GroundingError, GroundingScores, TargetMatrix};
use crate::prompt::PhraseSpan;
use crate::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxProposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub region_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.5,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), GroundingError> {
        let ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !ok(self.score_threshold) || !ok(self.nms_iou) {
            return Err(GroundingError::InvalidDecodeParams(*self));
        }
        Ok(())
    }
}

fn check_inputs(
    num_regions: usize,
    num_tokens: usize,
    proposals: &[BoxProposal],
    spans: &[PhraseSpan],
) -> Result<(), GroundingError> {
    for span in spans {
        if span.start >= span.end || span.end > num_tokens {
            return Err(GroundingError::SpanOutOfRange {
                category: span.category.clone(),
                start: span.start,
                end: span.end,
                num_tokens,
            });
        }
    }
    for p in proposals {
        if p.region_index >= num_regions {
            return Err(GroundingError::ProposalOutOfRange {
                index: p.region_index,
                num_regions,
            });
        }
    }
    Ok(())
}

/// Per-category greedy suppression. Within a category, candidates are visited
/// by descending score (input order on ties) and a candidate is dropped when
/// its IoU with an already kept box exceeds `nms_iou`. The result is sorted by
/// descending score; equal scores keep their input order.
pub fn non_max_suppression(detections: Vec<Detection>, nms_iou: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &detections[i];
        let suppressed = kept.iter().any(|&k| {
            let other = &detections[k];
            other.category == d.category && other.bbox.iou(&d.bbox) > nms_iou
        });
        if !suppressed {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<Detection>> = detections.into_iter().map(Some).collect();
    kept.into_iter()
        .map(|i| slots[i].take().expect("each index kept once"))
        .collect()
}

/// Category score for each (proposal, span): logistic of the maximum raw score
/// over the span's tokens.
pub fn category_scores(
    scores: &GroundingScores,
    proposals: &[BoxProposal],
    spans: &[PhraseSpan],
) -> Result<Vec<Vec<f64>>, GroundingError> {
    check_inputs(scores.num_regions(), scores.num_tokens(), proposals, spans)?;
    Ok(proposals
        .iter()
        .map(|p| {
            spans
                .iter()
                .map(|s| {
                    let max = (s.start..s.end)
                        .map(|j| scores.get(p.region_index, j))
                        .fold(f64::NEG_INFINITY, f64::max);
                    sigmoid(max)
                })
                .collect()
        })
        .collect())
}

/// Span-max scoring, thresholding (`score >= score_threshold`) and greedy NMS.
/// Candidates enter NMS in proposal-major, span-minor order, which fixes the
/// tie order.
pub fn decode_detections(
    scores: &GroundingScores,
    proposals: &[BoxProposal],
    spans: &[PhraseSpan],
    params: &DecodeParams,
) -> Result<Vec<Detection>, GroundingError> {
    params.validate()?;
    let per_region = category_scores(scores, proposals, spans)?;
    let mut candidates = Vec::new();
    for (p, row) in proposals.iter().zip(&per_region) {
        for (span, &score) in spans.iter().zip(row) {
            if score >= params.score_threshold {
                candidates.push(Detection {
                    bbox: p.bbox,
                    category: span.category.clone(),
                    score,
                });
            }
        }
    }
    Ok(non_max_suppression(candidates, params.nms_iou))
}

/// `T[i][j] = 1` iff proposal `i` overlaps a ground-truth box of the category
/// owning token `j` with IoU >= `iou_threshold`.
pub fn build_targets(
    num_regions: usize,
    num_tokens: usize,
    proposals: &[BoxProposal],
    spans: &[PhraseSpan],
    ground_truth: &[(BBox, String)],
    iou_threshold: f64,
) -> Result<TargetMatrix, GroundingError> {
    check_inputs(num_regions, num_tokens, proposals, spans)?;
    let mut t = TargetMatrix::zeros(num_regions, num_tokens);
    for p in proposals {
        for span in spans {
            let hit = ground_truth
                .iter()
                .any(|(b, c)| *c == span.category && p.bbox.iou(b) >= iou_threshold);
            if hit {
                for j in span.start..span.end {
                    t.set(p.region_index, j, true);
                }
            }
        }
    }
    Ok(t)
}

/// Sliding-window proposals: square windows of each size, stepped by `stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalGrid {
    pub window_sizes: Vec<u32>,
    pub stride: u32,
}

impl Default for ProposalGrid {
    fn default() -> Self {
        Self {
            window_sizes: vec![16],
            stride: 16,
        }
    }
}

impl ProposalGrid {
    /// Windows larger than the image are clamped to the image extent.
    pub fn proposals(&self, width: u32, height: u32) -> Vec<BoxProposal> {
        let mut boxes = Vec::new();
        let stride = self.stride.max(1);
        for &size in &self.window_sizes {
            let (sw, sh) = (size.clamp(1, width.max(1)), size.clamp(1, height.max(1)));
            let mut y = 0;
            while y + sh <= height {
                let mut x = 0;
                while x + sw <= width {
                    let b = BBox::new(x as f64, y as f64, (x + sw) as f64, (y + sh) as f64)
                        .expect("positive window");
                    if !boxes.contains(&b) {
                        boxes.push(b);
                    }
                    x += stride;
                }
                y += stride;
            }
        }
        boxes
            .into_iter()
            .enumerate()
            .map(|(region_index, bbox)| BoxProposal { bbox, region_index })
            .collect()
    }
}
