use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_precision, ApOptions, EvalError, ScoredBox};
use crate::dataset::AnnotationRecord;
use crate::grounding::{DecodeParams, Detection, GroundingDetector};
use crate::prompt::ComposedPrompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub ap: f64,
    pub ap50: f64,
    pub num_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<String, CategoryMetrics>,
    pub mean_ap: f64,
    pub mean_ap50: f64,
    pub num_images: usize,
    pub num_gt_boxes: usize,
    /// Categories without ground truth, left out of the means.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
    pub config_digest: String,
}

/// Per-category AP/AP50 over `ground_truth`. Every ground-truth image must
/// have an entry in `run` and vice versa. Detections whose category is not in
/// `categories` are ignored.
pub fn evaluate(
    run: &[ImageDetections],
    ground_truth: &[AnnotationRecord],
    categories: &[String],
    options: &ApOptions,
    config_digest: &str,
) -> Result<EvalReport, EvalError> {
    options.validate()?;
    let by_id: BTreeMap<&str, &ImageDetections> = run.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let gt_ids: BTreeSet<&str> = ground_truth.iter().map(|r| r.image.id.as_str()).collect();
    let missing: Vec<String> = gt_ids.iter().filter(|id| !by_id.contains_key(*id)).map(|s| s.to_string()).collect();
    let extra: Vec<String> = by_id.keys().filter(|id| !gt_ids.contains(*id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() || by_id.len() != run.len() {
        return Err(EvalError::SplitMismatch { missing, extra });
    }
    let ap50_index = options
        .iou_thresholds
        .iter()
        .position(|&t| t == 0.5)
        .expect("validated");

    let per: Vec<(String, Option<CategoryMetrics>)> = categories
        .par_iter()
        .map(|cat| {
            let dets: Vec<Vec<ScoredBox>> = ground_truth
                .iter()
                .map(|r| {
                    by_id[r.image.id.as_str()]
                        .detections
                        .iter()
                        .filter(|d| &d.category == cat)
                        .map(|d| ScoredBox {
                            bbox: d.bbox,
                            score: d.score,
                        })
                        .collect()
                })
                .collect();
            let gts: Vec<Vec<_>> = ground_truth
                .iter()
                .map(|r| r.boxes.iter().filter(|b| &b.category == cat).map(|b| b.bbox).collect())
                .collect();
            let num_gt: usize = gts.iter().map(Vec::len).sum();
            if num_gt == 0 {
                return Ok((cat.clone(), None));
            }
            let aps = average_precision(&dets, &gts, &options.iou_thresholds, options.max_detections)?;
            let ap = aps.iter().sum::<f64>() / aps.len() as f64;
            Ok((
                cat.clone(),
                Some(CategoryMetrics {
                    ap,
                    ap50: aps[ap50_index],
                    num_gt,
                }),
            ))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut per_category = BTreeMap::new();
    let mut excluded = Vec::new();
    for (cat, m) in per {
        match m {
            Some(m) => {
                per_category.insert(cat, m);
            }
            None => excluded.push(cat),
        }
    }
    if per_category.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let n = per_category.len() as f64;
    Ok(EvalReport {
        mean_ap: per_category.values().map(|m| m.ap).sum::<f64>() / n,
        mean_ap50: per_category.values().map(|m| m.ap50).sum::<f64>() / n,
        num_images: ground_truth.len(),
        num_gt_boxes: ground_truth.iter().map(|r| r.boxes.len()).sum(),
        per_category,
        excluded,
        config_digest: config_digest.to_string(),
    })
}

/// Grounds every record with the prompt `prompt_for` picks for it, in
/// parallel; output follows record order.
pub fn ground_records<'a, F>(
    records: &[AnnotationRecord],
    prompt_for: F,
    detector: &dyn GroundingDetector,
    decode: &DecodeParams,
) -> Result<Vec<ImageDetections>, EvalError>
where
    F: Fn(&AnnotationRecord) -> Option<&'a ComposedPrompt> + Sync,
{
    records
        .par_iter()
        .map(|r| {
            let prompt = prompt_for(r).ok_or_else(|| EvalError::MissingPrompt(r.image.id.clone()))?;
            let out = detector
                .ground(&r.image, prompt, decode)
                .map_err(|source| EvalError::Grounding {
                    image_id: r.image.id.clone(),
                    source,
                })?;
            Ok(ImageDetections {
                image_id: r.image.id.clone(),
                detections: out.detections,
            })
        })
        .collect()
}
