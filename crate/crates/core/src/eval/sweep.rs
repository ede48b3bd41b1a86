//! Comparing prompt variants under identical grounding settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate, ground_records, ApOptions, EvalError, EvalReport, ImageDetections};
use crate::dataset::AnnotationRecord;
use crate::digest::stable_digest;
use crate::grounding::{DecodeParams, GroundingDetector};
use crate::prompt::ComposedPrompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "prompts", rename_all = "snake_case")]
pub enum PromptSource {
    /// One prompt for every image.
    Static(ComposedPrompt),
    /// Prompt per image id.
    PerImage(BTreeMap<String, ComposedPrompt>),
}

impl PromptSource {
    pub fn prompt_for(&self, image_id: &str) -> Option<&ComposedPrompt> {
        match self {
            PromptSource::Static(p) => Some(p),
            PromptSource::PerImage(m) => m.get(image_id),
        }
    }

    /// The static prompt text, or a marker for per-image prompts.
    pub fn describe(&self) -> String {
        match self {
            PromptSource::Static(p) => p.text.clone(),
            PromptSource::PerImage(m) => format!("<{} per-image prompts>", m.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepVariant {
    pub label: String,
    pub source: PromptSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub source: PromptSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub detections: Vec<ImageDetections>,
}

/// Evaluates each variant in turn. A failing variant is recorded in its row
/// and the remaining variants still run.
#[allow(clippy::too_many_arguments)]
pub fn prompt_sweep(
    variants: &[SweepVariant],
    records: &[AnnotationRecord],
    categories: &[String],
    detector: &dyn GroundingDetector,
    decode: &DecodeParams,
    options: &ApOptions,
    config_digest: &str,
) -> Result<Vec<SweepRow>, EvalError> {
    if variants.is_empty() {
        return Err(EvalError::NoVariants);
    }
    if let Some(v) = variants.iter().find(|v| v.label.trim().is_empty()) {
        return Err(EvalError::InvalidOptions(format!(
            "variant with prompt {:?} has an empty label",
            v.source.describe()
        )));
    }
    Ok(variants
        .iter()
        .map(|v| {
            let outcome = ground_records(records, |r| v.source.prompt_for(&r.image.id), detector, decode)
                .and_then(|run| {
                    let report = evaluate(&run, records, categories, options, config_digest)?;
                    Ok((run, report))
                });
            match outcome {
                Ok((detections, report)) => SweepRow {
                    label: v.label.clone(),
                    source: v.source.clone(),
                    report: Some(report),
                    error: None,
                    detections,
                },
                Err(e) => SweepRow {
                    label: v.label.clone(),
                    source: v.source.clone(),
                    report: None,
                    error: Some(e.to_string()),
                    detections: Vec::new(),
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTableRow {
    pub label: String,
    pub prompt: String,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub error: Option<String>,
    pub detections_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub sweep_id: String,
    pub config_digest: String,
    pub rows: Vec<SweepTableRow>,
}

/// Identifier derived from the rows' labels and prompts plus the digest.
pub fn sweep_id(variants: &[SweepVariant], config_digest: &str) -> String {
    let d = stable_digest(&(variants, config_digest)).expect("variants serialize");
    d[..16].to_string()
}

/// Writes `sweep-<id>.json` plus one `sweep-<id>-row<k>.detections.json`
/// per successful row. Returns the table path.
pub fn write_sweep(rows: &[SweepRow], id: &str, config_digest: &str, dir: &Path) -> Result<PathBuf, EvalError> {
    let io = |p: &Path, e: std::io::Error| EvalError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut table = SweepTable {
        sweep_id: id.to_string(),
        config_digest: config_digest.to_string(),
        rows: Vec::new(),
    };
    for (k, row) in rows.iter().enumerate() {
        let detections_file = match row.report {
            Some(_) => {
                let name = format!("sweep-{id}-row{k}.detections.json");
                let p = dir.join(&name);
                let text = serde_json::to_string_pretty(&row.detections).expect("detections serialize");
                std::fs::write(&p, text + "\n").map_err(|e| io(&p, e))?;
                Some(name)
            }
            None => None,
        };
        table.rows.push(SweepTableRow {
            label: row.label.clone(),
            prompt: row.source.describe(),
            ap: row.report.as_ref().map(|r| r.mean_ap),
            ap50: row.report.as_ref().map(|r| r.mean_ap50),
            error: row.error.clone(),
            detections_file,
        });
    }
    let p = dir.join(format!("sweep-{id}.json"));
    let text = serde_json::to_string_pretty(&table).expect("table serializes");
    std::fs::write(&p, text + "\n").map_err(|e| io(&p, e))?;
    Ok(p)
}

/// Markdown table of label, prompt, AP and AP50 in percent.
pub fn render_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("| label | prompt | AP | AP50 |\n|---|---|---|---|\n");
    for r in rows {
        let (ap, ap50) = match (&r.report, &r.error) {
            (Some(rep), _) => (format!("{:.1}", rep.mean_ap * 100.0), format!("{:.1}", rep.mean_ap50 * 100.0)),
            (None, Some(e)) => (format!("error: {e}"), String::new()),
            (None, None) => (String::new(), String::new()),
        };
        out.push_str(&format!("| {} | {} | {ap} | {ap50} |\n", r.label, r.source.describe()));
    }
    out
}
