use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError, LabeledPrompts, PromptMode};
use crate::dataset::Split;
use crate::eval::{EvalReport, ImageDetections};
use crate::grounding::ToyEncoder;

pub const CONFIG_FILE: &str = "config.json";
pub const PROMPTS_FILE: &str = "prompts.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const REPORT_FILE: &str = "report.json";
pub const VARIANTS_FILE: &str = "variants.json";
pub const TRAINING_FILE: &str = "training.json";
pub const ENCODER_FILE: &str = "encoder.json";
pub const LOG_FILE: &str = "log.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss before this epoch's step.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_mean_ap: Option<f64>,
    pub image_lr: f64,
    pub text_lr: f64,
    #[serde(default)]
    pub decayed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub shots: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Mean training loss after the last step.
    pub final_loss: f64,
}

/// Everything a run produced, as stored under `<output_dir>/<digest>/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config_digest: String,
    pub config: ExperimentConfig,
    /// The first set is the evaluated one.
    pub prompts: Vec<LabeledPrompts>,
    pub detections: Vec<ImageDetections>,
    pub report: EvalReport,
    /// One report per prompt set when several were generated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variant_reports: Vec<VariantReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned_encoder: Option<ToyEncoder>,
    pub log: Vec<String>,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), ExperimentError> {
    let p = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(&p, text + "\n").map_err(|e| ExperimentError::io(&p, e))
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T, ExperimentError> {
    let p = dir.join(name);
    let text = std::fs::read_to_string(&p).map_err(|e| ExperimentError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Artifact(format!("{}: {e}", p.display())))
}

fn read_optional<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Option<T>, ExperimentError> {
    if dir.join(name).is_file() {
        read_json(dir, name).map(Some)
    } else {
        Ok(None)
    }
}

pub fn write_log(dir: &Path, log: &[String]) -> Result<(), ExperimentError> {
    let p = dir.join(LOG_FILE);
    let mut text = log.join("\n");
    text.push('\n');
    std::fs::write(&p, text).map_err(|e| ExperimentError::io(&p, e))
}

impl RunArtifact {
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        write_json(dir, CONFIG_FILE, &self.config)?;
        write_json(dir, PROMPTS_FILE, &self.prompts)?;
        write_json(dir, DETECTIONS_FILE, &self.detections)?;
        write_json(dir, REPORT_FILE, &self.report)?;
        if !self.variant_reports.is_empty() {
            write_json(dir, VARIANTS_FILE, &self.variant_reports)?;
        }
        if let Some(t) = &self.training {
            write_json(dir, TRAINING_FILE, t)?;
        }
        if let Some(e) = &self.tuned_encoder {
            write_json(dir, ENCODER_FILE, e)?;
        }
        write_log(dir, &self.log)
    }

    /// Reads a run directory back and checks that the stored config still
    /// hashes to the recorded digest.
    pub fn load(dir: &Path) -> Result<Self, ExperimentError> {
        let config: ExperimentConfig = read_json(dir, CONFIG_FILE)?;
        let report: EvalReport = read_json(dir, REPORT_FILE)?;
        let digest = config.digest();
        if report.config_digest != digest {
            return Err(ExperimentError::Artifact(format!(
                "{}: stored config hashes to {digest}, report records {}",
                dir.display(),
                report.config_digest
            )));
        }
        let log_path = dir.join(LOG_FILE);
        let log = std::fs::read_to_string(&log_path)
            .map_err(|e| ExperimentError::io(&log_path, e))?
            .lines()
            .map(str::to_string)
            .collect();
        Ok(Self {
            config_digest: digest,
            config,
            prompts: read_json(dir, PROMPTS_FILE)?,
            detections: read_json(dir, DETECTIONS_FILE)?,
            report,
            variant_reports: read_optional(dir, VARIANTS_FILE)?.unwrap_or_default(),
            training: read_optional(dir, TRAINING_FILE)?,
            tuned_encoder: read_optional(dir, ENCODER_FILE)?,
            log,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub dataset: PathBuf,
    pub prompt_mode: PromptMode,
    pub eval_split: Split,
    pub few_shot: bool,
    pub mean_ap: f64,
    pub mean_ap50: f64,
}

/// Completed runs under `output_dir`, by digest. Directories without a
/// report (failed runs) are skipped.
pub fn list_runs(output_dir: &Path) -> Result<Vec<RunSummary>, ExperimentError> {
    let entries = match std::fs::read_dir(output_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ExperimentError::io(output_dir, e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let dir = entry.map_err(|e| ExperimentError::io(output_dir, e))?.path();
        if !dir.join(REPORT_FILE).is_file() || !dir.join(CONFIG_FILE).is_file() {
            continue;
        }
        let config: ExperimentConfig = read_json(&dir, CONFIG_FILE)?;
        let report: EvalReport = read_json(&dir, REPORT_FILE)?;
        out.push(RunSummary {
            config_digest: report.config_digest,
            dataset: config.dataset,
            prompt_mode: config.prompt_mode,
            eval_split: config.eval_split,
            few_shot: config.shots.is_some(),
            mean_ap: report.mean_ap,
            mean_ap50: report.mean_ap50,
        });
    }
    out.sort_by(|a, b| a.config_digest.cmp(&b.config_digest));
    Ok(out)
}
