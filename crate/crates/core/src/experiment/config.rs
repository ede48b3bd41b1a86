use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dataset::{FewShotSpec, Split};
use crate::digest::stable_digest;
use crate::eval::ApOptions;
use crate::grounding::{DecodeParams, EncoderDescriptor, EncoderKind};
use crate::mlm::{MaskedLmDescriptor, MlmOptions};
use crate::vqa::VqaBackendDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Bare category names.
    DefaultClass,
    Manual,
    Mlm,
    Vqa,
    Hybrid,
}

impl PromptMode {
    pub fn is_image_specific(&self) -> bool {
        matches!(self, PromptMode::Vqa | PromptMode::Hybrid)
    }

    pub fn needs_mlm(&self) -> bool {
        matches!(self, PromptMode::Mlm | PromptMode::Hybrid)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::DefaultClass => "default_class",
            PromptMode::Manual => "manual",
            PromptMode::Mlm => "mlm",
            PromptMode::Vqa => "vqa",
            PromptMode::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            PromptMode::DefaultClass,
            PromptMode::Manual,
            PromptMode::Mlm,
            PromptMode::Vqa,
            PromptMode::Hybrid,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| format!("unknown prompt mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlm: Option<MaskedLmDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa: Option<VqaBackendDescriptor>,
    pub encoder: EncoderDescriptor,
}

fn d_split() -> Split {
    Split::Test
}
fn d_input_size() -> u32 {
    800
}
fn d_freeze() -> Vec<bool> {
    vec![true, true, false, false]
}
fn d_epochs() -> usize {
    10
}
fn d_lr() -> f64 {
    1e-4
}
fn d_text_lr() -> f64 {
    1e-5
}
fn d_wd() -> f64 {
    0.05
}
fn d_decay() -> f64 {
    0.1
}
fn d_patience() -> usize {
    3
}
fn d_delta() -> f64 {
    1e-4
}
fn d_output() -> PathBuf {
    PathBuf::from("runs")
}

/// One experiment. Relative paths resolve against the data root the run is
/// started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset directory holding `manifest.json`/`manifest.toml`, or the
    /// manifest file itself.
    pub dataset: PathBuf,
    #[serde(default = "d_split")]
    pub eval_split: Split,
    pub prompt_mode: PromptMode,
    /// Templates, manual values and questions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_config: Option<PathBuf>,
    /// Template name inside `prompt_config`. Without one, attributes are
    /// listed before the name and the location after it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Replaces every category's attribute slots when non-empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub backends: Backends,
    #[serde(default)]
    pub mlm_options: MlmOptions,
    #[serde(default = "d_input_size")]
    pub input_size: u32,
    #[serde(default = "d_freeze")]
    pub freeze_image_layers: Vec<bool>,
    #[serde(default)]
    pub freeze_text_layers: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<FewShotSpec>,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_text_lr")]
    pub text_learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_decay")]
    pub lr_decay_factor: f64,
    /// Validation evaluations without improvement before the rate decays.
    #[serde(default = "d_patience")]
    pub plateau_patience: usize,
    /// Smallest mean-AP gain that counts as an improvement.
    #[serde(default = "d_delta")]
    pub plateau_min_delta: f64,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub evaluation: ApOptions,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults everywhere except the required fields.
    pub fn new(dataset: impl Into<PathBuf>, prompt_mode: PromptMode, encoder: EncoderDescriptor) -> Self {
        Self {
            dataset: dataset.into(),
            eval_split: d_split(),
            prompt_mode,
            prompt_config: None,
            template: None,
            attributes: Vec::new(),
            k: None,
            backends: Backends {
                mlm: None,
                vqa: None,
                encoder,
            },
            mlm_options: MlmOptions::default(),
            input_size: d_input_size(),
            freeze_image_layers: d_freeze(),
            freeze_text_layers: false,
            shots: None,
            epochs: d_epochs(),
            learning_rate: d_lr(),
            text_learning_rate: d_text_lr(),
            weight_decay: d_wd(),
            lr_decay_factor: d_decay(),
            plateau_patience: d_patience(),
            plateau_min_delta: d_delta(),
            decode: DecodeParams::default(),
            evaluation: ApOptions::default(),
            output_dir: d_output(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ExperimentError> {
        toml::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// `.toml` or JSON, chosen by extension.
    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        let mode = self.prompt_mode;
        match (mode, self.k) {
            (PromptMode::Mlm, None) => return bad("k is required in mlm mode"),
            (PromptMode::Mlm, Some(0)) => return bad("k must be at least 1"),
            (m, Some(_)) if m != PromptMode::Mlm => return bad("k is only allowed in mlm mode"),
            _ => {}
        }
        if mode.is_image_specific() && self.backends.vqa.is_none() {
            return bad("vqa and hybrid modes need a vqa backend");
        }
        if mode.needs_mlm() && self.backends.mlm.is_none() {
            return bad("mlm and hybrid modes need an mlm backend");
        }
        if mode == PromptMode::Manual && self.prompt_config.is_none() {
            return bad("manual mode needs a prompt_config with attribute values");
        }
        if mode == PromptMode::DefaultClass && (self.template.is_some() || !self.attributes.is_empty()) {
            return bad("default_class mode takes no template or attributes");
        }
        if self.template.is_some() && self.prompt_config.is_none() {
            return bad("a named template needs a prompt_config");
        }
        if let Some(m) = &self.backends.mlm {
            m.validate()?;
        }
        if let Some(v) = &self.backends.vqa {
            v.validate()?;
        }
        self.backends.encoder.validate()?;
        if self.input_size == 0 {
            return bad("input_size must be positive");
        }
        self.decode.validate()?;
        self.evaluation.validate()?;
        if self.shots.is_some() {
            if self.backends.encoder.kind != EncoderKind::Toy {
                return bad("few-shot training needs the toy encoder");
            }
            if self.epochs == 0 {
                return bad("few-shot training needs at least one epoch");
            }
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.learning_rate) || !pos(self.text_learning_rate) {
            return bad("learning rates must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must be in (0, 1]");
        }
        if self.plateau_patience == 0 || !(self.plateau_min_delta.is_finite() && self.plateau_min_delta >= 0.0) {
            return bad("plateau_patience must be positive and plateau_min_delta non-negative");
        }
        Ok(())
    }

    /// SHA-256 of the canonical config with `output_dir` cleared, so the
    /// same experiment written to two places has one digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        stable_digest(&c).expect("config serializes")
    }
}
