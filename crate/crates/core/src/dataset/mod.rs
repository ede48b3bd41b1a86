//! Dataset manifests, canonical annotation files, mask conversion and
//! few-shot sampling.

mod annotations;
mod builtin;
mod fewshot;
mod mask;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotations::{
    convert_mask_split, discover_datasets, export_canonical, load_annotation_file, load_dataset,
    AnnotationRecord, CanonicalDocument, LabeledBox, LoadOptions, LoadedDataset, ANNOTATION_FILE,
};
pub use builtin::{builtin_manifest, builtin_manifests};
pub use fewshot::{sample_few_shot, sample_indices, FewShotSpec, Shots};
pub use mask::{mask_to_boxes, LabelMask, MaskMode, DEFAULT_MIN_AREA};

use crate::prompt::CategorySpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("split {split} missing: {path} not found")]
    MissingSplit { split: Split, path: String },
    #[error("{what} count mismatch{}: expected {expected}, found {actual}", split.map(|s| format!(" in {s}")).unwrap_or_default())]
    CountMismatch {
        split: Option<Split>,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("cannot parse {path}: {message}")]
    UnparsableAnnotation { path: String, message: String },
    #[error("invalid annotation in {path}: {message}")]
    InvalidAnnotation { path: String, message: String },
    #[error("mask has no pixels")]
    EmptyMask,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("mask does not match {mode:?} mode: {message}")]
    InvalidMode { mode: MaskMode, message: String },
    #[error("{n_shot} shots requested but the split has {available} images")]
    NExceedsSplit { n_shot: usize, available: usize },
    #[error("invalid few-shot spec: {0}")]
    InvalidShots(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub(crate) fn io_err(path: &Path, e: impl fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (train, val, test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Photography,
    Endoscopy,
    Cytology,
    Histopathology,
    Xray,
    Ct,
    Mri,
    Ultrasound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Bbox,
    BinaryMask,
    InstanceMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Directory-safe identifier.
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
    pub modality: Modality,
    pub categories: Vec<CategorySpec>,
    /// Expected image count per split.
    pub splits: BTreeMap<Split, usize>,
    pub expected_boxes: usize,
    pub label_source: LabelSource,
    /// Named test subsets and their image counts, informational.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub test_subsets: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidManifest(m));
        let safe = |c: char| c.is_ascii_alphanumeric() || c == '-' || c == '_';
        if self.name.is_empty() || !self.name.chars().all(safe) {
            return bad(format!("name {:?} must be non-empty [A-Za-z0-9_-]", self.name));
        }
        if self.categories.is_empty() {
            return bad(format!("{} declares no categories", self.name));
        }
        for c in &self.categories {
            c.validate()
                .map_err(|e| DatasetError::InvalidManifest(format!("{}: {e}", self.name)))?;
        }
        if let Some((s, _)) = self.splits.iter().find(|(_, &n)| n == 0) {
            return bad(format!("{}: split {s} declares zero images", self.name));
        }
        if self.splits.is_empty() {
            return bad(format!("{} declares no splits", self.name));
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn total_images(&self) -> usize {
        self.splits.values().sum()
    }

    /// JSON or TOML, chosen by extension.
    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let parsed: Result<Self, String> = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| e.to_string()),
            _ => serde_json::from_str(&text).map_err(|e| e.to_string()),
        };
        let m = parsed.map_err(|message| DatasetError::InvalidManifest(format!("{}: {message}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }
}
