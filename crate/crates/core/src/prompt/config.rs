//! Prompt configuration documents (`templates`, `categories`, `attributes`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    manual_values, AttributeKind, AttributeName, CategorySpec, PromptEntry, PromptError,
    PromptTemplate, SynonymDisplay,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeEntry {
    /// Required for names outside the canonical set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AttributeKind>,
    /// Question pattern for the VQA generator, containing `[OBJ]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryEntry {
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub display: SynonymDisplay,
    #[serde(default)]
    pub attributes: Vec<String>,
    /// Manual attribute values.
    #[serde(default)]
    pub values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    #[serde(default)]
    pub templates: BTreeMap<String, PromptTemplate>,
    #[serde(default)]
    pub categories: Vec<CategoryEntry>,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttributeEntry>,
}

impl PromptConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PromptError> {
        toml::from_str(s).map_err(|e| PromptError::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, PromptError> {
        serde_json::from_str(s).map_err(|e| PromptError::Config(e.to_string()))
    }

    /// Reads a `.toml` or `.json` document.
    pub fn from_path(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Config(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn attribute(&self, name: &str) -> Result<AttributeName, PromptError> {
        match self.attributes.get(name).and_then(|e| e.kind) {
            Some(kind) => AttributeName::custom(name, kind),
            None => AttributeName::canonical(name),
        }
    }

    pub fn template(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(name)
            .ok_or_else(|| PromptError::Config(format!("no template named {name:?}")))
    }

    pub fn category_specs(&self) -> Result<Vec<CategorySpec>, PromptError> {
        self.categories
            .iter()
            .map(|c| {
                let spec = CategorySpec {
                    name: c.name.clone(),
                    synonyms: c.synonyms.clone(),
                    attribute_slots: c
                        .attributes
                        .iter()
                        .map(|a| self.attribute(a))
                        .collect::<Result<_, _>>()?,
                    display: c.display,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    /// Categories paired with their manual values.
    pub fn manual_entries(&self) -> Result<Vec<PromptEntry>, PromptError> {
        let specs = self.category_specs()?;
        specs
            .into_iter()
            .zip(&self.categories)
            .map(|(spec, c)| {
                let values =
                    manual_values(c.values.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
                Ok(PromptEntry::new(spec, values))
            })
            .collect()
    }

    /// Question patterns keyed by attribute name.
    pub fn questions(&self) -> BTreeMap<String, String> {
        self.attributes
            .iter()
            .filter_map(|(k, v)| v.question.clone().map(|q| (k.clone(), q)))
            .collect()
    }
}
