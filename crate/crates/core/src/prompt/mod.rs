//! Attributes, categories and templates, and the composition of grounding
//! prompts from them.
//!
//! A prompt is the concatenation of one filled template per category. Each
//! category's phrase is tracked as a [`PhraseSpan`] over the whitespace tokens
//! of the final text so grounding scores can be mapped back to labels.

mod config;
mod rearrange;
mod template;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{AttributeEntry, CategoryEntry, PromptConfig};
pub use rearrange::rearrange_for_grounding;
pub use template::{PromptTemplate, DEFAULT_JOINER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("invalid attribute name {0:?}: must be non-empty lowercase without '.' or ','")]
    InvalidAttributeName(String),
    #[error("attribute {name:?} must have kind {expected:?}, got {found:?}")]
    AttributeKindMismatch {
        name: String,
        expected: AttributeKind,
        found: AttributeKind,
    },
    #[error("attribute {0:?} is not canonical; declare its kind explicitly")]
    UnknownAttribute(String),
    #[error("attribute value is empty")]
    EmptyValue,
    #[error("rank and probability must be present exactly when the value comes from a masked LM")]
    InconsistentValueMetadata,
    #[error("invalid category: {0}")]
    InvalidCategory(String),
    #[error("category {category:?} lists attribute {attribute:?} twice")]
    DuplicateAttributeSlot { category: String, attribute: String },
    #[error("malformed template {pattern:?}: {reason}")]
    MalformedTemplate { pattern: String, reason: String },
    #[error("no value for placeholder [ATTR:{attribute}] of category {category:?}")]
    MissingAttributeValue { category: String, attribute: String },
    #[error("value {value:?} for attribute {attribute:?} contains the joiner {joiner:?}")]
    ValueContainsJoiner {
        attribute: String,
        value: String,
        joiner: String,
    },
    #[error("a prompt needs at least one category")]
    EmptyPrompt,
    #[error("category {0:?} appears more than once")]
    DuplicateCategory(String),
    #[error("category {category:?} not found in {sentence:?}")]
    CategoryNotFound { category: String, sentence: String },
    #[error("image reference must be present exactly for image-specific variants")]
    ImageRefMismatch,
    #[error("invalid spans: {0}")]
    InvalidSpans(String),
    #[error("prompt config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    /// Visible on the object itself (shape, color, texture, size).
    Intrinsic,
    Location,
    Other,
}

/// Canonical attribute names and their kinds.
pub const CANONICAL_ATTRIBUTES: [(&str, AttributeKind); 6] = [
    ("shape", AttributeKind::Intrinsic),
    ("color", AttributeKind::Intrinsic),
    ("texture", AttributeKind::Intrinsic),
    ("location", AttributeKind::Location),
    ("size", AttributeKind::Intrinsic),
    ("modality", AttributeKind::Other),
];

fn canonical_kind(name: &str) -> Option<AttributeKind> {
    CANONICAL_ATTRIBUTES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, k)| *k)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "AttributeNameRepr", into = "AttributeNameRepr")]
pub struct AttributeName {
    name: String,
    kind: AttributeKind,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AttributeNameRepr {
    Canonical(String),
    Declared { name: String, kind: AttributeKind },
}

impl TryFrom<AttributeNameRepr> for AttributeName {
    type Error = PromptError;

    fn try_from(r: AttributeNameRepr) -> Result<Self, Self::Error> {
        match r {
            AttributeNameRepr::Canonical(name) => AttributeName::canonical(&name),
            AttributeNameRepr::Declared { name, kind } => AttributeName::custom(&name, kind),
        }
    }
}

impl From<AttributeName> for AttributeNameRepr {
    fn from(a: AttributeName) -> Self {
        if canonical_kind(&a.name) == Some(a.kind) {
            AttributeNameRepr::Canonical(a.name)
        } else {
            AttributeNameRepr::Declared {
                name: a.name,
                kind: a.kind,
            }
        }
    }
}

fn check_attribute_name(name: &str) -> Result<(), PromptError> {
    let ok = !name.is_empty()
        && !name.contains(['.', ',', '[', ']'])
        && !name.chars().any(char::is_whitespace)
        && name.chars().all(|c| !c.is_uppercase());
    if ok {
        Ok(())
    } else {
        Err(PromptError::InvalidAttributeName(name.to_string()))
    }
}

impl AttributeName {
    /// One of the canonical attributes (`shape`, `color`, `texture`,
    /// `location`, `size`, `modality`).
    pub fn canonical(name: &str) -> Result<Self, PromptError> {
        check_attribute_name(name)?;
        let kind =
            canonical_kind(name).ok_or_else(|| PromptError::UnknownAttribute(name.to_string()))?;
        Ok(Self {
            name: name.to_string(),
            kind,
        })
    }

    /// A user-defined attribute. Canonical names keep their canonical kind.
    pub fn custom(name: &str, kind: AttributeKind) -> Result<Self, PromptError> {
        check_attribute_name(name)?;
        if let Some(expected) = canonical_kind(name) {
            if expected != kind {
                return Err(PromptError::AttributeKindMismatch {
                    name: name.to_string(),
                    expected,
                    found: kind,
                });
            }
        } else if kind == AttributeKind::Location {
            return Err(PromptError::AttributeKindMismatch {
                name: name.to_string(),
                expected: AttributeKind::Other,
                found: kind,
            });
        }
        Ok(Self {
            name: name.to_string(),
            kind,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> AttributeKind {
        self.kind
    }

    pub fn is_location(&self) -> bool {
        self.kind == AttributeKind::Location
    }
}

impl std::fmt::Display for AttributeName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Manual,
    Mlm,
    Vqa,
}

/// The text that fills one attribute slot, with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AttributeValueRepr", into = "AttributeValueRepr")]
pub struct AttributeValue {
    value: String,
    source: ValueSource,
    rank: Option<u32>,
    probability: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct AttributeValueRepr {
    value: String,
    source: ValueSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
}

impl TryFrom<AttributeValueRepr> for AttributeValue {
    type Error = PromptError;

    fn try_from(r: AttributeValueRepr) -> Result<Self, Self::Error> {
        match (r.source, r.rank, r.probability) {
            (ValueSource::Mlm, Some(rank), Some(p)) => AttributeValue::mlm(&r.value, rank, p),
            (ValueSource::Manual, None, None) => AttributeValue::manual(&r.value),
            (ValueSource::Vqa, None, None) => AttributeValue::vqa(&r.value),
            _ => Err(PromptError::InconsistentValueMetadata),
        }
    }
}

impl From<AttributeValue> for AttributeValueRepr {
    fn from(v: AttributeValue) -> Self {
        Self {
            value: v.value,
            source: v.source,
            rank: v.rank,
            probability: v.probability,
        }
    }
}

fn non_empty(value: &str) -> Result<String, PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::EmptyValue)
    } else {
        Ok(value.to_string())
    }
}

impl AttributeValue {
    pub fn manual(value: &str) -> Result<Self, PromptError> {
        Ok(Self {
            value: non_empty(value)?,
            source: ValueSource::Manual,
            rank: None,
            probability: None,
        })
    }

    pub fn vqa(value: &str) -> Result<Self, PromptError> {
        Ok(Self {
            value: non_empty(value)?,
            source: ValueSource::Vqa,
            rank: None,
            probability: None,
        })
    }

    pub fn mlm(value: &str, rank: u32, probability: f64) -> Result<Self, PromptError> {
        if rank == 0 || !(0.0..=1.0).contains(&probability) {
            return Err(PromptError::InconsistentValueMetadata);
        }
        Ok(Self {
            value: non_empty(value)?,
            source: ValueSource::Mlm,
            rank: Some(rank),
            probability: Some(probability),
        })
    }

    pub fn value(&self) -> &str {
        &self.value
    }
    pub fn source(&self) -> ValueSource {
        self.source
    }
    pub fn rank(&self) -> Option<u32> {
        self.rank
    }
    pub fn probability(&self) -> Option<f64> {
        self.probability
    }
}

/// Attribute values for one category keyed by attribute name.
pub type AttributeValues = BTreeMap<String, AttributeValue>;

/// Builds manual values from `(attribute, text)` pairs.
pub fn manual_values<'a, I>(pairs: I) -> Result<AttributeValues, PromptError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    pairs
        .into_iter()
        .map(|(k, v)| Ok((k.to_string(), AttributeValue::manual(v)?)))
        .collect()
}

/// How configured synonyms show up where the template says `[OBJ]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynonymDisplay {
    /// Name only.
    #[default]
    Name,
    /// `name or synonym or ...`
    Or,
    /// `name, synonym, ...`
    Comma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub attribute_slots: Vec<AttributeName>,
    #[serde(default)]
    pub display: SynonymDisplay,
}

impl CategorySpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            synonyms: Vec::new(),
            attribute_slots: Vec::new(),
            display: SynonymDisplay::Name,
        }
    }

    pub fn with_synonyms(mut self, synonyms: &[&str], display: SynonymDisplay) -> Self {
        self.synonyms = synonyms.iter().map(|s| s.to_string()).collect();
        self.display = display;
        self
    }

    pub fn with_attributes(mut self, slots: Vec<AttributeName>) -> Self {
        self.attribute_slots = slots;
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.name.trim().is_empty() {
            return Err(PromptError::InvalidCategory("empty name".into()));
        }
        if self.synonyms.iter().any(|s| s == &self.name) {
            return Err(PromptError::InvalidCategory(format!(
                "{:?} lists itself as a synonym",
                self.name
            )));
        }
        if self.synonyms.iter().any(|s| s.trim().is_empty()) {
            return Err(PromptError::InvalidCategory(format!(
                "{:?} has an empty synonym",
                self.name
            )));
        }
        let mut seen = BTreeSet::new();
        for slot in &self.attribute_slots {
            if !seen.insert(slot.name()) {
                return Err(PromptError::DuplicateAttributeSlot {
                    category: self.name.clone(),
                    attribute: slot.name().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Text substituted for `[OBJ]`.
    pub fn display_name(&self) -> String {
        if self.synonyms.is_empty() {
            return self.name.clone();
        }
        let sep = match self.display {
            SynonymDisplay::Name => return self.name.clone(),
            SynonymDisplay::Or => " or ",
            SynonymDisplay::Comma => ", ",
        };
        std::iter::once(self.name.as_str())
            .chain(self.synonyms.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Name followed by synonyms.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }

    pub fn slot(&self, name: &str) -> Option<&AttributeName> {
        self.attribute_slots.iter().find(|a| a.name() == name)
    }
}

/// Which generator produced a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptVariant {
    Manual,
    Mlm { rank: usize },
    Vqa,
    Hybrid,
}

impl PromptVariant {
    pub fn is_image_specific(&self) -> bool {
        matches!(self, PromptVariant::Vqa | PromptVariant::Hybrid)
    }
}

/// Token range `[start, end)` of one category's phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub category: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProvenance {
    pub category: String,
    pub values: AttributeValues,
    /// Cloze sentence or question that produced each value, when generated.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub queries: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub text: String,
    pub spans: Vec<PhraseSpan>,
    pub variant: PromptVariant,
    pub provenance: Vec<CategoryProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// Whitespace tokenization used for spans. Punctuation stays on its token.
pub fn whitespace_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

impl ComposedPrompt {
    /// A prompt typed by hand with explicit spans.
    pub fn from_text_and_spans(text: &str, spans: Vec<PhraseSpan>) -> Result<Self, PromptError> {
        let prompt = Self {
            text: text.to_string(),
            spans,
            variant: PromptVariant::Manual,
            provenance: Vec::new(),
            image_ref: None,
        };
        prompt.check_spans()?;
        Ok(prompt)
    }

    pub fn tokens(&self) -> Vec<&str> {
        whitespace_tokens(&self.text)
    }

    pub fn num_tokens(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn span_tokens(&self, span: &PhraseSpan) -> Vec<&str> {
        self.tokens()[span.start..span.end].to_vec()
    }

    pub fn span_for(&self, category: &str) -> Option<&PhraseSpan> {
        self.spans.iter().find(|s| s.category == category)
    }

    /// Spans ordered, non-empty, non-overlapping and within the token count.
    pub fn check_spans(&self) -> Result<(), PromptError> {
        let n = self.num_tokens();
        let mut prev_end = 0;
        let mut names = BTreeSet::new();
        for s in &self.spans {
            if s.start >= s.end || s.end > n {
                return Err(PromptError::InvalidSpans(format!(
                    "span {:?} [{}, {}) outside {} tokens",
                    s.category, s.start, s.end, n
                )));
            }
            if s.start < prev_end {
                return Err(PromptError::InvalidSpans(format!(
                    "span {:?} overlaps or precedes the previous span",
                    s.category
                )));
            }
            if !names.insert(s.category.as_str()) {
                return Err(PromptError::DuplicateCategory(s.category.clone()));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

/// One category and the values that fill its template.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEntry {
    pub category: CategorySpec,
    pub values: AttributeValues,
    pub queries: BTreeMap<String, String>,
}

impl PromptEntry {
    pub fn new(category: CategorySpec, values: AttributeValues) -> Self {
        Self {
            category,
            values,
            queries: BTreeMap::new(),
        }
    }
}

/// Fills `template` for one category.
pub fn fill_template(
    template: &PromptTemplate,
    values: &AttributeValues,
    category: &CategorySpec,
) -> Result<String, PromptError> {
    category.validate()?;
    template.render(&category.display_name(), |attr| {
        let v = values
            .get(attr)
            .ok_or_else(|| PromptError::MissingAttributeValue {
                category: category.name.clone(),
                attribute: attr.to_string(),
            })?;
        if !template.joiner().is_empty() && v.value().contains(template.joiner()) {
            return Err(PromptError::ValueContainsJoiner {
                attribute: attr.to_string(),
                value: v.value().to_string(),
                joiner: template.joiner().to_string(),
            });
        }
        Ok(v.value())
    })
}

/// Concatenates one filled phrase per category with the template joiner.
pub fn compose_prompt(
    entries: &[PromptEntry],
    template: &PromptTemplate,
    variant: PromptVariant,
    image_ref: Option<&str>,
) -> Result<ComposedPrompt, PromptError> {
    if entries.is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    if variant.is_image_specific() != image_ref.is_some() {
        return Err(PromptError::ImageRefMismatch);
    }
    let mut seen = BTreeSet::new();
    for e in entries {
        if !seen.insert(e.category.name.as_str()) {
            return Err(PromptError::DuplicateCategory(e.category.name.clone()));
        }
    }

    let used: BTreeSet<&str> = template.attributes().collect();
    let mut phrases = Vec::with_capacity(entries.len());
    let mut provenance = Vec::with_capacity(entries.len());
    for e in entries {
        phrases.push(fill_template(template, &e.values, &e.category)?);
        let values: AttributeValues = e
            .values
            .iter()
            .filter(|(k, _)| used.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let queries = e
            .queries
            .iter()
            .filter(|(k, _)| values.contains_key(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        provenance.push(CategoryProvenance {
            category: e.category.name.clone(),
            values,
            queries,
        });
    }

    let (text, spans) = join_phrases(
        entries.iter().map(|e| e.category.name.as_str()),
        &phrases,
        template.joiner(),
    );
    let prompt = ComposedPrompt {
        text,
        spans,
        variant,
        provenance,
        image_ref: image_ref.map(str::to_string),
    };
    prompt.check_spans()?;
    Ok(prompt)
}

/// Joins phrases and assigns every whitespace token to the phrase in which
/// it starts. Tokens that start inside a joiner belong to the phrase before.
fn join_phrases<'a>(
    names: impl Iterator<Item = &'a str>,
    phrases: &[String],
    joiner: &str,
) -> (String, Vec<PhraseSpan>) {
    let text = phrases.join(joiner);
    let mut bounds = Vec::with_capacity(phrases.len());
    let mut offset = 0;
    for p in phrases {
        bounds.push(offset);
        offset += p.len() + joiner.len();
    }

    let token_starts: Vec<usize> = token_offsets(&text);
    let mut spans = Vec::with_capacity(phrases.len());
    for (i, name) in names.enumerate() {
        let lo = bounds[i];
        let hi = bounds.get(i + 1).copied().unwrap_or(usize::MAX);
        let start = token_starts.iter().position(|&s| s >= lo);
        let end = token_starts.iter().position(|&s| s >= hi);
        let start = start.unwrap_or(token_starts.len());
        let end = end.unwrap_or(token_starts.len());
        spans.push(PhraseSpan {
            category: name.to_string(),
            start,
            end,
        });
    }
    (text, spans)
}

fn token_offsets(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            out.push(i);
        }
    }
    out
}
