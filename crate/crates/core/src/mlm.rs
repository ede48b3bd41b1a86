//! Attribute values from a masked language model.
//!
//! For every category and attribute a cloze sentence such as
//! `The color of an polyp is [MASK]` is sent to the backend; the top-k
//! filled tokens become candidate values and prompt `j` is assembled from
//! the rank-`j` value of every attribute.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{post_json, read_fixture, BackendError, HttpSettings};
use crate::prompt::{
    compose_prompt, AttributeName, AttributeValue, AttributeValues, CategorySpec, ComposedPrompt,
    PromptEntry, PromptError, PromptTemplate, PromptVariant,
};

pub const MASK_TOKEN: &str = "[MASK]";

/// The cloze form used by default. The article is kept as "an" for every
/// object.
pub const DEFAULT_CLOZE_PATTERN: &str = "The [ATTR] of an [OBJ] is [MASK]";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlmError {
    #[error("query {query:?}: {source}")]
    Backend {
        query: String,
        #[source]
        source: BackendError,
    },
    #[error("backend returned an empty distribution for {0:?}")]
    EmptyDistribution(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid cloze: {0}")]
    InvalidCloze(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("category {0:?} has no attribute slots to query")]
    NoAttributeSlots(String),
    #[error("no usable candidates for attribute {attribute:?} of {category:?}")]
    NoCandidates { category: String, attribute: String },
    #[error("cartesian combination would produce {0} prompts")]
    TooManyCombinations(u128),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Cloze sentence pattern with `[ATTR]`, `[OBJ]` and one `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClozeTemplate(String);

impl Default for ClozeTemplate {
    fn default() -> Self {
        Self(DEFAULT_CLOZE_PATTERN.to_string())
    }
}

impl ClozeTemplate {
    pub fn new(pattern: &str) -> Result<Self, MlmError> {
        let t = Self(pattern.to_string());
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), MlmError> {
        let p = &self.0;
        if p.matches(MASK_TOKEN).count() != 1 {
            return Err(MlmError::InvalidCloze(format!("{p:?} needs exactly one {MASK_TOKEN}")));
        }
        if p.matches("[OBJ]").count() != 1 {
            return Err(MlmError::InvalidCloze(format!("{p:?} needs exactly one [OBJ]")));
        }
        Ok(())
    }

    pub fn pattern(&self) -> &str {
        &self.0
    }

    pub fn build(&self, attribute: &AttributeName, object_name: &str) -> Result<ClozeQuery, MlmError> {
        self.check()?;
        if object_name.trim().is_empty() {
            return Err(MlmError::InvalidCloze("empty object name".into()));
        }
        if object_name.contains(MASK_TOKEN) {
            return Err(MlmError::InvalidCloze("object name contains the mask marker".into()));
        }
        let text = self
            .0
            .replace("[ATTR]", attribute.name())
            .replace("[OBJ]", object_name);
        Ok(ClozeQuery {
            attribute: attribute.clone(),
            object_name: object_name.to_string(),
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeQuery {
    pub attribute: AttributeName,
    pub object_name: String,
    pub text: String,
}

/// `The <attribute> of an <object> is [MASK]`.
pub fn build_cloze(attribute: &AttributeName, object_name: &str) -> Result<ClozeQuery, MlmError> {
    ClozeTemplate::default().build(attribute, object_name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProbability {
    pub token: String,
    pub probability: f64,
}

/// Candidate tokens for the mask ordered by descending probability, ties
/// broken by token text.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct VocabDistribution {
    entries: Vec<TokenProbability>,
}

impl<'de> Deserialize<'de> for VocabDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<TokenProbability>::deserialize(d)?;
        VocabDistribution::new(entries).map_err(serde::de::Error::custom)
    }
}

fn canonical_order(entries: &mut [TokenProbability]) {
    entries.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.token.cmp(&b.token))
    });
}

impl VocabDistribution {
    pub fn new(mut entries: Vec<TokenProbability>) -> Result<Self, MlmError> {
        let mut seen = BTreeSet::new();
        let mut total = 0.0;
        for e in &entries {
            if !(e.probability > 0.0 && e.probability <= 1.0) {
                return Err(MlmError::InvalidDistribution(format!(
                    "probability {} for {:?} outside (0, 1]",
                    e.probability, e.token
                )));
            }
            if !seen.insert(e.token.as_str()) {
                return Err(MlmError::InvalidDistribution(format!(
                    "duplicate token {:?}",
                    e.token
                )));
            }
            total += e.probability;
        }
        if total > 1.0 + 1e-6 {
            return Err(MlmError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        canonical_order(&mut entries);
        Ok(Self { entries })
    }

    /// Normalizes positive weights to probabilities.
    pub fn from_weights(weights: Vec<TokenProbability>) -> Result<Self, MlmError> {
        if weights.iter().any(|e| !(e.probability > 0.0) || !e.probability.is_finite()) {
            return Err(MlmError::InvalidDistribution("weights must be positive".into()));
        }
        let total: f64 = weights.iter().map(|e| e.probability).sum();
        Self::new(
            weights
                .into_iter()
                .map(|e| TokenProbability {
                    probability: (e.probability / total).min(1.0),
                    token: e.token,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[TokenProbability] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            entries: self.entries.iter().take(n).cloned().collect(),
        }
    }
}

/// Anything that can fill a single mask.
pub trait MaskedLanguageModel: Send + Sync {
    fn fill_mask(&self, text: &str, top_n: usize) -> Result<VocabDistribution, BackendError>;
}

/// Looks cloze sentences up in a fixture. The fixture is a JSON object
/// mapping cloze text to `[{"token": .., "probability": ..}]`; weights are
/// normalized when loaded.
#[derive(Debug, Clone, Default)]
pub struct MockMaskedLm {
    table: BTreeMap<String, VocabDistribution>,
}

impl MockMaskedLm {
    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let raw: BTreeMap<String, Vec<TokenProbability>> = read_fixture(path)?;
        Self::from_weights(raw).map_err(|e| BackendError::Fixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn from_weights(raw: BTreeMap<String, Vec<TokenProbability>>) -> Result<Self, MlmError> {
        let table = raw
            .into_iter()
            .map(|(k, v)| {
                let dist = if v.is_empty() {
                    VocabDistribution { entries: Vec::new() }
                } else {
                    VocabDistribution::from_weights(v)?
                };
                Ok((k, dist))
            })
            .collect::<Result<_, MlmError>>()?;
        Ok(Self { table })
    }

    pub fn insert(&mut self, cloze: &str, dist: VocabDistribution) {
        self.table.insert(cloze.to_string(), dist);
    }
}

impl MaskedLanguageModel for MockMaskedLm {
    fn fill_mask(&self, text: &str, top_n: usize) -> Result<VocabDistribution, BackendError> {
        self.table
            .get(text)
            .map(|d| d.truncated(top_n))
            .ok_or_else(|| BackendError::UnknownQuery(text.to_string()))
    }
}

/// Request body of the fill-mask wire contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskRequest {
    pub text: String,
    pub top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskResponse {
    pub predictions: Vec<TokenProbability>,
}

/// Remote fill-mask service speaking [`FillMaskRequest`]/[`FillMaskResponse`].
#[derive(Debug, Clone)]
pub struct HttpMaskedLm {
    pub endpoint: String,
    pub settings: HttpSettings,
}

impl MaskedLanguageModel for HttpMaskedLm {
    fn fill_mask(&self, text: &str, top_n: usize) -> Result<VocabDistribution, BackendError> {
        let req = FillMaskRequest {
            text: text.to_string(),
            top_n,
        };
        let resp: FillMaskResponse = post_json(&self.endpoint, &req, &self.settings)?;
        VocabDistribution::new(resp.predictions)
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedLmDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_path: Option<PathBuf>,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub http: HttpSettings,
}

impl MaskedLmDescriptor {
    pub fn mock(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            vocabulary_path: Some(path.into()),
            name: "mock".into(),
            http: HttpSettings::default(),
        }
    }

    pub fn external(endpoint: &str) -> Self {
        Self {
            kind: BackendKind::External,
            endpoint: Some(endpoint.to_string()),
            vocabulary_path: None,
            name: "external".into(),
            http: HttpSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match (self.kind, &self.endpoint, &self.vocabulary_path) {
            (BackendKind::Mock, None, Some(_)) | (BackendKind::External, Some(_), None) => Ok(()),
            _ => Err(BackendError::Descriptor(
                "mock needs only vocabulary_path, external needs only endpoint".into(),
            )),
        }
    }

    /// Resolves relative fixture paths against `base`.
    pub fn connect(&self, base: &Path) -> Result<Box<dyn MaskedLanguageModel>, BackendError> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => {
                let p = self.vocabulary_path.as_ref().expect("validated");
                Ok(Box::new(MockMaskedLm::from_path(&base.join(p))?))
            }
            BackendKind::External => Ok(Box::new(HttpMaskedLm {
                endpoint: self.endpoint.clone().expect("validated"),
                settings: self.http,
            })),
        }
    }
}

/// Tokens never accepted as attribute values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopList {
    pub tokens: BTreeSet<String>,
    /// Drop word-piece continuations (`##ing`).
    pub drop_subwords: bool,
    /// Drop tokens made only of punctuation.
    pub drop_punctuation: bool,
}

impl Default for StopList {
    fn default() -> Self {
        Self {
            tokens: BTreeSet::new(),
            drop_subwords: true,
            drop_punctuation: true,
        }
    }
}

impl StopList {
    pub fn with_tokens<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    /// Whether `token` is rejected when predicting for `object_name`. The
    /// object name and each of its words are always rejected.
    pub fn rejects(&self, token: &str, object_name: &str) -> bool {
        let t = token.trim();
        let lower = t.to_lowercase();
        if t.is_empty() || self.tokens.contains(t) || self.tokens.contains(&lower) {
            return true;
        }
        if self.drop_subwords && t.starts_with("##") {
            return true;
        }
        if self.drop_punctuation && t.chars().all(|c| c.is_ascii_punctuation()) {
            return true;
        }
        let obj = object_name.to_lowercase();
        lower == obj || obj.split_whitespace().any(|w| w == lower)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributePrediction {
    pub values: Vec<AttributeValue>,
    pub shortfall: Option<Shortfall>,
}

/// Top-k tokens for the query that survive the stop-list, ranked 1..k.
pub fn predict_attribute(
    backend: &dyn MaskedLanguageModel,
    query: &ClozeQuery,
    k: usize,
    stop: &StopList,
    pool: usize,
) -> Result<AttributePrediction, MlmError> {
    if k == 0 {
        return Err(MlmError::InvalidK);
    }
    let dist = backend
        .fill_mask(&query.text, pool.max(k))
        .map_err(|source| MlmError::Backend {
            query: query.text.clone(),
            source,
        })?;
    if dist.is_empty() {
        return Err(MlmError::EmptyDistribution(query.text.clone()));
    }
    let values = dist
        .entries()
        .iter()
        .filter(|e| !stop.rejects(&e.token, &query.object_name))
        .take(k)
        .enumerate()
        .map(|(i, e)| AttributeValue::mlm(e.token.trim(), i as u32 + 1, e.probability))
        .collect::<Result<Vec<_>, _>>()?;
    let shortfall = (values.len() < k).then_some(Shortfall {
        requested: k,
        available: values.len(),
    });
    Ok(AttributePrediction { values, shortfall })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    /// Prompt `j` takes the rank-`j` value of every attribute.
    #[default]
    RankAligned,
    /// Every combination of ranks across all (category, attribute) pairs.
    Cartesian,
}

/// Upper bound on prompts produced by [`Combination::Cartesian`].
pub const MAX_CARTESIAN_PROMPTS: u128 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmOptions {
    pub cloze: ClozeTemplate,
    pub stop: StopList,
    pub combination: Combination,
    /// Candidates requested from the backend before stop-list filtering.
    pub pool: usize,
}

impl Default for MlmOptions {
    fn default() -> Self {
        Self {
            cloze: ClozeTemplate::default(),
            stop: StopList::default(),
            combination: Combination::RankAligned,
            pool: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankShortfall {
    pub requested: usize,
    pub available: usize,
    /// `(category, attribute)` pairs that ran out of candidates first.
    pub limiting: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmPromptSet {
    pub prompts: Vec<ComposedPrompt>,
    pub shortfall: Option<RankShortfall>,
}

struct PairPrediction {
    category: usize,
    attribute: String,
    cloze: String,
    values: Vec<AttributeValue>,
}

/// Top-k prompts for `categories`, one query per (category, attribute slot).
pub fn generate_mlm_prompts(
    categories: &[CategorySpec],
    template: &PromptTemplate,
    backend: &dyn MaskedLanguageModel,
    k: usize,
    options: &MlmOptions,
) -> Result<MlmPromptSet, MlmError> {
    if k == 0 {
        return Err(MlmError::InvalidK);
    }
    if categories.is_empty() {
        return Err(PromptError::EmptyPrompt.into());
    }
    let mut pairs = Vec::new();
    for (ci, c) in categories.iter().enumerate() {
        c.validate()?;
        if c.attribute_slots.is_empty() {
            return Err(MlmError::NoAttributeSlots(c.name.clone()));
        }
        for a in &c.attribute_slots {
            pairs.push((ci, a));
        }
    }

    let predictions: Vec<PairPrediction> = pairs
        .par_iter()
        .map(|&(ci, attr)| {
            let query = options.cloze.build(attr, &categories[ci].name)?;
            let pred = predict_attribute(backend, &query, k, &options.stop, options.pool)?;
            Ok(PairPrediction {
                category: ci,
                attribute: attr.name().to_string(),
                cloze: query.text,
                values: pred.values,
            })
        })
        .collect::<Result<_, MlmError>>()?;

    let available = predictions.iter().map(|p| p.values.len()).min().unwrap_or(0);
    if available == 0 {
        let p = predictions
            .iter()
            .find(|p| p.values.is_empty())
            .expect("min is zero");
        return Err(MlmError::NoCandidates {
            category: categories[p.category].name.clone(),
            attribute: p.attribute.clone(),
        });
    }
    let shortfall = (available < k).then(|| RankShortfall {
        requested: k,
        available,
        limiting: predictions
            .iter()
            .filter(|p| p.values.len() == available)
            .map(|p| (categories[p.category].name.clone(), p.attribute.clone()))
            .collect(),
    });

    let build = |ranks: &[usize], prompt_rank: usize| -> Result<ComposedPrompt, MlmError> {
        let mut entries: Vec<PromptEntry> = categories
            .iter()
            .map(|c| PromptEntry::new(c.clone(), AttributeValues::new()))
            .collect();
        for (p, &r) in predictions.iter().zip(ranks) {
            let e = &mut entries[p.category];
            e.values.insert(p.attribute.clone(), p.values[r].clone());
            e.queries.insert(p.attribute.clone(), p.cloze.clone());
        }
        Ok(compose_prompt(
            &entries,
            template,
            PromptVariant::Mlm { rank: prompt_rank },
            None,
        )?)
    };

    let prompts = match options.combination {
        Combination::RankAligned => (0..available.min(k))
            .map(|j| build(&vec![j; predictions.len()], j + 1))
            .collect::<Result<Vec<_>, _>>()?,
        Combination::Cartesian => {
            let sizes: Vec<usize> = predictions.iter().map(|p| p.values.len().min(k)).collect();
            let total = sizes
                .iter()
                .try_fold(1u128, |acc, &s| acc.checked_mul(s as u128))
                .unwrap_or(u128::MAX);
            if total > MAX_CARTESIAN_PROMPTS {
                return Err(MlmError::TooManyCombinations(total));
            }
            let mut out = Vec::with_capacity(total as usize);
            let mut ranks = vec![0usize; sizes.len()];
            for n in 0..total as usize {
                out.push(build(&ranks, n + 1)?);
                for i in (0..ranks.len()).rev() {
                    ranks[i] += 1;
                    if ranks[i] < sizes[i] {
                        break;
                    }
                    ranks[i] = 0;
                }
            }
            out
        }
    };
    Ok(MlmPromptSet { prompts, shortfall })
}
