//! Image-specific attribute values from a visual question answering backend.
//!
//! Each attribute slot gets one question per category ("What color is this
//! wound?") and the single answer fills the slot. Hybrid prompts take
//! intrinsic attributes from the VQA backend and the location attribute from
//! the masked-LM backend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{post_json, read_fixture, BackendError, HttpSettings};
use crate::mlm::{predict_attribute, BackendKind, MaskedLanguageModel, MlmOptions};
use crate::prompt::{
    compose_prompt, AttributeName, AttributeValue, AttributeValues, CategorySpec, ComposedPrompt,
    PromptEntry, PromptError, PromptTemplate, PromptVariant, ValueSource,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqaError {
    #[error("invalid image reference: {0}")]
    InvalidImage(String),
    #[error("invalid question {pattern:?}: {reason}")]
    InvalidQuestion { pattern: String, reason: String },
    #[error("no question for attribute {attribute:?} of {category:?}")]
    MissingQuestion { category: String, attribute: String },
    #[error("question {question:?}: {source}")]
    Backend {
        question: String,
        #[source]
        source: BackendError,
    },
    #[error("empty answer for attribute {attribute:?} of {category:?}")]
    EmptyAnswer { category: String, attribute: String },
    #[error("category {0:?} has more than one location attribute")]
    MultipleLocationSlots(String),
    #[error("hybrid generation failed for {} slot(s): {}", .0.len(), describe(.0))]
    Hybrid(Vec<SlotFailure>),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn describe(f: &[SlotFailure]) -> String {
    f.iter()
        .map(|s| format!("{}/{} via {:?}: {}", s.category, s.attribute, s.source, s.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// One failed slot of a hybrid prompt, tagged with the backend that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFailure {
    pub category: String,
    pub attribute: String,
    pub source: ValueSource,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    pub fn new(id: &str, uri: &str, width: u32, height: u32) -> Result<Self, VqaError> {
        let r = Self {
            id: id.to_string(),
            uri: uri.to_string(),
            width,
            height,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), VqaError> {
        if self.id.is_empty() {
            return Err(VqaError::InvalidImage("empty id".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(VqaError::InvalidImage(format!(
                "{} has zero extent {}x{}",
                self.id, self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeQuestion {
    pub attribute: AttributeName,
    pub pattern: String,
}

impl AttributeQuestion {
    pub fn new(attribute: AttributeName, pattern: &str) -> Result<Self, VqaError> {
        let q = Self {
            attribute,
            pattern: pattern.to_string(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), VqaError> {
        let bad = |reason: &str| VqaError::InvalidQuestion {
            pattern: self.pattern.clone(),
            reason: reason.to_string(),
        };
        if !self.pattern.trim_end().ends_with('?') {
            return Err(bad("must end with '?'"));
        }
        if self.pattern.matches("[OBJ]").count() != 1 {
            return Err(bad("must contain [OBJ] exactly once"));
        }
        Ok(())
    }
}

/// Shipped question phrasings for the canonical attributes.
pub fn default_question(attribute: &AttributeName) -> Option<AttributeQuestion> {
    let pattern = match attribute.name() {
        "color" => "What color is this [OBJ]?",
        "shape" => "What shape is this [OBJ]?",
        "texture" => "What is the texture of this [OBJ]?",
        "size" => "What size is this [OBJ]?",
        "location" => "Where is the [OBJ] located?",
        "modality" => "What kind of image shows this [OBJ]?",
        _ => return None,
    };
    AttributeQuestion::new(attribute.clone(), pattern).ok()
}

/// Questions keyed by attribute name.
pub type QuestionSet = BTreeMap<String, AttributeQuestion>;

/// Default questions for every attribute in `attributes` that has one.
pub fn default_questions<'a>(attributes: impl IntoIterator<Item = &'a AttributeName>) -> QuestionSet {
    attributes
        .into_iter()
        .filter_map(|a| default_question(a).map(|q| (a.name().to_string(), q)))
        .collect()
}

pub fn build_question(question: &AttributeQuestion, category: &CategorySpec) -> Result<String, VqaError> {
    question.validate()?;
    Ok(question.pattern.replace("[OBJ]", &category.display_name()))
}

/// Lowercases, trims and drops trailing punctuation.
pub fn normalize_answer(answer: &str) -> String {
    answer
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_lowercase()
}

pub trait VisualQuestionAnswering: Send + Sync {
    fn answer(&self, image: &ImageRef, question: &str) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockAnswer {
    pub image_id: String,
    pub question: String,
    pub answer: String,
}

/// Answers from a fixture keyed by `(image id, question)`. Unmatched lookups
/// are errors.
#[derive(Debug, Clone, Default)]
pub struct MockVqa {
    answers: BTreeMap<(String, String), String>,
}

impl MockVqa {
    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let rows: Vec<MockAnswer> = read_fixture(path)?;
        Ok(Self::from_rows(rows))
    }

    pub fn from_rows(rows: impl IntoIterator<Item = MockAnswer>) -> Self {
        Self {
            answers: rows
                .into_iter()
                .map(|r| ((r.image_id, r.question), r.answer))
                .collect(),
        }
    }

    pub fn insert(&mut self, image_id: &str, question: &str, answer: &str) {
        self.answers
            .insert((image_id.to_string(), question.to_string()), answer.to_string());
    }
}

impl VisualQuestionAnswering for MockVqa {
    fn answer(&self, image: &ImageRef, question: &str) -> Result<String, BackendError> {
        self.answers
            .get(&(image.id.clone(), question.to_string()))
            .cloned()
            .ok_or_else(|| BackendError::UnknownQuery(format!("{} / {question}", image.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub image_id: String,
    pub image_uri: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

#[derive(Debug, Clone)]
pub struct HttpVqa {
    pub endpoint: String,
    pub settings: HttpSettings,
}

impl VisualQuestionAnswering for HttpVqa {
    fn answer(&self, image: &ImageRef, question: &str) -> Result<String, BackendError> {
        let req = VqaRequest {
            image_id: image.id.clone(),
            image_uri: image.uri.clone(),
            question: question.to_string(),
        };
        let resp: VqaResponse = post_json(&self.endpoint, &req, &self.settings)?;
        Ok(resp.answer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaBackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers_path: Option<PathBuf>,
    #[serde(default)]
    pub http: HttpSettings,
}

impl VqaBackendDescriptor {
    pub fn mock(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            answers_path: Some(path.into()),
            http: HttpSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match (self.kind, &self.endpoint, &self.answers_path) {
            (BackendKind::Mock, None, Some(_)) | (BackendKind::External, Some(_), None) => Ok(()),
            _ => Err(BackendError::Descriptor(
                "mock needs only answers_path, external needs only endpoint".into(),
            )),
        }
    }

    pub fn connect(&self, base: &Path) -> Result<Box<dyn VisualQuestionAnswering>, BackendError> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => {
                let p = self.answers_path.as_ref().expect("validated");
                Ok(Box::new(MockVqa::from_path(&base.join(p))?))
            }
            BackendKind::External => Ok(Box::new(HttpVqa {
                endpoint: self.endpoint.clone().expect("validated"),
                settings: self.http,
            })),
        }
    }
}

/// Per-image answer memo so identical questions are asked once.
struct Asker<'a> {
    backend: &'a dyn VisualQuestionAnswering,
    image: &'a ImageRef,
    memo: BTreeMap<String, Result<String, BackendError>>,
}

impl<'a> Asker<'a> {
    fn ask(
        &mut self,
        category: &CategorySpec,
        attribute: &AttributeName,
        questions: &QuestionSet,
    ) -> Result<(String, AttributeValue), VqaError> {
        let q = questions
            .get(attribute.name())
            .ok_or_else(|| VqaError::MissingQuestion {
                category: category.name.clone(),
                attribute: attribute.name().to_string(),
            })?;
        let text = build_question(q, category)?;
        let raw = self
            .memo
            .entry(text.clone())
            .or_insert_with(|| self.backend.answer(self.image, &text))
            .clone()
            .map_err(|source| VqaError::Backend {
                question: text.clone(),
                source,
            })?;
        let value = AttributeValue::vqa(&normalize_answer(&raw)).map_err(|_| VqaError::EmptyAnswer {
            category: category.name.clone(),
            attribute: attribute.name().to_string(),
        })?;
        Ok((text, value))
    }
}

/// One prompt for `image` whose attribute values are the backend's answers.
pub fn generate_vqa_prompt(
    image: &ImageRef,
    categories: &[CategorySpec],
    questions: &QuestionSet,
    backend: &dyn VisualQuestionAnswering,
    template: &PromptTemplate,
) -> Result<ComposedPrompt, VqaError> {
    image.validate()?;
    let mut asker = Asker {
        backend,
        image,
        memo: BTreeMap::new(),
    };
    let mut entries = Vec::with_capacity(categories.len());
    for c in categories {
        c.validate()?;
        let mut entry = PromptEntry::new(c.clone(), AttributeValues::new());
        for slot in &c.attribute_slots {
            let (question, value) = asker.ask(c, slot, questions)?;
            entry.values.insert(slot.name().to_string(), value);
            entry.queries.insert(slot.name().to_string(), question);
        }
        entries.push(entry);
    }
    Ok(compose_prompt(
        &entries,
        template,
        PromptVariant::Vqa,
        Some(&image.id),
    )?)
}

/// Intrinsic and other attributes from the VQA backend, the location from
/// the rank-1 masked-LM prediction. All slot failures are collected before
/// reporting.
pub fn generate_hybrid_prompt(
    image: &ImageRef,
    categories: &[CategorySpec],
    questions: &QuestionSet,
    vqa: &dyn VisualQuestionAnswering,
    mlm: &dyn MaskedLanguageModel,
    mlm_options: &MlmOptions,
    template: &PromptTemplate,
) -> Result<ComposedPrompt, VqaError> {
    image.validate()?;
    let mut asker = Asker {
        backend: vqa,
        image,
        memo: BTreeMap::new(),
    };
    let mut failures = Vec::new();
    let mut entries = Vec::with_capacity(categories.len());
    for c in categories {
        c.validate()?;
        if c.attribute_slots.iter().filter(|a| a.is_location()).count() > 1 {
            return Err(VqaError::MultipleLocationSlots(c.name.clone()));
        }
        let mut entry = PromptEntry::new(c.clone(), AttributeValues::new());
        for slot in &c.attribute_slots {
            let name = slot.name().to_string();
            if slot.is_location() {
                let outcome = mlm_options
                    .cloze
                    .build(slot, &c.name)
                    .and_then(|q| {
                        let p = predict_attribute(mlm, &q, 1, &mlm_options.stop, mlm_options.pool)?;
                        Ok((q.text, p.values.into_iter().next()))
                    });
                match outcome {
                    Ok((cloze, Some(v))) => {
                        entry.values.insert(name.clone(), v);
                        entry.queries.insert(name, cloze);
                    }
                    Ok((_, None)) => failures.push(SlotFailure {
                        category: c.name.clone(),
                        attribute: name,
                        source: ValueSource::Mlm,
                        message: "no candidate survived the stop-list".into(),
                    }),
                    Err(e) => failures.push(SlotFailure {
                        category: c.name.clone(),
                        attribute: name,
                        source: ValueSource::Mlm,
                        message: e.to_string(),
                    }),
                }
            } else {
                match asker.ask(c, slot, questions) {
                    Ok((question, v)) => {
                        entry.values.insert(name.clone(), v);
                        entry.queries.insert(name, question);
                    }
                    Err(e) => failures.push(SlotFailure {
                        category: c.name.clone(),
                        attribute: name,
                        source: ValueSource::Vqa,
                        message: e.to_string(),
                    }),
                }
            }
        }
        entries.push(entry);
    }
    if !failures.is_empty() {
        return Err(VqaError::Hybrid(failures));
    }
    Ok(compose_prompt(
        &entries,
        template,
        PromptVariant::Hybrid,
        Some(&image.id),
    )?)
}

/// Runs `generate` for every image concurrently; results keep input order.
pub fn generate_batch<F>(images: &[ImageRef], generate: F) -> Vec<Result<ComposedPrompt, VqaError>>
where
    F: Fn(&ImageRef) -> Result<ComposedPrompt, VqaError> + Sync + Send,
{
    images.par_iter().map(generate).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::{MockMaskedLm, TokenProbability};

    fn attr(n: &str) -> AttributeName {
        AttributeName::canonical(n).unwrap()
    }

    fn img(id: &str) -> ImageRef {
        ImageRef::new(id, &format!("{id}.png"), 64, 64).unwrap()
    }

    fn polyp() -> CategorySpec {
        CategorySpec::new("polyp").with_attributes(vec![attr("color"), attr("shape")])
    }

    fn questions() -> QuestionSet {
        default_questions(&[attr("color"), attr("shape"), attr("texture")])
    }

    fn mlm_fixture() -> MockMaskedLm {
        MockMaskedLm::from_weights(
            [(
                "The location of an polyp is [MASK]".to_string(),
                vec![
                    TokenProbability { token: "rectum".into(), probability: 0.6 },
                    TokenProbability { token: "colon".into(), probability: 0.3 },
                ],
            )]
            .into_iter()
            .collect(),
        )
        .unwrap()
    }

    #[test]
    fn question_building() {
        let q = AttributeQuestion::new(attr("color"), "What color is this [OBJ]?").unwrap();
        assert_eq!(build_question(&q, &CategorySpec::new("wound")).unwrap(), "What color is this wound?");
        let q = AttributeQuestion::new(attr("shape"), "What shape is this [OBJ]?").unwrap();
        assert_eq!(build_question(&q, &CategorySpec::new("polyp")).unwrap(), "What shape is this polyp?");
        let q = AttributeQuestion::new(attr("location"), "Where is the [OBJ] located?").unwrap();
        assert_eq!(
            build_question(&q, &CategorySpec::new("thyroid nodule")).unwrap(),
            "Where is the thyroid nodule located?"
        );
        assert!(AttributeQuestion::new(attr("color"), "What color is this [OBJ]").is_err());
        assert!(AttributeQuestion::new(attr("color"), "What color?").is_err());
    }

    #[test]
    fn image_ref_rules() {
        assert!(ImageRef::new("", "a.png", 1, 1).is_err());
        assert!(ImageRef::new("a", "a.png", 0, 1).is_err());
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("  Pink.  "), "pink");
        assert_eq!(normalize_answer("Purple or Blue!"), "purple or blue");
        assert_eq!(normalize_answer(" ?"), "");
    }

    #[test]
    fn vqa_prompt_from_answers() {
        let mut m = MockVqa::default();
        m.insert("img1", "What color is this polyp?", "pink");
        m.insert("img1", "What shape is this polyp?", "Oval.");
        let t = PromptTemplate::new("[OBJ] is an [ATTR:shape] bump, often in [ATTR:color] color").unwrap();
        let p = generate_vqa_prompt(&img("img1"), &[polyp()], &questions(), &m, &t).unwrap();
        // fill_template by hand on the normalized answers
        assert_eq!(p.text, "polyp is an oval bump, often in pink color");
        assert_eq!(p.image_ref.as_deref(), Some("img1"));
        assert_eq!(p.variant, PromptVariant::Vqa);
        assert_eq!(p.provenance[0].queries["color"], "What color is this polyp?");
        assert_eq!(p.provenance[0].values["shape"].source(), ValueSource::Vqa);
    }

    #[test]
    fn vqa_prompt_without_slots_is_class_name() {
        let m = MockVqa::default();
        let p = generate_vqa_prompt(
            &img("img1"),
            &[CategorySpec::new("polyp")],
            &questions(),
            &m,
            &PromptTemplate::class_name(),
        )
        .unwrap();
        assert_eq!(p.text, "polyp");
    }

    #[test]
    fn prompts_differ_per_image() {
        let mut m = MockVqa::default();
        for (id, color) in [("a", "pink"), ("b", "red")] {
            m.insert(id, "What color is this polyp?", color);
            m.insert(id, "What shape is this polyp?", "oval");
        }
        let t = PromptTemplate::attribute_list(&polyp().attribute_slots);
        let pa = generate_vqa_prompt(&img("a"), &[polyp()], &questions(), &m, &t).unwrap();
        let pb = generate_vqa_prompt(&img("b"), &[polyp()], &questions(), &m, &t).unwrap();
        assert_ne!(pa.text, pb.text);
    }

    #[test]
    fn vqa_errors() {
        let mut m = MockVqa::default();
        m.insert("img1", "What color is this polyp?", " . ");
        m.insert("img1", "What shape is this polyp?", "oval");
        let t = PromptTemplate::attribute_list(&polyp().attribute_slots);
        assert_eq!(
            generate_vqa_prompt(&img("img1"), &[polyp()], &questions(), &m, &t),
            Err(VqaError::EmptyAnswer {
                category: "polyp".into(),
                attribute: "color".into()
            })
        );
        assert!(matches!(
            generate_vqa_prompt(&img("img2"), &[polyp()], &questions(), &m, &t),
            Err(VqaError::Backend { .. })
        ));
        assert!(matches!(
            generate_vqa_prompt(&img("img1"), &[polyp()], &QuestionSet::new(), &m, &t),
            Err(VqaError::MissingQuestion { .. })
        ));
    }

    #[test]
    fn hybrid_sources() {
        let mut v = MockVqa::default();
        v.insert("img1", "What color is this polyp?", "pink");
        v.insert("img1", "What shape is this polyp?", "oval");
        let cat = CategorySpec::new("polyp").with_attributes(vec![
            attr("color"),
            attr("shape"),
            attr("location"),
        ]);
        let t = PromptTemplate::attribute_list(&cat.attribute_slots);
        let p = generate_hybrid_prompt(
            &img("img1"),
            &[cat],
            &questions(),
            &v,
            &mlm_fixture(),
            &MlmOptions::default(),
            &t,
        )
        .unwrap();
        assert_eq!(p.text, "pink, oval polyp in rectum");
        assert_eq!(p.variant, PromptVariant::Hybrid);
        let sources: Vec<_> = ["color", "shape", "location"]
            .iter()
            .map(|a| p.provenance[0].values[*a].source())
            .collect();
        assert_eq!(sources, vec![ValueSource::Vqa, ValueSource::Vqa, ValueSource::Mlm]);
    }

    #[test]
    fn hybrid_degenerates_to_mlm_and_vqa() {
        let mlm = mlm_fixture();
        let mut v = MockVqa::default();
        v.insert("img1", "What color is this polyp?", "pink");
        v.insert("img1", "What shape is this polyp?", "oval");

        let loc_only = CategorySpec::new("polyp").with_attributes(vec![attr("location")]);
        let t = PromptTemplate::attribute_list(&loc_only.attribute_slots);
        let h = generate_hybrid_prompt(&img("img1"), &[loc_only.clone()], &questions(), &v, &mlm, &MlmOptions::default(), &t)
            .unwrap();
        let m = crate::mlm::generate_mlm_prompts(&[loc_only], &t, &mlm, 1, &MlmOptions::default()).unwrap();
        assert_eq!(h.text, m.prompts[0].text);

        let t = PromptTemplate::attribute_list(&polyp().attribute_slots);
        let h = generate_hybrid_prompt(&img("img1"), &[polyp()], &questions(), &v, &mlm, &MlmOptions::default(), &t)
            .unwrap();
        let q = generate_vqa_prompt(&img("img1"), &[polyp()], &questions(), &v, &t).unwrap();
        assert_eq!(h.text, q.text);
    }

    #[test]
    fn hybrid_reports_every_failed_source() {
        let v = MockVqa::default();
        let cat = CategorySpec::new("wound").with_attributes(vec![attr("color"), attr("location")]);
        let t = PromptTemplate::attribute_list(&cat.attribute_slots);
        let err = generate_hybrid_prompt(&img("x"), &[cat], &questions(), &v, &mlm_fixture(), &MlmOptions::default(), &t)
            .unwrap_err();
        match err {
            VqaError::Hybrid(f) => {
                assert_eq!(f.len(), 2);
                assert_eq!(f[0].source, ValueSource::Vqa);
                assert_eq!(f[1].source, ValueSource::Mlm);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batch_preserves_order() {
        let mut m = MockVqa::default();
        let ids: Vec<String> = (0..16).map(|i| format!("img{i}")).collect();
        for (i, id) in ids.iter().enumerate() {
            m.insert(id, "What color is this polyp?", &format!("c{i}"));
        }
        let cat = CategorySpec::new("polyp").with_attributes(vec![attr("color")]);
        let t = PromptTemplate::attribute_list(&cat.attribute_slots);
        let images: Vec<_> = ids.iter().map(|id| img(id)).collect();
        let out = generate_batch(&images, |im| generate_vqa_prompt(im, &[cat.clone()], &questions(), &m, &t));
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().text, format!("c{i} polyp"));
        }
    }

    #[test]
    fn external_wire_contract() {
        use crate::http::test_server;
        let (url, rx) = test_server::serve(1, |_| r#"{"answer":"Pink."}"#.to_string());
        let backend = HttpVqa { endpoint: url, settings: HttpSettings::default() };
        let cat = CategorySpec::new("wound").with_attributes(vec![attr("color")]);
        let t = PromptTemplate::attribute_list(&cat.attribute_slots);
        let p = generate_vqa_prompt(&img("w1"), &[cat], &questions(), &backend, &t).unwrap();
        assert_eq!(p.text, "pink wound");
        let sent: VqaRequest = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent.question, "What color is this wound?");
        assert_eq!(sent.image_id, "w1");
    }
}
