//! Data-root state shared by the CLI verbs and the HTTP service.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use medprompt::dataset::{discover_datasets, load_dataset, AnnotationRecord, LoadOptions, LoadedDataset, Split};
use medprompt::digest::stable_digest;
use medprompt::eval::{
    prompt_sweep, sweep_id, write_sweep, ApOptions, EvalReport, ImageDetections, PromptSource, SweepTable,
    SweepVariant,
};
use medprompt::experiment::{list_runs, RunArtifact, RunSummary};
use medprompt::grounding::{
    DecodeParams, Detection, EncoderDescriptor, EncoderKind, GroundingDetector, ScoreSummary, ToyEncoder,
};
use medprompt::mlm::{generate_mlm_prompts, MaskedLanguageModel, MaskedLmDescriptor, MlmOptions, RankShortfall};
use medprompt::prompt::{
    compose_prompt, manual_values, rearrange_for_grounding, AttributeKind, AttributeName, CategorySpec,
    ComposedPrompt, PhraseSpan, PromptConfig, PromptEntry, PromptTemplate, PromptVariant,
};
use medprompt::synthetic;
use medprompt::vqa::{
    default_questions, generate_hybrid_prompt, generate_vqa_prompt, AttributeQuestion, ImageRef, QuestionSet,
    VisualQuestionAnswering, VqaBackendDescriptor,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SETTINGS_FILE: &str = "service.json";
pub const SWEEP_DIR: &str = "sweeps";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    fn bad(e: impl std::fmt::Display) -> Self {
        Self::BadRequest(e.to_string())
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::Internal(e.to_string())
    }
}

fn d_output() -> PathBuf {
    PathBuf::from("runs")
}

/// Backends and defaults for a data root, read from `service.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSettings {
    pub encoder: EncoderDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlm: Option<MaskedLmDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa: Option<VqaBackendDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_config: Option<PathBuf>,
    #[serde(default)]
    pub mlm_options: MlmOptions,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub evaluation: ApOptions,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
}

impl ServiceSettings {
    /// Settings for a synthetic fixture written to `<root>/<dir>`.
    pub fn synthetic(dir: &str) -> Self {
        let p = |f: &str| Path::new(dir).join(f);
        Self {
            encoder: EncoderDescriptor::toy(p(synthetic::ENCODER_FILE)),
            mlm: Some(MaskedLmDescriptor::mock(p(synthetic::MLM_FILE))),
            vqa: Some(VqaBackendDescriptor::mock(p(synthetic::VQA_FILE))),
            prompt_config: Some(p(synthetic::PROMPTS_FILE)),
            mlm_options: MlmOptions::default(),
            decode: DecodeParams::default(),
            evaluation: ApOptions::default(),
            output_dir: d_output(),
        }
    }

    pub fn load(data_root: &Path) -> Result<Self, ServiceError> {
        let p = data_root.join(SETTINGS_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| ServiceError::Internal(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Internal(format!("{}: {e}", p.display())))
    }

    pub fn save(&self, data_root: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("settings serialize");
        std::fs::write(data_root.join(SETTINGS_FILE), text + "\n")
    }
}

/// A template given as a bare pattern or with its joiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateInput {
    Pattern(String),
    Full(PromptTemplate),
}

impl TemplateInput {
    fn resolve(&self) -> Result<PromptTemplate, ServiceError> {
        match self {
            TemplateInput::Pattern(p) => PromptTemplate::new(p).map_err(ServiceError::bad),
            TemplateInput::Full(t) => Ok(t.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategoryInput {
    Name(String),
    Spec(CategorySpec),
}

impl CategoryInput {
    pub fn name(&self) -> &str {
        match self {
            CategoryInput::Name(n) => n,
            CategoryInput::Spec(s) => &s.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeRequest {
    pub template: TemplateInput,
    pub categories: Vec<CategoryInput>,
    /// Attribute values per category name.
    #[serde(default)]
    pub values: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseView {
    pub category: String,
    pub phrase: String,
    /// Comma-separated descriptor form, when the name is found in the phrase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rearranged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeResponse {
    pub text: String,
    pub spans: Vec<PhraseSpan>,
    pub phrases: Vec<PhraseView>,
    pub prompt: ComposedPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoMode {
    Mlm,
    Vqa,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoRequest {
    pub mode: AutoMode,
    pub categories: Vec<CategoryInput>,
    /// Attribute slots for categories given by name only.
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoResponse {
    pub prompts: Vec<ComposedPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<RankShortfall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundApiRequest {
    pub image_id: String,
    pub prompt_text: String,
    pub spans: Vec<PhraseSpan>,
    #[serde(default)]
    pub decode: Option<DecodeParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundApiResponse {
    pub image_id: String,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<ScoreSummary>,
}

/// A sweep row given either as text plus spans or as a full prompt source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantInput {
    Source(SweepVariant),
    Text {
        label: String,
        text: String,
        spans: Vec<PhraseSpan>,
    },
}

impl VariantInput {
    fn resolve(&self) -> Result<SweepVariant, ServiceError> {
        match self {
            VariantInput::Source(v) => Ok(v.clone()),
            VariantInput::Text { label, text, spans } => Ok(SweepVariant {
                label: label.clone(),
                source: PromptSource::Static(
                    ComposedPrompt::from_text_and_spans(text, spans.clone()).map_err(ServiceError::bad)?,
                ),
            }),
        }
    }
}

fn d_split() -> Split {
    Split::Test
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub dataset: String,
    #[serde(default = "d_split")]
    pub split: Split,
    pub variants: Vec<VariantInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCreated {
    pub sweep_id: String,
    pub table: SweepTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRowView {
    pub label: String,
    pub prompt: String,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub detections: Vec<ImageDetections>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepView {
    pub sweep_id: String,
    pub config_digest: String,
    pub rows: Vec<SweepRowView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub title: String,
    pub categories: Vec<String>,
    pub splits: BTreeMap<Split, usize>,
    pub manifest: medprompt::dataset::DatasetManifest,
}

fn hex_id(s: &str) -> bool {
    !s.is_empty() && s.len() <= 64 && s.chars().all(|c| c.is_ascii_hexdigit())
}

/// Datasets, backends and detectors for one data root. Read-only after
/// opening, so requests never observe each other.
pub struct Workspace {
    pub data_root: PathBuf,
    pub settings: ServiceSettings,
    pub datasets: Vec<LoadedDataset>,
    detectors: BTreeMap<String, Arc<dyn GroundingDetector>>,
    mlm: Option<Arc<dyn MaskedLanguageModel>>,
    vqa: Option<Arc<dyn VisualQuestionAnswering>>,
    prompt_config: Option<PromptConfig>,
}

impl Workspace {
    pub fn open(data_root: &Path) -> Result<Self, ServiceError> {
        let settings = ServiceSettings::load(data_root)?;
        Self::with_settings(data_root, settings)
    }

    pub fn with_settings(data_root: &Path, settings: ServiceSettings) -> Result<Self, ServiceError> {
        let found = discover_datasets(data_root).map_err(ServiceError::internal)?;
        if found.is_empty() {
            return Err(ServiceError::Internal(format!(
                "no dataset manifests under {}",
                data_root.display()
            )));
        }
        let datasets = found
            .iter()
            .map(|(m, root)| load_dataset(m, root, LoadOptions::default()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(ServiceError::internal)?;
        let toy = match settings.encoder.kind {
            EncoderKind::Toy => Some(Arc::new(
                settings.encoder.load_toy(data_root).map_err(ServiceError::internal)?,
            )),
            EncoderKind::External => None,
        };
        let mut detectors = BTreeMap::new();
        for ds in &datasets {
            let det = settings
                .encoder
                .connect(data_root, &ds.root, toy.clone())
                .map_err(ServiceError::internal)?;
            detectors.insert(ds.manifest.name.clone(), Arc::<dyn GroundingDetector>::from(det));
        }
        let mlm = settings
            .mlm
            .as_ref()
            .map(|d| d.connect(data_root).map(Arc::<dyn MaskedLanguageModel>::from))
            .transpose()
            .map_err(ServiceError::internal)?;
        let vqa = settings
            .vqa
            .as_ref()
            .map(|d| d.connect(data_root).map(Arc::<dyn VisualQuestionAnswering>::from))
            .transpose()
            .map_err(ServiceError::internal)?;
        let prompt_config = settings
            .prompt_config
            .as_ref()
            .map(|p| PromptConfig::from_path(&data_root.join(p)))
            .transpose()
            .map_err(ServiceError::internal)?;
        Ok(Self {
            data_root: data_root.to_path_buf(),
            settings,
            datasets,
            detectors,
            mlm,
            vqa,
            prompt_config,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.data_root.join(&self.settings.output_dir)
    }

    pub fn toy_encoder(&self) -> Option<ToyEncoder> {
        match self.settings.encoder.kind {
            EncoderKind::Toy => self.settings.encoder.load_toy(&self.data_root).ok(),
            EncoderKind::External => None,
        }
    }

    pub fn dataset(&self, name: &str) -> Result<&LoadedDataset, ServiceError> {
        self.datasets
            .iter()
            .find(|d| d.manifest.name == name)
            .ok_or_else(|| ServiceError::NotFound(format!("no dataset named {name:?}")))
    }

    pub fn list_datasets(&self) -> Vec<DatasetSummary> {
        self.datasets
            .iter()
            .map(|d| DatasetSummary {
                name: d.manifest.name.clone(),
                title: d.manifest.title.clone(),
                categories: d.manifest.category_names(),
                splits: d.splits.iter().map(|(s, r)| (*s, r.len())).collect(),
                manifest: d.manifest.clone(),
            })
            .collect()
    }

    pub fn images(&self, dataset: &str, split: Option<Split>, limit: Option<usize>) -> Result<Vec<ImageRef>, ServiceError> {
        let ds = self.dataset(dataset)?;
        let refs: Vec<ImageRef> = match split {
            Some(s) => ds.split(s).iter().map(|r| r.image.clone()).collect(),
            None => ds.splits.values().flatten().map(|r| r.image.clone()).collect(),
        };
        Ok(refs.into_iter().take(limit.unwrap_or(usize::MAX)).collect())
    }

    pub fn find_image(&self, id: &str) -> Result<(&LoadedDataset, &AnnotationRecord), ServiceError> {
        self.datasets
            .iter()
            .find_map(|d| d.find_image(id).map(|(_, r)| (d, r)))
            .ok_or_else(|| ServiceError::NotFound(format!("no image with id {id:?}")))
    }

    pub fn image_path(&self, id: &str) -> Result<PathBuf, ServiceError> {
        let (ds, rec) = self.find_image(id)?;
        Ok(ds.root.join(&rec.image.uri))
    }

    fn attribute(&self, name: &str) -> Result<AttributeName, ServiceError> {
        if let Some(cfg) = &self.prompt_config {
            if cfg.attributes.contains_key(name) {
                return cfg.attribute(name).map_err(ServiceError::bad);
            }
        }
        AttributeName::canonical(name)
            .or_else(|_| AttributeName::custom(name, AttributeKind::Other))
            .map_err(ServiceError::bad)
    }

    fn configured_spec(&self, name: &str) -> Result<Option<CategorySpec>, ServiceError> {
        match &self.prompt_config {
            Some(cfg) if cfg.categories.iter().any(|c| c.name == name) => {
                let specs = cfg.category_specs().map_err(ServiceError::bad)?;
                Ok(specs.into_iter().find(|s| s.name == name))
            }
            _ => Ok(None),
        }
    }

    /// Prompt from explicit values; slots of name-only categories follow the
    /// attributes they were given values for.
    pub fn compose(&self, req: &ComposeRequest) -> Result<ComposeResponse, ServiceError> {
        let template = req.template.resolve()?;
        let mut entries = Vec::with_capacity(req.categories.len());
        for c in &req.categories {
            let raw = req.values.get(c.name()).cloned().unwrap_or_default();
            let spec = match c {
                CategoryInput::Spec(s) => s.clone(),
                CategoryInput::Name(n) => {
                    let slots = raw.keys().map(|a| self.attribute(a)).collect::<Result<Vec<_>, _>>()?;
                    CategorySpec::new(n).with_attributes(slots)
                }
            };
            let values = manual_values(raw.iter().map(|(k, v)| (k.as_str(), v.as_str()))).map_err(ServiceError::bad)?;
            entries.push(PromptEntry::new(spec, values));
        }
        let prompt = compose_prompt(&entries, &template, PromptVariant::Manual, None).map_err(ServiceError::bad)?;
        let phrases = prompt
            .spans
            .iter()
            .zip(&entries)
            .map(|(s, e)| {
                let phrase = prompt.span_tokens(s).join(" ");
                let phrase = phrase.trim_end_matches('.').to_string();
                PhraseView {
                    category: s.category.clone(),
                    rearranged: rearrange_for_grounding(&phrase, &e.category).ok(),
                    phrase,
                }
            })
            .collect();
        Ok(ComposeResponse {
            text: prompt.text.clone(),
            spans: prompt.spans.clone(),
            phrases,
            prompt,
        })
    }

    fn questions(&self, specs: &[CategorySpec]) -> Result<QuestionSet, ServiceError> {
        let mut q = default_questions(specs.iter().flat_map(|c| &c.attribute_slots));
        if let Some(cfg) = &self.prompt_config {
            for (name, pattern) in cfg.questions() {
                let attr = self.attribute(&name)?;
                q.insert(name, AttributeQuestion::new(attr, &pattern).map_err(ServiceError::bad)?);
            }
        }
        Ok(q)
    }

    /// Prompts from the configured backends.
    pub fn auto_prompts(&self, req: &AutoRequest) -> Result<AutoResponse, ServiceError> {
        let default_attrs = ["shape", "color", "location"].map(String::from).to_vec();
        let attrs = if req.attributes.is_empty() { &default_attrs } else { &req.attributes };
        let slots = attrs.iter().map(|a| self.attribute(a)).collect::<Result<Vec<_>, _>>()?;
        let mut specs = Vec::with_capacity(req.categories.len());
        for c in &req.categories {
            let spec = match c {
                CategoryInput::Spec(s) => s.clone(),
                CategoryInput::Name(n) => match self.configured_spec(n)? {
                    Some(s) if req.attributes.is_empty() => s,
                    Some(s) => s.with_attributes(slots.clone()),
                    None => CategorySpec::new(n).with_attributes(slots.clone()),
                },
            };
            specs.push(spec);
        }
        let template = match &req.template {
            Some(t) => t.resolve()?,
            None => {
                let mut all: Vec<AttributeName> = Vec::new();
                for a in specs.iter().flat_map(|s| &s.attribute_slots) {
                    if !all.contains(a) {
                        all.push(a.clone());
                    }
                }
                PromptTemplate::attribute_list(&all)
            }
        };
        let mlm = || {
            self.mlm
                .as_deref()
                .ok_or_else(|| ServiceError::BadRequest("no mlm backend configured".into()))
        };
        let vqa = || {
            self.vqa
                .as_deref()
                .ok_or_else(|| ServiceError::BadRequest("no vqa backend configured".into()))
        };
        let image = || -> Result<ImageRef, ServiceError> {
            let id = req
                .image_id
                .as_deref()
                .ok_or_else(|| ServiceError::BadRequest("image_id is required for image-specific prompts".into()))?;
            Ok(self.find_image(id)?.1.image.clone())
        };
        match req.mode {
            AutoMode::Mlm => {
                let set = generate_mlm_prompts(&specs, &template, mlm()?, req.k.unwrap_or(1), &self.settings.mlm_options)
                    .map_err(ServiceError::bad)?;
                Ok(AutoResponse {
                    prompts: set.prompts,
                    shortfall: set.shortfall,
                })
            }
            AutoMode::Vqa => {
                let img = image()?;
                let p = generate_vqa_prompt(&img, &specs, &self.questions(&specs)?, vqa()?, &template)
                    .map_err(ServiceError::bad)?;
                Ok(AutoResponse {
                    prompts: vec![p],
                    shortfall: None,
                })
            }
            AutoMode::Hybrid => {
                let img = image()?;
                let p = generate_hybrid_prompt(
                    &img,
                    &specs,
                    &self.questions(&specs)?,
                    vqa()?,
                    mlm()?,
                    &self.settings.mlm_options,
                    &template,
                )
                .map_err(ServiceError::bad)?;
                Ok(AutoResponse {
                    prompts: vec![p],
                    shortfall: None,
                })
            }
        }
    }

    pub fn ground(&self, req: &GroundApiRequest) -> Result<GroundApiResponse, ServiceError> {
        let (ds, rec) = self.find_image(&req.image_id)?;
        let prompt = ComposedPrompt::from_text_and_spans(&req.prompt_text, req.spans.clone()).map_err(ServiceError::bad)?;
        let decode = req.decode.unwrap_or(self.settings.decode);
        let detector = &self.detectors[&ds.manifest.name];
        let out = detector.ground(&rec.image, &prompt, &decode).map_err(|e| match e {
            e @ (medprompt::grounding::GroundingError::Backend(_)
            | medprompt::grounding::GroundingError::UndecodableImage { .. }) => ServiceError::internal(e),
            e => ServiceError::bad(e),
        })?;
        Ok(GroundApiResponse {
            image_id: req.image_id.clone(),
            detections: out.detections,
            summary: out.summary,
        })
    }

    /// Config digest a sweep's reports carry.
    pub fn sweep_digest(&self, dataset: &str, split: Split) -> String {
        stable_digest(&(
            dataset,
            split,
            &self.settings.encoder,
            &self.settings.decode,
            &self.settings.evaluation,
        ))
        .expect("sweep settings serialize")
    }

    /// Runs every variant on `split` and writes the sweep table plus one
    /// detections file per row under `<output_dir>/sweeps/`.
    pub fn sweep(&self, req: &SweepRequest) -> Result<SweepCreated, ServiceError> {
        let ds = self.dataset(&req.dataset)?;
        let records = ds.split(req.split);
        if records.is_empty() {
            return Err(ServiceError::BadRequest(format!("{} has no {} images", req.dataset, req.split)));
        }
        let variants = req.variants.iter().map(VariantInput::resolve).collect::<Result<Vec<_>, _>>()?;
        let digest = self.sweep_digest(&req.dataset, req.split);
        let rows = prompt_sweep(
            &variants,
            records,
            &ds.manifest.category_names(),
            self.detectors[&ds.manifest.name].as_ref(),
            &self.settings.decode,
            &self.settings.evaluation,
            &digest,
        )
        .map_err(ServiceError::bad)?;
        let id = sweep_id(&variants, &digest);
        let dir = self.output_dir().join(SWEEP_DIR);
        let path = write_sweep(&rows, &id, &digest, &dir).map_err(ServiceError::internal)?;
        let table = read_json(&path)?;
        Ok(SweepCreated { sweep_id: id, table })
    }

    pub fn load_sweep(&self, id: &str) -> Result<SweepView, ServiceError> {
        if !hex_id(id) {
            return Err(ServiceError::NotFound(format!("no sweep {id:?}")));
        }
        let dir = self.output_dir().join(SWEEP_DIR);
        let path = dir.join(format!("sweep-{id}.json"));
        if !path.is_file() {
            return Err(ServiceError::NotFound(format!("no sweep {id:?}")));
        }
        let table: SweepTable = read_json(&path)?;
        let rows = table
            .rows
            .into_iter()
            .map(|r| {
                let detections = match &r.detections_file {
                    Some(f) => read_json(&dir.join(f))?,
                    None => Vec::new(),
                };
                Ok(SweepRowView {
                    label: r.label,
                    prompt: r.prompt,
                    ap: r.ap,
                    ap50: r.ap50,
                    error: r.error,
                    detections,
                })
            })
            .collect::<Result<_, ServiceError>>()?;
        Ok(SweepView {
            sweep_id: table.sweep_id,
            config_digest: table.config_digest,
            rows,
        })
    }

    pub fn runs(&self) -> Result<Vec<RunSummary>, ServiceError> {
        list_runs(&self.output_dir()).map_err(ServiceError::internal)
    }

    pub fn run(&self, digest: &str) -> Result<RunArtifact, ServiceError> {
        let dir = self.output_dir().join(digest);
        if !hex_id(digest) || !dir.is_dir() {
            return Err(ServiceError::NotFound(format!("no run {digest:?}")));
        }
        RunArtifact::load(&dir).map_err(ServiceError::internal)
    }

    /// Evaluates stored detections against a split.
    pub fn evaluate(&self, dataset: &str, split: Split, run: &[ImageDetections]) -> Result<EvalReport, ServiceError> {
        let ds = self.dataset(dataset)?;
        let digest = self.sweep_digest(dataset, split);
        medprompt::eval::evaluate(
            run,
            ds.split(split),
            &ds.manifest.category_names(),
            &self.settings.evaluation,
            &digest,
        )
        .map_err(ServiceError::bad)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
}

/// Writes the synthetic fixture to `<data_root>/synthetic` and, when the
/// data root has no settings yet, settings pointing at it.
pub fn write_synthetic(data_root: &Path, spec: &synthetic::SyntheticSpec) -> std::io::Result<synthetic::SyntheticFixture> {
    let fx = synthetic::write_fixture(&data_root.join("synthetic"), spec)?;
    if !data_root.join(SETTINGS_FILE).exists() {
        ServiceSettings::synthetic("synthetic").save(data_root)?;
    }
    Ok(fx)
}
