//! Turning an experiment's prompt settings into concrete prompts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError, PromptMode, RunLog};
use crate::dataset::DatasetManifest;
use crate::eval::PromptSource;
use crate::mlm::{generate_mlm_prompts, MaskedLanguageModel};
use crate::prompt::{
    compose_prompt, AttributeName, AttributeValues, CategorySpec, PromptConfig, PromptEntry,
    PromptTemplate, PromptVariant,
};
use crate::vqa::{
    default_questions, generate_batch, generate_hybrid_prompt, generate_vqa_prompt, AttributeQuestion,
    ImageRef, QuestionSet, VisualQuestionAnswering,
};

/// A prompt set with the name it is reported under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrompts {
    pub label: String,
    pub source: PromptSource,
}

/// Everything prompt generation needs besides the backends.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInputs {
    pub mode: PromptMode,
    pub categories: Vec<CategorySpec>,
    pub template: PromptTemplate,
    /// Manual values per category name.
    pub manual: BTreeMap<String, AttributeValues>,
    pub questions: QuestionSet,
}

fn resolve_attribute(cfg: Option<&PromptConfig>, name: &str) -> Result<AttributeName, ExperimentError> {
    Ok(match cfg {
        Some(c) => c.attribute(name)?,
        None => AttributeName::canonical(name)?,
    })
}

impl PromptInputs {
    /// Categories come from the manifest, overridden by same-named entries of
    /// the prompt config, with slots replaced by `config.attributes` if set.
    pub fn resolve(
        config: &ExperimentConfig,
        manifest: &DatasetManifest,
        prompt_config: Option<&PromptConfig>,
    ) -> Result<Self, ExperimentError> {
        let from_cfg = match prompt_config {
            Some(p) => p.category_specs()?,
            None => Vec::new(),
        };
        let override_slots = config
            .attributes
            .iter()
            .map(|a| resolve_attribute(prompt_config, a))
            .collect::<Result<Vec<_>, _>>()?;
        let mut categories = Vec::with_capacity(manifest.categories.len());
        for m in &manifest.categories {
            let mut spec = from_cfg
                .iter()
                .find(|c| c.name == m.name)
                .cloned()
                .unwrap_or_else(|| m.clone());
            if !override_slots.is_empty() {
                spec.attribute_slots = override_slots.clone();
            }
            categories.push(spec);
        }

        let template = match (config.prompt_mode, &config.template) {
            (PromptMode::DefaultClass, _) => PromptTemplate::class_name(),
            (_, Some(name)) => prompt_config
                .ok_or_else(|| ExperimentError::Config("a named template needs a prompt_config".into()))?
                .template(name)?
                .clone(),
            (_, None) => {
                let mut all: Vec<AttributeName> = Vec::new();
                for a in categories.iter().flat_map(|c| &c.attribute_slots) {
                    if !all.contains(a) {
                        all.push(a.clone());
                    }
                }
                PromptTemplate::attribute_list(&all)
            }
        };

        let mut manual = BTreeMap::new();
        if let Some(p) = prompt_config {
            for e in p.manual_entries()? {
                manual.insert(e.category.name.clone(), e.values);
            }
        }

        let mut questions = default_questions(categories.iter().flat_map(|c| &c.attribute_slots));
        if let Some(p) = prompt_config {
            for (name, pattern) in p.questions() {
                let attr = resolve_attribute(prompt_config, &name)?;
                questions.insert(name, AttributeQuestion::new(attr, &pattern)?);
            }
        }
        Ok(Self {
            mode: config.prompt_mode,
            categories,
            template,
            manual,
            questions,
        })
    }

    fn manual_entries(&self) -> Result<Vec<PromptEntry>, ExperimentError> {
        self.categories
            .iter()
            .map(|c| {
                let values = self
                    .manual
                    .get(&c.name)
                    .ok_or_else(|| ExperimentError::Config(format!("no manual values for category {:?}", c.name)))?;
                Ok(PromptEntry::new(c.clone(), values.clone()))
            })
            .collect()
    }
}

pub struct PromptBackends<'a> {
    pub mlm: Option<&'a dyn MaskedLanguageModel>,
    pub vqa: Option<&'a dyn VisualQuestionAnswering>,
}

/// Prompt sets for the configured mode. The first set is the one evaluated
/// and trained on; masked-LM mode adds one set per further rank.
pub fn generate_prompts(
    config: &ExperimentConfig,
    inputs: &PromptInputs,
    backends: &PromptBackends<'_>,
    images: &[ImageRef],
    log: &mut RunLog,
) -> Result<Vec<LabeledPrompts>, ExperimentError> {
    let missing = |what: &str| ExperimentError::Config(format!("{what} backend not connected"));
    match inputs.mode {
        PromptMode::DefaultClass => {
            let entries: Vec<PromptEntry> = inputs
                .categories
                .iter()
                .map(|c| PromptEntry::new(c.clone(), AttributeValues::new()))
                .collect();
            let p = compose_prompt(&entries, &inputs.template, PromptVariant::Manual, None)?;
            log.push(format!("prompt: {}", p.text));
            Ok(vec![LabeledPrompts {
                label: "default_class".into(),
                source: PromptSource::Static(p),
            }])
        }
        PromptMode::Manual => {
            let p = compose_prompt(&inputs.manual_entries()?, &inputs.template, PromptVariant::Manual, None)?;
            log.push(format!("prompt: {}", p.text));
            Ok(vec![LabeledPrompts {
                label: "manual".into(),
                source: PromptSource::Static(p),
            }])
        }
        PromptMode::Mlm => {
            let mlm = backends.mlm.ok_or_else(|| missing("mlm"))?;
            let k = config.k.expect("validated");
            let set = generate_mlm_prompts(&inputs.categories, &inputs.template, mlm, k, &config.mlm_options)?;
            if let Some(s) = &set.shortfall {
                log.push(format!(
                    "mlm: {} ranks requested, {} available; limited by {:?}",
                    s.requested, s.available, s.limiting
                ));
            }
            Ok(set
                .prompts
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    log.push(format!("prompt rank {}: {}", i + 1, p.text));
                    LabeledPrompts {
                        label: format!("mlm_rank{}", i + 1),
                        source: PromptSource::Static(p),
                    }
                })
                .collect())
        }
        PromptMode::Vqa | PromptMode::Hybrid => {
            let vqa = backends.vqa.ok_or_else(|| missing("vqa"))?;
            let results = if inputs.mode == PromptMode::Vqa {
                generate_batch(images, |img| {
                    generate_vqa_prompt(img, &inputs.categories, &inputs.questions, vqa, &inputs.template)
                })
            } else {
                let mlm = backends.mlm.ok_or_else(|| missing("mlm"))?;
                generate_batch(images, |img| {
                    generate_hybrid_prompt(
                        img,
                        &inputs.categories,
                        &inputs.questions,
                        vqa,
                        mlm,
                        &config.mlm_options,
                        &inputs.template,
                    )
                })
            };
            let mut map = BTreeMap::new();
            for (img, r) in images.iter().zip(results) {
                let p = r.map_err(|source| ExperimentError::ImagePrompt {
                    image_id: img.id.clone(),
                    source,
                })?;
                log.push(format!("prompt {}: {}", img.id, p.text));
                map.insert(img.id.clone(), p);
            }
            Ok(vec![LabeledPrompts {
                label: inputs.mode.as_str().into(),
                source: PromptSource::PerImage(map),
            }])
        }
    }
}

/// Reads a prompt config relative to `base`.
pub fn load_prompt_config(config: &ExperimentConfig, base: &Path) -> Result<Option<PromptConfig>, ExperimentError> {
    config
        .prompt_config
        .as_ref()
        .map(|p| PromptConfig::from_path(&base.join(p)).map_err(ExperimentError::from))
        .transpose()
}
