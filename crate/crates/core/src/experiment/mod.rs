//! Experiment configuration, orchestration and run artifacts.

mod artifact;
mod config;
mod prompts;
mod run;
mod schedule;

use std::path::Path;

use thiserror::Error;

pub use artifact::{
    list_runs, write_log, EpochRecord, RunArtifact, RunSummary, TrainingLog, VariantReport, CONFIG_FILE,
    DETECTIONS_FILE, ENCODER_FILE, LOG_FILE, PROMPTS_FILE, REPORT_FILE, TRAINING_FILE, VARIANTS_FILE,
};
pub use config::{Backends, ExperimentConfig, PromptMode};
pub use prompts::{generate_prompts, load_prompt_config, LabeledPrompts, PromptBackends, PromptInputs};
pub use run::{find_manifest, run_experiment, training_examples, DirLock, RunOptions, TARGET_IOU};
pub use schedule::PlateauScheduler;

use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::grounding::GroundingError;
use crate::http::BackendError;
use crate::mlm::MlmError;
use crate::prompt::PromptError;
use crate::vqa::VqaError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Mlm(#[from] MlmError),
    #[error(transparent)]
    Vqa(#[from] VqaError),
    #[error("prompt for image {image_id}: {source}")]
    ImagePrompt { image_id: String, source: VqaError },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("output directory {0} is in use by another run")]
    Locked(String),
    #[error("artifact: {0}")]
    Artifact(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Lines of a run log. No timestamps, so equal configs give equal logs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub lines: Vec<String>,
}

impl RunLog {
    pub fn push(&mut self, line: String) {
        self.lines.push(line);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FewShotSpec, Split};
    use crate::prompt::PromptVariant;
    use crate::eval::PromptSource;
    use crate::synthetic::{self, SyntheticSpec};

    fn fixture(spec: SyntheticSpec) -> (tempfile::TempDir, synthetic::SyntheticFixture) {
        let dir = tempfile::tempdir().unwrap();
        let fx = synthetic::write_fixture(dir.path(), &spec).unwrap();
        (dir, fx)
    }

    fn config(fx: &synthetic::SyntheticFixture, mode: PromptMode) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(".", mode, fx.encoder_descriptor());
        if mode != PromptMode::DefaultClass {
            c.prompt_config = Some(synthetic::PROMPTS_FILE.into());
        }
        if mode.needs_mlm() {
            c.backends.mlm = Some(fx.mlm_descriptor());
        }
        if mode.is_image_specific() {
            c.backends.vqa = Some(fx.vqa_descriptor());
        }
        if mode == PromptMode::Mlm {
            c.k = Some(3);
        }
        c
    }

    #[test]
    fn default_class_prompts_are_bare_names() {
        let (dir, fx) = fixture(SyntheticSpec::default());
        let a = run_experiment(&config(&fx, PromptMode::DefaultClass), dir.path(), &RunOptions::default()).unwrap();
        match &a.prompts[0].source {
            PromptSource::Static(p) => {
                assert_eq!(p.text, "polyp. wound. nodule");
                assert_eq!(p.variant, PromptVariant::Manual);
            }
            other => panic!("{other:?}"),
        }
        assert!(a.report.mean_ap50 < 0.5);
    }

    #[test]
    fn repeat_runs_match_and_reload() {
        let (dir, fx) = fixture(SyntheticSpec::default());
        let mut c = config(&fx, PromptMode::Manual);
        c.template = Some("full".into());
        let a = run_experiment(&c, dir.path(), &RunOptions::default()).unwrap();
        let b = run_experiment(&c, dir.path(), &RunOptions { threads: Some(2) }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.config_digest, c.digest());
        let run_dir = dir.path().join("runs").join(&a.config_digest);
        assert_eq!(RunArtifact::load(&run_dir).unwrap(), a);
        let runs = list_runs(&dir.path().join("runs")).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].mean_ap, a.report.mean_ap);
        assert!(!dir.path().join("runs").join(DirLock::FILE).exists());
    }

    #[test]
    fn hybrid_gives_one_prompt_per_image() {
        let spec = SyntheticSpec {
            test: 3,
            ..SyntheticSpec::default()
        };
        let (dir, fx) = fixture(spec);
        let mut c = config(&fx, PromptMode::Hybrid);
        c.template = Some("full".into());
        let a = run_experiment(&c, dir.path(), &RunOptions::default()).unwrap();
        let PromptSource::PerImage(map) = &a.prompts[0].source else {
            panic!("expected per-image prompts");
        };
        assert_eq!(map.len(), 3);
        let mut texts: Vec<&str> = map.values().map(|p| p.text.as_str()).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), 3, "{texts:?}");
        let stored = std::fs::read_to_string(dir.path().join("runs").join(&a.config_digest).join(PROMPTS_FILE)).unwrap();
        for t in texts {
            assert!(stored.contains(t));
        }
    }

    #[test]
    fn mlm_reports_every_rank() {
        let (dir, fx) = fixture(SyntheticSpec::default());
        let mut c = config(&fx, PromptMode::Mlm);
        c.template = Some("color".into());
        let a = run_experiment(&c, dir.path(), &RunOptions::default()).unwrap();
        assert_eq!(a.prompts.len(), 3);
        assert_eq!(a.variant_reports.len(), 3);
        assert_eq!(a.variant_reports[0].report, a.report);
        assert_eq!(a.report.mean_ap50, 1.0);
        assert!(a.variant_reports[1].report.mean_ap < a.report.mean_ap);
    }

    #[test]
    fn backend_failure_leaves_partial_log() {
        let (dir, fx) = fixture(SyntheticSpec::default());
        let mut c = config(&fx, PromptMode::Vqa);
        c.template = Some("full".into());
        std::fs::write(dir.path().join(synthetic::VQA_FILE), "[]").unwrap();
        let err = run_experiment(&c, dir.path(), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, ExperimentError::ImagePrompt { .. }), "{err}");
        let log = std::fs::read_to_string(dir.path().join("runs").join(c.digest()).join(LOG_FILE)).unwrap();
        assert!(log.lines().last().unwrap().starts_with("error:"));
        assert!(!dir.path().join("runs").join(c.digest()).join(REPORT_FILE).exists());
    }

    #[test]
    fn locked_output_dir() {
        let (dir, fx) = fixture(SyntheticSpec::default());
        let c = config(&fx, PromptMode::DefaultClass);
        let _held = DirLock::acquire(&dir.path().join("runs")).unwrap();
        assert!(matches!(
            run_experiment(&c, dir.path(), &RunOptions::default()),
            Err(ExperimentError::Locked(_))
        ));
    }

    #[test]
    fn few_shot_run_trains_and_stores_weights() {
        let (dir, fx) = fixture(SyntheticSpec::default());
        let mut c = config(&fx, PromptMode::DefaultClass);
        c.shots = Some(FewShotSpec::new(4, 3));
        c.eval_split = Split::Test;
        c.epochs = 30;
        c.learning_rate = 20.0;
        c.text_learning_rate = 20.0;
        c.weight_decay = 0.0;
        let a = run_experiment(&c, dir.path(), &RunOptions::default()).unwrap();
        let t = a.training.as_ref().unwrap();
        assert_eq!(t.shots.len(), 4);
        assert_eq!(t.epochs.len(), 30);
        assert!(t.final_loss < t.epochs[0].loss);
        assert!(a.tuned_encoder.is_some());
        assert_eq!(a.report.mean_ap50, 1.0);
        assert_eq!(RunArtifact::load(&dir.path().join("runs").join(&a.config_digest)).unwrap(), a);
    }
}
