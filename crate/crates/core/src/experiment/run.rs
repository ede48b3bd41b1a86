use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::{
    generate_prompts, load_prompt_config, write_log, EpochRecord, ExperimentConfig, ExperimentError,
    LabeledPrompts, PlateauScheduler, PromptBackends, PromptInputs, RunArtifact, RunLog, TrainingLog,
    VariantReport,
};
use crate::dataset::{load_dataset, sample_few_shot, AnnotationRecord, DatasetManifest, LoadOptions, Split};
use crate::eval::{evaluate, ground_records, PromptSource};
use crate::grounding::{
    build_targets, load_rgb, toy_batch_loss, toy_train_step, EncoderKind, FreezeMask, LearningRates,
    ProposalGrid, ToyDetector, ToyEncoder, TrainExample,
};
use crate::vqa::ImageRef;
use crate::BBox;

/// Proposals overlapping a ground-truth box at least this much are positive
/// training targets.
pub const TARGET_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; the global pool when unset.
    pub threads: Option<usize>,
}

/// `path` itself when it is a file, else `manifest.json` or `manifest.toml`
/// inside it.
pub fn find_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf), ExperimentError> {
    if path.is_file() {
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        return Ok((DatasetManifest::from_path(path)?, root));
    }
    for name in ["manifest.json", "manifest.toml"] {
        let p = path.join(name);
        if p.is_file() {
            return Ok((DatasetManifest::from_path(&p)?, path.to_path_buf()));
        }
    }
    Err(ExperimentError::Config(format!("no manifest in {}", path.display())))
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const FILE: &'static str = ".lock";

    pub fn acquire(dir: &Path) -> Result<Self, ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        let path = dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ExperimentError::Locked(dir.display().to_string()))
            }
            Err(e) => Err(ExperimentError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Runs one experiment and stores its artifact under
/// `<base>/<output_dir>/<digest>/`. On failure the log so far is still
/// written there.
pub fn run_experiment(
    config: &ExperimentConfig,
    base: &Path,
    options: &RunOptions,
) -> Result<RunArtifact, ExperimentError> {
    config.validate()?;
    match options.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_locked(config, base))
        }
        None => run_locked(config, base),
    }
}

fn run_locked(config: &ExperimentConfig, base: &Path) -> Result<RunArtifact, ExperimentError> {
    let digest = config.digest();
    let out_root = base.join(&config.output_dir);
    let _lock = DirLock::acquire(&out_root)?;
    let run_dir = out_root.join(&digest);
    std::fs::create_dir_all(&run_dir).map_err(|e| ExperimentError::io(&run_dir, e))?;
    let mut log = RunLog::default();
    log.push(format!("config {digest}"));
    match execute(config, base, &digest, &mut log) {
        Ok(artifact) => {
            artifact.write(&run_dir)?;
            Ok(artifact)
        }
        Err(e) => {
            log.push(format!("error: {e}"));
            write_log(&run_dir, &log.lines)?;
            Err(e)
        }
    }
}

fn image_refs<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>) -> Vec<ImageRef> {
    let mut out: Vec<ImageRef> = Vec::new();
    for r in records {
        if !out.iter().any(|i| i.id == r.image.id) {
            out.push(r.image.clone());
        }
    }
    out
}

fn execute(
    config: &ExperimentConfig,
    base: &Path,
    digest: &str,
    log: &mut RunLog,
) -> Result<RunArtifact, ExperimentError> {
    let (manifest, root) = find_manifest(&base.join(&config.dataset))?;
    let ds = load_dataset(&manifest, &root, LoadOptions::default())?;
    for w in &ds.warnings {
        log.push(format!("warning: {w}"));
    }
    let eval_records = ds.split(config.eval_split);
    if eval_records.is_empty() {
        return Err(ExperimentError::Config(format!(
            "{} has no {} images",
            manifest.name, config.eval_split
        )));
    }
    log.push(format!(
        "dataset {} ({} {} images)",
        manifest.name,
        eval_records.len(),
        config.eval_split
    ));

    let shots = match &config.shots {
        Some(spec) => {
            let s = sample_few_shot(ds.split(Split::Train), spec)?;
            log.push(format!(
                "few-shot: {} training images ({})",
                s.len(),
                s.iter().map(|r| r.image.id.as_str()).collect::<Vec<_>>().join(", ")
            ));
            s
        }
        None => Vec::new(),
    };
    let val_records: &[AnnotationRecord] = if config.shots.is_some() {
        ds.split(Split::Val)
    } else {
        &[]
    };

    let prompt_config = load_prompt_config(config, base)?;
    let inputs = PromptInputs::resolve(config, &manifest, prompt_config.as_ref())?;
    let mlm = config.backends.mlm.as_ref().map(|d| d.connect(base)).transpose()?;
    let vqa = config.backends.vqa.as_ref().map(|d| d.connect(base)).transpose()?;
    let backends = PromptBackends {
        mlm: mlm.as_deref(),
        vqa: vqa.as_deref(),
    };
    let images = image_refs(eval_records.iter().chain(&shots).chain(val_records));
    let prompts = generate_prompts(config, &inputs, &backends, &images, log)?;
    let main = &prompts[0];

    let mut encoder_desc = config.backends.encoder.clone();
    encoder_desc.input_size = config.input_size;
    let (toy, training) = match (encoder_desc.kind, config.shots.is_some()) {
        (EncoderKind::Toy, true) => {
            let mut enc = encoder_desc.load_toy(base)?;
            if config.freeze_image_layers.len() != enc.image_layers.len() {
                return Err(ExperimentError::Config(format!(
                    "freeze_image_layers has {} flags, encoder has {} layers",
                    config.freeze_image_layers.len(),
                    enc.image_layers.len()
                )));
            }
            enc.freeze = FreezeMask {
                image_layers: config.freeze_image_layers.clone(),
                text: config.freeze_text_layers,
            };
            let (tuned, training) = train(
                config,
                enc,
                &shots,
                val_records,
                &main.source,
                &ds.root,
                &encoder_desc.proposals,
                digest,
                log,
            )?;
            (Some(Arc::new(tuned)), Some(training))
        }
        _ => (None, None),
    };
    let detector = encoder_desc.connect(base, &ds.root, toy.clone())?;

    let categories = manifest.category_names();
    let run_variant = |p: &LabeledPrompts| {
        let detections = ground_records(
            eval_records,
            |r| p.source.prompt_for(&r.image.id),
            detector.as_ref(),
            &config.decode,
        )?;
        let report = evaluate(&detections, eval_records, &categories, &config.evaluation, digest)?;
        Ok::<_, ExperimentError>((detections, report))
    };
    let (detections, report) = run_variant(main)?;
    log.push(format!(
        "{}: AP {:.4} AP50 {:.4}",
        main.label, report.mean_ap, report.mean_ap50
    ));
    let mut variant_reports = Vec::new();
    if prompts.len() > 1 {
        variant_reports.push(VariantReport {
            label: main.label.clone(),
            report: report.clone(),
        });
        for p in &prompts[1..] {
            let (_, r) = run_variant(p)?;
            log.push(format!("{}: AP {:.4} AP50 {:.4}", p.label, r.mean_ap, r.mean_ap50));
            variant_reports.push(VariantReport {
                label: p.label.clone(),
                report: r,
            });
        }
    }

    Ok(RunArtifact {
        config_digest: digest.to_string(),
        config: config.clone(),
        prompts,
        detections,
        report,
        variant_reports,
        training,
        tuned_encoder: toy.map(|e| (*e).clone()),
        log: log.lines.clone(),
    })
}

/// Training examples for `records` with the prompts each image gets.
pub fn training_examples(
    encoder: &ToyEncoder,
    records: &[AnnotationRecord],
    prompts: &PromptSource,
    image_root: &Path,
    grid: &ProposalGrid,
) -> Result<Vec<TrainExample>, ExperimentError> {
    records
        .par_iter()
        .map(|r| {
            let prompt = prompts
                .prompt_for(&r.image.id)
                .ok_or_else(|| ExperimentError::Config(format!("no prompt for training image {}", r.image.id)))?;
            let rgb = load_rgb(&image_root.join(&r.image.uri))?;
            let proposals = grid.proposals(rgb.width(), rgb.height());
            let boxes: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
            let gt: Vec<(BBox, String)> = r.boxes.iter().map(|b| (b.bbox, b.category.clone())).collect();
            let targets = build_targets(
                proposals.len(),
                prompt.num_tokens(),
                &proposals,
                &prompt.spans,
                &gt,
                TARGET_IOU,
            )?;
            Ok(TrainExample::new(encoder, &rgb, &boxes, &prompt.text, targets)?)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: &ExperimentConfig,
    mut encoder: ToyEncoder,
    shots: &[AnnotationRecord],
    val: &[AnnotationRecord],
    prompts: &PromptSource,
    image_root: &Path,
    grid: &ProposalGrid,
    digest: &str,
    log: &mut RunLog,
) -> Result<(ToyEncoder, TrainingLog), ExperimentError> {
    let examples = training_examples(&encoder, shots, prompts, image_root, grid)?;
    let categories: Vec<String> = {
        let mut c: Vec<String> = shots
            .iter()
            .chain(val)
            .flat_map(|r| r.boxes.iter().map(|b| b.category.clone()))
            .collect();
        c.sort();
        c.dedup();
        c
    };
    let mut scheduler = PlateauScheduler::new(config.lr_decay_factor, config.plateau_patience, config.plateau_min_delta);
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let rates = LearningRates {
            image: config.learning_rate * scheduler.scale(),
            text: config.text_learning_rate * scheduler.scale(),
            weight_decay: config.weight_decay,
        };
        let (next, loss) = toy_train_step(&encoder, &examples, &rates)?;
        encoder = next;
        let val_mean_ap = if val.is_empty() {
            None
        } else {
            let det = ToyDetector::new(Arc::new(encoder.clone()), grid.clone(), image_root)?;
            let run = ground_records(val, |r| prompts.prompt_for(&r.image.id), &det, &config.decode)?;
            Some(evaluate(&run, val, &categories, &config.evaluation, digest)?.mean_ap)
        };
        let decayed = val_mean_ap.map(|ap| scheduler.observe(ap)).unwrap_or(false);
        log.push(format!(
            "epoch {}: loss {:.6}{}{}",
            epoch + 1,
            loss,
            val_mean_ap.map(|ap| format!(" val AP {ap:.4}")).unwrap_or_default(),
            if decayed { " (lr decayed)" } else { "" }
        ));
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss,
            val_mean_ap,
            image_lr: rates.image,
            text_lr: rates.text,
            decayed,
        });
    }
    let final_loss = toy_batch_loss(&encoder, &examples)?;
    log.push(format!("final training loss {final_loss:.6}"));
    Ok((
        encoder,
        TrainingLog {
            shots: shots.iter().map(|r| r.image.id.clone()).collect(),
            epochs,
            final_loss,
        },
    ))
}
