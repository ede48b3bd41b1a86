//! Command-line verbs. Each one goes through the same [`Workspace`] calls
//! as the matching HTTP route, so both write the same files.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use medprompt::dataset::{convert_mask_split, export_canonical, FewShotSpec, MaskMode, Split, DEFAULT_MIN_AREA};
use medprompt::eval::{aggregate_seeds, EvalReport, ImageDetections};
use medprompt::prompt::PhraseSpan;
use medprompt::experiment::{run_experiment, ExperimentConfig, PromptMode, RunOptions};
use medprompt::synthetic::SyntheticSpec;
use serde::Serialize;

use crate::workspace::{
    read_json, write_synthetic, AutoMode, AutoRequest, CategoryInput, ComposeRequest, GroundApiRequest, ServiceError,
    SweepRequest, TemplateInput, Workspace,
};

#[derive(Debug, Parser)]
#[command(name = "medprompt", version, about = "Grounding prompts for medical object detection")]
pub struct Cli {
    /// Directory holding datasets, `service.json` and run outputs.
    #[arg(long, global = true, env = "MEDPROMPT_DATA_ROOT", default_value = ".")]
    pub data_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build prompts by hand or from the configured backends.
    Promptgen {
        #[command(subcommand)]
        mode: PromptgenMode,
    },
    /// Ground one prompt on one image.
    Ground(GroundArgs),
    /// Evaluate stored detections, or aggregate reports across seeds.
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
    /// Evaluate several prompt variants on one split.
    Sweep(SweepArgs),
    /// Convert mask datasets or generate the synthetic fixture.
    Dataset {
        #[command(subcommand)]
        what: DatasetCommand,
    },
    /// Run an experiment and store its artifacts.
    Run(RunArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Debug, Args)]
pub struct AutoArgs {
    /// Category names.
    #[arg(required = true)]
    pub categories: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub attributes: Vec<String>,
    /// Template pattern, e.g. "[ATTR:color] [OBJ]".
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub image_id: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum PromptgenMode {
    /// Compose from a request file: `{template, categories, values}`.
    Manual {
        request: PathBuf,
    },
    Mlm {
        #[command(flatten)]
        args: AutoArgs,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    Vqa {
        #[command(flatten)]
        args: AutoArgs,
    },
    Hybrid {
        #[command(flatten)]
        args: AutoArgs,
    },
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[arg(long)]
    pub image_id: String,
    /// Prompt text; every category name in it becomes a span.
    #[arg(long, conflicts_with = "request")]
    pub prompt: Option<String>,
    #[arg(long, value_delimiter = ',', requires = "prompt")]
    pub categories: Vec<String>,
    /// A full ground request file instead of `--prompt`.
    #[arg(long)]
    pub request: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Score a detections file against a split.
    Detections {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "test")]
        split: Split,
        detections: PathBuf,
    },
    /// Mean and population std of AP/AP50 over report files.
    Seeds {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Request file: `{dataset, split, variants}`.
    pub request: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MaskModeArg {
    Binary,
    Instance,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Convert an `images/` + `masks/` directory to a box annotation file.
    Convert {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        split: Split,
        #[arg(long)]
        category: String,
        #[arg(long, value_enum, default_value = "binary")]
        mode: MaskModeArg,
        #[arg(long, default_value_t = DEFAULT_MIN_AREA)]
        min_area: usize,
        /// Annotation file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic dataset and its mock backends.
    Synth {
        #[arg(long, default_value_t = 8)]
        train: usize,
        #[arg(long, default_value_t = 4)]
        val: usize,
        #[arg(long, default_value_t = 6)]
        test: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    DefaultClass,
    Manual,
    Mlm,
    Vqa,
    Hybrid,
}

impl From<ModeArg> for PromptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DefaultClass => PromptMode::DefaultClass,
            ModeArg::Manual => PromptMode::Manual,
            ModeArg::Mlm => PromptMode::Mlm,
            ModeArg::Vqa => PromptMode::Vqa,
            ModeArg::Hybrid => PromptMode::Hybrid,
        }
    }
}

/// Config file plus overrides. Without a file, `--dataset` and
/// `--prompt-mode` are required and backends come from `service.json`.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub eval_split: Option<Split>,
    #[arg(long, value_enum)]
    pub prompt_mode: Option<ModeArg>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub attributes: Option<Vec<String>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub input_size: Option<u32>,
    #[arg(long)]
    pub freeze_text_layers: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    pub freeze_image_layers: Option<Vec<bool>>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub shot_seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub text_learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl RunArgs {
    pub fn build(&self, data_root: &Path) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => {
                let ws = open(data_root)?;
                let dataset = self.dataset.clone().context("--dataset is required without --config")?;
                let mode = self.prompt_mode.context("--prompt-mode is required without --config")?;
                let mut c = ExperimentConfig::new(dataset, mode.into(), ws.settings.encoder.clone());
                let mode = c.prompt_mode;
                if mode != PromptMode::DefaultClass {
                    c.prompt_config = ws.settings.prompt_config.clone();
                }
                if mode.needs_mlm() {
                    c.backends.mlm = ws.settings.mlm.clone();
                }
                if mode.is_image_specific() {
                    c.backends.vqa = ws.settings.vqa.clone();
                }
                c.mlm_options = ws.settings.mlm_options.clone();
                c.decode = ws.settings.decode;
                c.evaluation = ws.settings.evaluation.clone();
                c.output_dir = ws.settings.output_dir.clone();
                c
            }
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone();
                }
            )*};
        }
        set!(dataset, eval_split, input_size, freeze_text_layers, freeze_image_layers, epochs);
        set!(learning_rate, text_learning_rate, weight_decay, lr_decay_factor, output_dir, attributes);
        if let Some(m) = self.prompt_mode {
            c.prompt_mode = m.into();
        }
        if self.template.is_some() {
            c.template = self.template.clone();
        }
        if self.k.is_some() {
            c.k = self.k;
        }
        if let Some(n) = self.shots {
            c.shots = Some(FewShotSpec::new(n, self.shot_seed));
        }
        if let Some(t) = self.score_threshold {
            c.decode.score_threshold = t;
        }
        if let Some(t) = self.nms_iou {
            c.decode.nms_iou = t;
        }
        Ok(c)
    }
}

fn open(data_root: &Path) -> Result<Workspace> {
    Workspace::open(data_root).map_err(|e| anyhow!("{e}"))
}

fn svc<T>(r: Result<T, ServiceError>) -> Result<T> {
    r.map_err(|e| anyhow!("{e}"))
}

/// Pretty JSON on stdout. A closed pipe (`| head`) is not an error.
fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn auto(data_root: &Path, mode: AutoMode, args: &AutoArgs, k: Option<usize>) -> Result<()> {
    let ws = open(data_root)?;
    let req = AutoRequest {
        mode,
        categories: args.categories.iter().cloned().map(CategoryInput::Name).collect(),
        attributes: args.attributes.clone(),
        template: args.template.clone().map(TemplateInput::Pattern),
        image_id: args.image_id.clone(),
        k,
    };
    print_json(&svc(ws.auto_prompts(&req))?)
}

/// One span per category: the period-delimited phrase holding its name.
fn spans_for(text: &str, categories: &[String]) -> Result<Vec<PhraseSpan>> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let mut phrases = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.ends_with('.') || i + 1 == tokens.len() {
            phrases.push((start, i + 1));
            start = i + 1;
        }
    }
    let mut out = Vec::new();
    for c in categories {
        let name: Vec<String> = c.split_whitespace().map(str::to_lowercase).collect();
        let hit = phrases.iter().find(|(s, e)| {
            tokens[*s..*e]
                .windows(name.len())
                .any(|w| w.iter().zip(&name).all(|(t, n)| t.trim_end_matches(['.', ',']) == n))
        });
        let (s, e) = hit.ok_or_else(|| anyhow!("category {c:?} does not occur in the prompt"))?;
        out.push(PhraseSpan {
            category: c.clone(),
            start: *s,
            end: *e,
        });
    }
    out.sort_by_key(|s| s.start);
    Ok(out)
}

pub fn execute(cli: Cli) -> Result<()> {
    let root = cli.data_root.as_path();
    match cli.command {
        Command::Promptgen { mode } => match mode {
            PromptgenMode::Manual { request } => {
                let ws = open(root)?;
                let req: ComposeRequest = svc(read_json(&request))?;
                print_json(&svc(ws.compose(&req))?)
            }
            PromptgenMode::Mlm { args, k } => auto(root, AutoMode::Mlm, &args, Some(k)),
            PromptgenMode::Vqa { args } => auto(root, AutoMode::Vqa, &args, None),
            PromptgenMode::Hybrid { args } => auto(root, AutoMode::Hybrid, &args, None),
        },
        Command::Ground(args) => {
            let ws = open(root)?;
            let req = match (&args.request, &args.prompt) {
                (Some(p), _) => svc(read_json::<GroundApiRequest>(p))?,
                (None, Some(text)) => {
                    let categories = if args.categories.is_empty() {
                        let (ds, _) = svc(ws.find_image(&args.image_id))?;
                        ds.manifest.category_names()
                    } else {
                        args.categories.clone()
                    };
                    GroundApiRequest {
                        image_id: args.image_id.clone(),
                        prompt_text: text.clone(),
                        spans: spans_for(text, &categories)?,
                        decode: None,
                    }
                }
                (None, None) => bail!("either --prompt or --request is required"),
            };
            print_json(&svc(ws.ground(&req))?)
        }
        Command::Eval { what } => match what {
            EvalCommand::Detections {
                dataset,
                split,
                detections,
            } => {
                let ws = open(root)?;
                let run: Vec<ImageDetections> = svc(read_json(&detections))?;
                print_json(&svc(ws.evaluate(&dataset, split, &run))?)
            }
            EvalCommand::Seeds { reports } => {
                let reports = reports
                    .iter()
                    .map(|p| svc(read_json::<EvalReport>(p)))
                    .collect::<Result<Vec<_>>>()?;
                let summary = aggregate_seeds(&reports)?;
                eprintln!(
                    "AP {}  AP50 {}  ({} seeds)",
                    summary.mean_ap.percent(),
                    summary.mean_ap50.percent(),
                    summary.mean_ap.n_seeds
                );
                print_json(&summary)
            }
        },
        Command::Sweep(args) => {
            let ws = open(root)?;
            let req: SweepRequest = svc(read_json(&args.request))?;
            let created = svc(ws.sweep(&req))?;
            for r in &created.table.rows {
                let score = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}", x * 100.0));
                eprintln!("{:<16} AP {:>5}  AP50 {:>5}  {}", r.label, score(r.ap), score(r.ap50), r.prompt);
            }
            print_json(&created)
        }
        Command::Dataset { what } => match what {
            DatasetCommand::Convert {
                src,
                split,
                category,
                mode,
                min_area,
                out,
            } => {
                let mode = match mode {
                    MaskModeArg::Binary => MaskMode::Binary,
                    MaskModeArg::Instance => MaskMode::Instance,
                };
                let records = convert_mask_split(&src, split, &category, mode, min_area)?;
                export_canonical(&records, std::slice::from_ref(&category), &out)?;
                eprintln!(
                    "{} images, {} boxes -> {}",
                    records.len(),
                    records.iter().map(|r| r.boxes.len()).sum::<usize>(),
                    out.display()
                );
                Ok(())
            }
            DatasetCommand::Synth { train, val, test, seed } => {
                let spec = SyntheticSpec { train, val, test, seed };
                let fx = write_synthetic(root, &spec)?;
                eprintln!("wrote {} images to {}", fx.records.values().map(Vec::len).sum::<usize>(), fx.root.display());
                Ok(())
            }
        },
        Command::Run(args) => {
            let config = args.build(root)?;
            let artifact = run_experiment(&config, root, &RunOptions { threads: args.threads })?;
            eprintln!(
                "run {}: AP {:.4} AP50 {:.4}",
                artifact.config_digest, artifact.report.mean_ap, artifact.report.mean_ap50
            );
            print_json(&artifact.report)
        }
        Command::Serve { bind } => {
            let ws = open(root)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(&bind, ws))
        }
    }
}
