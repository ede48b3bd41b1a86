//! Grounding prompts for medical object detection.
//!
//! The crate turns category names and attribute knowledge into grounding
//! prompts, either by hand or by querying a masked language model, a visual
//! question answering model, or both. It scores region/phrase alignment with
//! a small trainable toy encoder (or an external detector), decodes
//! detections, and evaluates COCO-style AP over medical detection datasets.
//!
//! Module map:
//!
//! - [`prompt`]: attributes, categories, templates, prompt composition and
//!   phrase rearrangement.
//! - [`mlm`]: cloze queries against a masked-LM backend and top-k prompts.
//! - [`vqa`]: per-image prompts from a VQA backend, and hybrid prompts.
//! - [`grounding`]: alignment scores, loss, gradients, decoding, toy encoder.
//! - [`digest`]: canonical JSON and SHA-256 digests.
//! - [`dataset`]: manifests, annotation files, mask conversion, few-shot sampling.
//! - [`eval`]: IoU, AP/AP50, prompt sweeps and seed aggregation.
//! - [`experiment`]: run configuration, orchestration and artifacts.
//! - [`synthetic`]: a generated toy dataset with matching mock backends.

pub mod dataset;
pub mod digest;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod grounding;
pub mod http;
pub mod mlm;
pub mod prompt;
pub mod synthetic;
pub mod vqa;

pub use geometry::BBox;
