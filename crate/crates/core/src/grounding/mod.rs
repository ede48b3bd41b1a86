//! Region/phrase alignment: `S = O P^T`, its loss and gradient, decoding into
//! detections, a trainable toy encoder and detector adapters.

mod decode;
mod detector;
mod matrix;
mod scores;
pub mod toy;

use thiserror::Error;

pub use decode::{
    build_targets, category_scores, decode_detections, non_max_suppression, BoxProposal,
    DecodeParams, Detection, ProposalGrid,
};
pub use detector::{
    EncoderDescriptor, EncoderKind, GroundRequest, GroundResponse, GroundingDetector,
    GroundingOutput, HttpDetector, ScoreSummary, TokenScore, ToyDetector,
};
pub use matrix::Matrix;
pub use scores::{
    alignment_scores, grounding_loss, loss_gradient, sigmoid, FeatureMatrix, FeatureRole,
    GroundingScores, TargetMatrix,
};
pub use toy::{
    bucket_index, fnv1a64, load_rgb, normalize_token, region_histogram, toy_batch_loss, toy_train_step,
    FreezeMask, LearningRates, ToyEncoder, TrainExample,
};

use crate::http::BackendError;
use crate::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("feature dimensions differ: regions {regions}, tokens {tokens}")]
    DimensionMismatch { regions: usize, tokens: usize },
    #[error("score extents {scores:?} differ from target extents {targets:?}")]
    ExtentMismatch {
        scores: (usize, usize),
        targets: (usize, usize),
    },
    #[error("feature matrix must have at least one row and one column")]
    EmptyFeatures,
    #[error("rows have differing lengths")]
    RaggedRows,
    #[error("non-finite value in matrix")]
    NonFinite,
    #[error("span {category:?} [{start}, {end}) outside {num_tokens} tokens")]
    SpanOutOfRange {
        category: String,
        start: usize,
        end: usize,
        num_tokens: usize,
    },
    #[error("proposal region index {index} outside {num_regions} regions")]
    ProposalOutOfRange { index: usize, num_regions: usize },
    #[error("decode parameters must lie in [0, 1]: {0:?}")]
    InvalidDecodeParams(DecodeParams),
    #[error("prompt has no tokens")]
    EmptyPrompt,
    #[error("no proposals supplied")]
    EmptyProposals,
    #[error("proposal {bbox:?} outside a {width}x{height} image")]
    ProposalOutsideImage { bbox: BBox, width: u32, height: u32 },
    #[error("cannot decode image {path}: {message}")]
    UndecodableImage { path: String, message: String },
    #[error("invalid encoder: {0}")]
    InvalidEncoder(String),
    #[error("learning rates must be positive and weight decay non-negative: {0:?}")]
    InvalidLearningRate(LearningRates),
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("invalid detection from backend: {0}")]
    InvalidDetection(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
