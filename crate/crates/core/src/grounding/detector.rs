//! Detector adapters: the in-process toy encoder and a remote model.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::toy::load_rgb;
use super::{
    alignment_scores, category_scores, decode_detections, sigmoid, BoxProposal, DecodeParams,
    Detection, GroundingError, GroundingScores, Matrix, ProposalGrid, ToyEncoder,
};
use crate::http::{post_json, HttpSettings};
use crate::prompt::{ComposedPrompt, PhraseSpan};
use crate::vqa::ImageRef;
use crate::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    /// Highest logistic score of this token over all regions.
    pub max_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub num_regions: usize,
    pub num_tokens: usize,
    pub tokens: Vec<TokenScore>,
    /// Best span-max score per category over all regions.
    pub categories: Vec<(String, f64)>,
}

impl ScoreSummary {
    pub fn from_scores(
        scores: &GroundingScores,
        proposals: &[BoxProposal],
        prompt: &ComposedPrompt,
    ) -> Result<Self, GroundingError> {
        let per_region = category_scores(scores, proposals, &prompt.spans)?;
        let categories = prompt
            .spans
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let best = per_region.iter().map(|r| r[c]).fold(0.0, f64::max);
                (s.category.clone(), best)
            })
            .collect();
        let tokens = prompt
            .tokens()
            .into_iter()
            .enumerate()
            .map(|(j, token)| TokenScore {
                token: token.to_string(),
                max_score: (0..scores.num_regions())
                    .map(|i| sigmoid(scores.get(i, j)))
                    .fold(0.0, f64::max),
            })
            .collect();
        Ok(Self {
            num_regions: scores.num_regions(),
            num_tokens: scores.num_tokens(),
            tokens,
            categories,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingOutput {
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<ScoreSummary>,
}

pub trait GroundingDetector: Send + Sync {
    fn ground(
        &self,
        image: &ImageRef,
        prompt: &ComposedPrompt,
        params: &DecodeParams,
    ) -> Result<GroundingOutput, GroundingError>;
}

type RegionCache = HashMap<String, Arc<(Vec<BoxProposal>, Matrix)>>;

/// Toy encoder over sliding-window proposals. Region histograms are cached
/// per image URI; the encoder itself is an immutable snapshot.
pub struct ToyDetector {
    encoder: Arc<ToyEncoder>,
    grid: ProposalGrid,
    image_root: PathBuf,
    cache: Mutex<RegionCache>,
}

impl ToyDetector {
    pub fn new(encoder: Arc<ToyEncoder>, grid: ProposalGrid, image_root: &Path) -> Result<Self, GroundingError> {
        encoder.validate()?;
        Ok(Self {
            encoder,
            grid,
            image_root: image_root.to_path_buf(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn encoder(&self) -> &ToyEncoder {
        &self.encoder
    }

    fn regions(&self, image: &ImageRef) -> Result<Arc<(Vec<BoxProposal>, Matrix)>, GroundingError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&image.uri) {
            return Ok(hit.clone());
        }
        let rgb = load_rgb(&self.image_root.join(&image.uri))?;
        let proposals = self.grid.proposals(rgb.width(), rgb.height());
        let boxes: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
        let hist = self.encoder.histograms(&rgb, &boxes)?;
        let entry = Arc::new((proposals, hist));
        self.cache
            .lock()
            .expect("cache lock")
            .insert(image.uri.clone(), entry.clone());
        Ok(entry)
    }
}

impl GroundingDetector for ToyDetector {
    fn ground(
        &self,
        image: &ImageRef,
        prompt: &ComposedPrompt,
        params: &DecodeParams,
    ) -> Result<GroundingOutput, GroundingError> {
        let regions = self.regions(image)?;
        let (proposals, hist) = (&regions.0, &regions.1);
        let o = self.encoder.project(hist)?;
        let p = self.encoder.encode_text(&prompt.text)?;
        let s = alignment_scores(&o, &p)?;
        let detections = decode_detections(&s, proposals, &prompt.spans, params)?;
        let summary = ScoreSummary::from_scores(&s, proposals, prompt)?;
        Ok(GroundingOutput {
            detections,
            summary: Some(summary),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub image_id: String,
    pub image_uri: String,
    pub prompt: String,
    pub spans: Vec<PhraseSpan>,
    pub input_size: [u32; 2],
}

/// A remote model either decodes itself or hands back raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundResponse {
    Detections { detections: Vec<Detection> },
    Scores { scores: Vec<Vec<f64>>, proposals: Vec<BBox> },
}

#[derive(Debug, Clone)]
pub struct HttpDetector {
    pub endpoint: String,
    pub input_size: u32,
    pub settings: HttpSettings,
}

impl GroundingDetector for HttpDetector {
    fn ground(
        &self,
        image: &ImageRef,
        prompt: &ComposedPrompt,
        params: &DecodeParams,
    ) -> Result<GroundingOutput, GroundingError> {
        let req = GroundRequest {
            image_id: image.id.clone(),
            image_uri: image.uri.clone(),
            prompt: prompt.text.clone(),
            spans: prompt.spans.clone(),
            input_size: [self.input_size; 2],
        };
        let resp: GroundResponse = post_json(&self.endpoint, &req, &self.settings)?;
        match resp {
            GroundResponse::Detections { mut detections } => {
                if let Some(d) = detections.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
                    return Err(GroundingError::InvalidDetection(format!(
                        "score {} outside [0, 1]",
                        d.score
                    )));
                }
                detections.sort_by(|a, b| b.score.total_cmp(&a.score));
                Ok(GroundingOutput {
                    detections,
                    summary: None,
                })
            }
            GroundResponse::Scores { scores, proposals } => {
                let m = Matrix::from_rows(&scores).ok_or(GroundingError::RaggedRows)?;
                let s = GroundingScores::new(m)?;
                let proposals: Vec<BoxProposal> = proposals
                    .into_iter()
                    .enumerate()
                    .map(|(region_index, bbox)| BoxProposal { bbox, region_index })
                    .collect();
                let detections = decode_detections(&s, &proposals, &prompt.spans, params)?;
                let summary = ScoreSummary::from_scores(&s, &proposals, prompt)?;
                Ok(GroundingOutput {
                    detections,
                    summary: Some(summary),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Toy,
    External,
}

fn default_input_size() -> u32 {
    800
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub kind: EncoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Toy weights file (JSON), relative to the data root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<PathBuf>,
    #[serde(default)]
    pub proposals: ProposalGrid,
    #[serde(default = "default_input_size")]
    pub input_size: u32,
    #[serde(default)]
    pub http: HttpSettings,
}

impl EncoderDescriptor {
    pub fn toy(parameters: impl Into<PathBuf>) -> Self {
        Self {
            kind: EncoderKind::Toy,
            endpoint: None,
            parameters: Some(parameters.into()),
            proposals: ProposalGrid::default(),
            input_size: default_input_size(),
            http: HttpSettings::default(),
        }
    }

    pub fn external(endpoint: &str) -> Self {
        Self {
            kind: EncoderKind::External,
            endpoint: Some(endpoint.to_string()),
            parameters: None,
            ..Self::toy("")
        }
    }

    pub fn validate(&self) -> Result<(), GroundingError> {
        match (self.kind, &self.endpoint, &self.parameters) {
            (EncoderKind::Toy, None, Some(_)) | (EncoderKind::External, Some(_), None) => {}
            _ => {
                return Err(GroundingError::InvalidEncoder(
                    "toy needs only parameters, external needs only endpoint".into(),
                ))
            }
        }
        if self.input_size == 0 {
            return Err(GroundingError::InvalidEncoder("input_size must be positive".into()));
        }
        Ok(())
    }

    pub fn load_toy(&self, base: &Path) -> Result<ToyEncoder, GroundingError> {
        self.validate()?;
        match &self.parameters {
            Some(p) => ToyEncoder::load(&base.join(p)),
            None => Err(GroundingError::InvalidEncoder("external encoders have no local weights".into())),
        }
    }

    /// Weights resolve against `base`, image URIs against `image_root`.
    /// `toy` overrides the weights file when given (e.g. after fine-tuning).
    pub fn connect(
        &self,
        base: &Path,
        image_root: &Path,
        toy: Option<Arc<ToyEncoder>>,
    ) -> Result<Box<dyn GroundingDetector>, GroundingError> {
        self.validate()?;
        match self.kind {
            EncoderKind::Toy => {
                let enc = match toy {
                    Some(e) => e,
                    None => Arc::new(self.load_toy(base)?),
                };
                Ok(Box::new(ToyDetector::new(enc, self.proposals.clone(), image_root)?))
            }
            EncoderKind::External => Ok(Box::new(HttpDetector {
                endpoint: self.endpoint.clone().expect("validated"),
                input_size: self.input_size,
                settings: self.http,
            })),
        }
    }
}
