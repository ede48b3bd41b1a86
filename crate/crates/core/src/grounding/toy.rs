//! Deterministic, trainable stand-in encoders.
//!
//! Text: each whitespace token is normalized (lowercased, surrounding ASCII
//! punctuation trimmed) and looked up in an embedding table. Tokens missing
//! from the table use one of `buckets`, chosen by [`bucket_index`]: FNV-1a
//! 64-bit over the normalized token's UTF-8 bytes, modulo the bucket count.
//!
//! Image: each proposal is described by its normalized joint RGB histogram
//! with `bins_per_channel` bins per channel. Bin of a pixel is
//! `(qr * b + qg) * b + qb` with `q = value * b / 256`. The histogram goes
//! through a stack of linear layers; layer 0 maps `b^3` bins to `dim`, the
//! rest are `dim x dim`.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    alignment_scores, grounding_loss, loss_gradient, BoxProposal, FeatureMatrix, FeatureRole,
    GroundingError, Matrix, TargetMatrix,
};
use crate::prompt::whitespace_tokens;
use crate::BBox;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

pub fn bucket_index(token: &str, num_buckets: usize) -> usize {
    (fnv1a64(normalize_token(token).as_bytes()) % num_buckets as u64) as usize
}

/// Which parameter groups stay fixed during training. One flag per image
/// layer (bottom first) and one for the whole text side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub image_layers: Vec<bool>,
    pub text: bool,
}

impl Default for FreezeMask {
    fn default() -> Self {
        Self {
            image_layers: vec![true, true, false, false],
            text: false,
        }
    }
}

impl FreezeMask {
    pub fn all_frozen(layers: usize) -> Self {
        Self {
            image_layers: vec![true; layers],
            text: true,
        }
    }

    pub fn none_frozen(layers: usize) -> Self {
        Self {
            image_layers: vec![false; layers],
            text: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub bins_per_channel: usize,
    pub dim: usize,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    pub buckets: Vec<Vec<f64>>,
    pub image_layers: Vec<Matrix>,
    pub freeze: FreezeMask,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum TextSlot {
    Table(String),
    Bucket(usize),
}

impl ToyEncoder {
    /// Identity layers, so `dim = bins_per_channel^3` and region rows are the
    /// raw histograms. Buckets start at zero.
    pub fn identity(bins_per_channel: usize, num_layers: usize, num_buckets: usize) -> Self {
        let dim = bins_per_channel.pow(3);
        Self {
            bins_per_channel,
            dim,
            embeddings: BTreeMap::new(),
            buckets: vec![vec![0.0; dim]; num_buckets],
            image_layers: vec![Matrix::identity(dim); num_layers],
            freeze: FreezeMask {
                image_layers: FreezeMask::default()
                    .image_layers
                    .into_iter()
                    .chain(std::iter::repeat(false))
                    .take(num_layers)
                    .collect(),
                text: false,
            },
        }
    }

    /// Random projection in layer 0, identity above it, small random buckets.
    pub fn seeded(
        bins_per_channel: usize,
        dim: usize,
        num_layers: usize,
        num_buckets: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins = bins_per_channel.pow(3);
        let scale = 1.0 / (bins as f64).sqrt();
        let layer0: Vec<f64> = (0..dim * bins)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let mut layers = vec![Matrix::from_vec(dim, bins, layer0).expect("sized")];
        layers.extend((1..num_layers).map(|_| Matrix::identity(dim)));
        let buckets = (0..num_buckets)
            .map(|_| (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect())
            .collect();
        let mut enc = Self::identity(bins_per_channel, num_layers, 0);
        enc.dim = dim;
        enc.image_layers = layers;
        enc.buckets = buckets;
        enc
    }

    pub fn with_embedding(mut self, token: &str, row: Vec<f64>) -> Self {
        self.embeddings.insert(normalize_token(token), row);
        self
    }

    pub fn histogram_len(&self) -> usize {
        self.bins_per_channel.pow(3)
    }

    pub fn validate(&self) -> Result<(), GroundingError> {
        let bad = |m: String| Err(GroundingError::InvalidEncoder(m));
        if !(1..=256).contains(&self.bins_per_channel) {
            return bad(format!("bins_per_channel {} not in 1..=256", self.bins_per_channel));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.buckets.is_empty() {
            return bad("at least one hash bucket is required".into());
        }
        if self.image_layers.is_empty() {
            return bad("at least one image layer is required".into());
        }
        for (token, row) in &self.embeddings {
            if row.len() != self.dim || row.iter().any(|v| !v.is_finite()) {
                return bad(format!("embedding for {token:?} is not a finite {}-vector", self.dim));
            }
        }
        for (i, row) in self.buckets.iter().enumerate() {
            if row.len() != self.dim || row.iter().any(|v| !v.is_finite()) {
                return bad(format!("bucket {i} is not a finite {}-vector", self.dim));
            }
        }
        for (i, layer) in self.image_layers.iter().enumerate() {
            let cols = if i == 0 { self.histogram_len() } else { self.dim };
            if (layer.rows(), layer.cols()) != (self.dim, cols) || !layer.is_finite() {
                return bad(format!(
                    "image layer {i} must be a finite {}x{cols} matrix",
                    self.dim
                ));
            }
        }
        if self.freeze.image_layers.len() != self.image_layers.len() {
            return bad(format!(
                "freeze mask has {} image flags for {} layers",
                self.freeze.image_layers.len(),
                self.image_layers.len()
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GroundingError> {
        let err = |message: String| GroundingError::InvalidEncoder(format!("{}: {message}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let enc: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        enc.validate()?;
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("encoder serializes");
        std::fs::write(path, text)
    }

    fn slot(&self, token: &str) -> TextSlot {
        let key = normalize_token(token);
        if self.embeddings.contains_key(&key) {
            TextSlot::Table(key)
        } else {
            TextSlot::Bucket(bucket_index(token, self.buckets.len()))
        }
    }

    fn slot_row(&self, slot: &TextSlot) -> &[f64] {
        match slot {
            TextSlot::Table(k) => &self.embeddings[k],
            TextSlot::Bucket(i) => &self.buckets[*i],
        }
    }

    fn text_matrix(&self, slots: &[TextSlot]) -> Matrix {
        let rows: Vec<Vec<f64>> = slots.iter().map(|s| self.slot_row(s).to_vec()).collect();
        Matrix::from_rows(&rows).expect("rows share dim")
    }

    /// One row per whitespace token of `text`.
    pub fn encode_text(&self, text: &str) -> Result<FeatureMatrix, GroundingError> {
        let slots: Vec<TextSlot> = whitespace_tokens(text).into_iter().map(|t| self.slot(t)).collect();
        if slots.is_empty() {
            return Err(GroundingError::EmptyPrompt);
        }
        FeatureMatrix::new(FeatureRole::TextTokens, self.text_matrix(&slots))
    }

    /// Normalized histograms of each box, one row per box.
    pub fn histograms(&self, image: &RgbImage, boxes: &[BBox]) -> Result<Matrix, GroundingError> {
        if boxes.is_empty() {
            return Err(GroundingError::EmptyProposals);
        }
        let (w, h) = image.dimensions();
        for b in boxes {
            if !b.within(w as f64, h as f64) {
                return Err(GroundingError::ProposalOutsideImage {
                    bbox: *b,
                    width: w,
                    height: h,
                });
            }
        }
        let rows: Vec<Vec<f64>> = boxes
            .par_iter()
            .map(|b| region_histogram(image, b, self.bins_per_channel))
            .collect();
        Ok(Matrix::from_rows(&rows).expect("rows share length"))
    }

    fn forward(&self, histograms: &Matrix) -> Vec<Matrix> {
        let mut acts = vec![histograms.clone()];
        for layer in &self.image_layers {
            let next = acts.last().expect("non-empty").mul_transposed(layer);
            acts.push(next);
        }
        acts
    }

    /// Region features from precomputed histograms.
    pub fn project(&self, histograms: &Matrix) -> Result<FeatureMatrix, GroundingError> {
        if histograms.cols() != self.histogram_len() {
            return Err(GroundingError::InvalidEncoder(format!(
                "histograms have {} bins, encoder expects {}",
                histograms.cols(),
                self.histogram_len()
            )));
        }
        let acts = self.forward(histograms);
        FeatureMatrix::new(FeatureRole::ImageRegions, acts.into_iter().last().expect("non-empty"))
    }

    /// Region features for externally supplied boxes; row `i` is box `i`.
    pub fn encode_image(
        &self,
        image: &RgbImage,
        boxes: &[BBox],
    ) -> Result<(Vec<BoxProposal>, FeatureMatrix), GroundingError> {
        let h = self.histograms(image, boxes)?;
        let proposals = boxes
            .iter()
            .enumerate()
            .map(|(region_index, &bbox)| BoxProposal { bbox, region_index })
            .collect();
        Ok((proposals, self.project(&h)?))
    }
}

/// Pixel `(x, y)` belongs to the box when its centre `(x + 0.5, y + 0.5)`
/// lies inside it.
pub fn region_histogram(image: &RgbImage, bbox: &BBox, bins_per_channel: usize) -> Vec<f64> {
    let b = bins_per_channel;
    let mut hist = vec![0.0; b * b * b];
    let (w, h) = image.dimensions();
    let lo = |v: f64| (v - 0.5).ceil().max(0.0) as u32;
    let hi = |v: f64, limit: u32| ((v - 0.5).ceil().max(0.0) as u32).min(limit);
    let (x0, x1) = (lo(bbox.x1()), hi(bbox.x2(), w));
    let (y0, y1) = (lo(bbox.y1()), hi(bbox.y2(), h));
    let mut count = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let [r, g, bl] = image.get_pixel(x, y).0;
            let q = |v: u8| v as usize * b / 256;
            hist[(q(r) * b + q(g)) * b + q(bl)] += 1.0;
            count += 1;
        }
    }
    if count > 0 {
        for v in &mut hist {
            *v /= count as f64;
        }
    }
    hist
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, GroundingError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| GroundingError::UndecodableImage {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

/// One training example with its region histograms precomputed.
#[derive(Debug, Clone)]
pub struct TrainExample {
    histograms: Matrix,
    text: String,
    targets: TargetMatrix,
}

impl TrainExample {
    pub fn new(
        encoder: &ToyEncoder,
        image: &RgbImage,
        boxes: &[BBox],
        prompt_text: &str,
        targets: TargetMatrix,
    ) -> Result<Self, GroundingError> {
        let histograms = encoder.histograms(image, boxes)?;
        Self::from_histograms(histograms, prompt_text, targets)
    }

    pub fn from_histograms(
        histograms: Matrix,
        prompt_text: &str,
        targets: TargetMatrix,
    ) -> Result<Self, GroundingError> {
        let tokens = whitespace_tokens(prompt_text).len();
        if tokens == 0 {
            return Err(GroundingError::EmptyPrompt);
        }
        if (targets.num_regions(), targets.num_tokens()) != (histograms.rows(), tokens) {
            return Err(GroundingError::ExtentMismatch {
                scores: (histograms.rows(), tokens),
                targets: (targets.num_regions(), targets.num_tokens()),
            });
        }
        Ok(Self {
            histograms,
            text: prompt_text.to_string(),
            targets,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub image: f64,
    pub text: f64,
    pub weight_decay: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            image: lr,
            text: lr,
            weight_decay: 0.0,
        }
    }

    fn validate(&self) -> Result<(), GroundingError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.image) || !pos(self.text) || !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(GroundingError::InvalidLearningRate(*self));
        }
        Ok(())
    }
}

struct Gradients {
    loss: f64,
    layers: Vec<Option<Matrix>>,
    text: BTreeMap<TextSlot, Vec<f64>>,
}

fn example_gradients(enc: &ToyEncoder, ex: &TrainExample, scale: f64) -> Result<Gradients, GroundingError> {
    let slots: Vec<TextSlot> = whitespace_tokens(&ex.text).into_iter().map(|t| enc.slot(t)).collect();
    let p = FeatureMatrix::new(FeatureRole::TextTokens, enc.text_matrix(&slots))?;
    let acts = enc.forward(&ex.histograms);
    let o = FeatureMatrix::new(FeatureRole::ImageRegions, acts.last().expect("non-empty").clone())?;
    let s = alignment_scores(&o, &p)?;
    let loss = grounding_loss(&s, &ex.targets)?;
    let mut g = loss_gradient(&s, &ex.targets)?;
    g.scale(scale);

    let mut text = BTreeMap::new();
    if !enc.freeze.text {
        let dp = g.transposed_mul(o.values());
        for (m, slot) in slots.into_iter().enumerate() {
            let acc = text.entry(slot).or_insert_with(|| vec![0.0; enc.dim]);
            for (a, v) in acc.iter_mut().zip(dp.row(m)) {
                *a += v;
            }
        }
    }

    let mut layers = vec![None; enc.image_layers.len()];
    if let Some(lowest) = enc.freeze.image_layers.iter().position(|f| !f) {
        let mut da = g.mul(p.values());
        for l in (lowest..enc.image_layers.len()).rev() {
            if !enc.freeze.image_layers[l] {
                layers[l] = Some(da.transposed_mul(&acts[l]));
            }
            if l > lowest {
                da = da.mul(&enc.image_layers[l]);
            }
        }
    }
    Ok(Gradients { loss, layers, text })
}

/// Mean grounding loss of `batch` under `encoder`, without updating it.
pub fn toy_batch_loss(encoder: &ToyEncoder, batch: &[TrainExample]) -> Result<f64, GroundingError> {
    encoder.validate()?;
    if batch.is_empty() {
        return Err(GroundingError::EmptyBatch);
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| {
            let p = encoder.encode_text(&ex.text)?;
            let o = encoder.project(&ex.histograms)?;
            grounding_loss(&alignment_scores(&o, &p)?, &ex.targets)
        })
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// One gradient step on the mean batch loss. Returns the updated encoder and
/// the loss measured before the update. Frozen groups are copied unchanged.
/// Weight decay is applied to image layers being trained and to the text rows
/// that received a gradient in this batch.
pub fn toy_train_step(
    encoder: &ToyEncoder,
    batch: &[TrainExample],
    rates: &LearningRates,
) -> Result<(ToyEncoder, f64), GroundingError> {
    encoder.validate()?;
    rates.validate()?;
    if batch.is_empty() {
        return Err(GroundingError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let per_example: Vec<Gradients> = batch
        .par_iter()
        .map(|ex| example_gradients(encoder, ex, scale))
        .collect::<Result<_, _>>()?;

    let mut loss = 0.0;
    let mut layer_grads: Vec<Option<Matrix>> = vec![None; encoder.image_layers.len()];
    let mut text_grads: BTreeMap<TextSlot, Vec<f64>> = BTreeMap::new();
    for g in per_example {
        loss += g.loss * scale;
        for (acc, grad) in layer_grads.iter_mut().zip(g.layers) {
            match (acc.as_mut(), grad) {
                (Some(a), Some(gm)) => a.add_assign(&gm),
                (None, Some(gm)) => *acc = Some(gm),
                _ => {}
            }
        }
        for (slot, grad) in g.text {
            let acc = text_grads.entry(slot).or_insert_with(|| vec![0.0; encoder.dim]);
            for (a, v) in acc.iter_mut().zip(grad) {
                *a += v;
            }
        }
    }

    let mut next = encoder.clone();
    for (layer, grad) in next.image_layers.iter_mut().zip(layer_grads) {
        if let Some(grad) = grad {
            let mut decay = layer.clone();
            decay.scale(rates.weight_decay);
            let mut step = grad;
            step.add_assign(&decay);
            step.scale(-rates.image);
            layer.add_assign(&step);
        }
    }
    for (slot, grad) in text_grads {
        let row = match &slot {
            TextSlot::Table(k) => next.embeddings.get_mut(k).expect("slot from table"),
            TextSlot::Bucket(i) => &mut next.buckets[*i],
        };
        for (w, g) in row.iter_mut().zip(grad) {
            *w -= rates.text * (g + rates.weight_decay * *w);
        }
    }
    Ok((next, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn solid(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(c))
    }

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn table_lookup() {
        let enc = ToyEncoder::identity(1, 1, 2).with_embedding("polyp", vec![0.5]);
        let m = enc.encode_text("polyp").unwrap();
        assert_eq!(m.values().data(), &[0.5]);
        assert_eq!(m, enc.encode_text("Polyp.").unwrap());
    }

    #[test]
    fn dim4_lookup_and_bucket() {
        let mut enc = ToyEncoder::seeded(2, 4, 2, 7, 3).with_embedding("polyp", vec![1.0, 2.0, 3.0, 4.0]);
        enc.validate().unwrap();
        let m = enc.encode_text("polyp").unwrap();
        assert_eq!(m.values().row(0), &[1.0, 2.0, 3.0, 4.0]);
        let unknown = enc.encode_text("adenoma").unwrap();
        let idx = bucket_index("adenoma", 7);
        assert_eq!(unknown.values().row(0), enc.buckets[idx].as_slice());
        enc.buckets[idx][0] += 1.0;
        assert_ne!(enc.encode_text("adenoma").unwrap(), unknown);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_prompt_rejected() {
        let enc = ToyEncoder::identity(2, 1, 1);
        assert!(matches!(enc.encode_text("   "), Err(GroundingError::EmptyPrompt)));
    }

    #[test]
    fn uniform_region_is_one_hot() {
        let enc = ToyEncoder::identity(2, 4, 1);
        let img = solid(8, 8, [200, 10, 130]);
        let (props, o) = enc.encode_image(&img, &[bx(0.0, 0.0, 4.0, 4.0)]).unwrap();
        assert_eq!(props[0].region_index, 0);
        let mut expect = vec![0.0; 8];
        expect[(1 * 2 + 0) * 2 + 1] = 1.0;
        assert_eq!(o.values().row(0), expect.as_slice());
    }

    #[test]
    fn identical_content_identical_rows() {
        let enc = ToyEncoder::seeded(3, 5, 4, 2, 11);
        let mut img = solid(16, 8, [0, 0, 0]);
        for (x, y) in [(1, 1), (9, 1), (2, 3), (10, 3)] {
            img.put_pixel(x, y, Rgb([255, 100, 0]));
        }
        let (_, o) = enc
            .encode_image(&img, &[bx(0.0, 0.0, 8.0, 8.0), bx(8.0, 0.0, 16.0, 8.0)])
            .unwrap();
        assert_eq!(o.values().row(0), o.values().row(1));
    }

    #[test]
    fn image_errors() {
        let enc = ToyEncoder::identity(2, 1, 1);
        let img = solid(4, 4, [0, 0, 0]);
        assert!(matches!(enc.encode_image(&img, &[]), Err(GroundingError::EmptyProposals)));
        assert!(matches!(
            enc.encode_image(&img, &[bx(0.0, 0.0, 5.0, 4.0)]),
            Err(GroundingError::ProposalOutsideImage { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(matches!(load_rgb(&p), Err(GroundingError::UndecodableImage { .. })));
    }

    fn separable_example(enc: &ToyEncoder) -> TrainExample {
        let mut img = solid(8, 4, [0, 0, 0]);
        for y in 0..4 {
            for x in 4..8 {
                img.put_pixel(x, y, Rgb([255, 255, 255]));
            }
        }
        let boxes = [bx(0.0, 0.0, 4.0, 4.0), bx(4.0, 0.0, 8.0, 4.0)];
        let t = TargetMatrix::from_rows(&[vec![false], vec![true]]).unwrap();
        TrainExample::new(enc, &img, &boxes, "white", t).unwrap()
    }

    #[test]
    fn full_freeze_is_byte_identical() {
        let mut enc = ToyEncoder::seeded(2, 4, 4, 3, 1);
        enc.freeze = FreezeMask::all_frozen(4);
        let ex = separable_example(&enc);
        let (next, _) = toy_train_step(&enc, &[ex], &LearningRates::uniform(0.1)).unwrap();
        assert_eq!(serde_json::to_vec(&next).unwrap(), serde_json::to_vec(&enc).unwrap());
    }

    #[test]
    fn text_frozen_only_image_changes() {
        let mut enc = ToyEncoder::seeded(2, 4, 4, 3, 2);
        enc.freeze = FreezeMask {
            image_layers: vec![false; 4],
            text: true,
        };
        let ex = separable_example(&enc);
        let (next, _) = toy_train_step(&enc, &[ex], &LearningRates::uniform(0.1)).unwrap();
        assert_eq!(next.embeddings, enc.embeddings);
        assert_eq!(next.buckets, enc.buckets);
        assert_ne!(next.image_layers[0], enc.image_layers[0]);
    }

    #[test]
    fn partial_freeze_keeps_bottom_layers() {
        let enc = ToyEncoder::seeded(2, 4, 4, 3, 5);
        let ex = separable_example(&enc);
        let (next, _) = toy_train_step(&enc, &[ex], &LearningRates::uniform(0.1)).unwrap();
        assert_eq!(next.image_layers[0], enc.image_layers[0]);
        assert_eq!(next.image_layers[1], enc.image_layers[1]);
        assert_ne!(next.image_layers[3], enc.image_layers[3]);
        assert_ne!(next.buckets, enc.buckets);
    }

    #[test]
    fn separable_loss_decreases_monotonically() {
        let mut enc = ToyEncoder::seeded(2, 4, 4, 3, 9);
        enc.freeze = FreezeMask::none_frozen(4);
        let ex = separable_example(&enc);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let (next, loss) = toy_train_step(&enc, std::slice::from_ref(&ex), &LearningRates::uniform(0.1)).unwrap();
            losses.push(loss);
            enc = next;
        }
        assert!(losses.windows(2).skip(1).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn bad_inputs() {
        let enc = ToyEncoder::seeded(2, 4, 4, 3, 9);
        assert!(matches!(
            toy_train_step(&enc, &[], &LearningRates::uniform(0.1)),
            Err(GroundingError::EmptyBatch)
        ));
        let ex = separable_example(&enc);
        assert!(toy_train_step(&enc, &[ex], &LearningRates::uniform(0.0)).is_err());
        let mut broken = enc.clone();
        broken.freeze.image_layers.pop();
        assert!(broken.validate().is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let enc = ToyEncoder::seeded(2, 4, 4, 3, 1).with_embedding("pink", vec![1.0, 0.0, 0.0, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.json");
        enc.save(&p).unwrap();
        assert_eq!(ToyEncoder::load(&p).unwrap(), enc);
    }
}
