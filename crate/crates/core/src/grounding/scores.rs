//! Region/token alignment scores and the classification loss over them.

use serde::{Deserialize, Serialize};

use super::{GroundingError, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    ImageRegions,
    TextTokens,
}

/// `rows x dim` features, one row per region or per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub role: FeatureRole,
    values: Matrix,
}

impl FeatureMatrix {
    pub fn new(role: FeatureRole, values: Matrix) -> Result<Self, GroundingError> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(GroundingError::EmptyFeatures);
        }
        if !values.is_finite() {
            return Err(GroundingError::NonFinite);
        }
        Ok(Self { role, values })
    }

    pub fn from_rows(role: FeatureRole, rows: &[Vec<f64>]) -> Result<Self, GroundingError> {
        let m = Matrix::from_rows(rows).ok_or(GroundingError::RaggedRows)?;
        Self::new(role, m)
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            role: self.role,
            values: self.values.map(|v| v * factor),
        }
    }
}

/// `num_regions x num_tokens` alignment scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundingScores(Matrix);

impl GroundingScores {
    pub fn new(values: Matrix) -> Result<Self, GroundingError> {
        if !values.is_finite() {
            return Err(GroundingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn num_regions(&self) -> usize {
        self.0.rows()
    }

    pub fn num_tokens(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, region: usize, token: usize) -> f64 {
        self.0.get(region, token)
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }
}

/// Binary targets paired with a score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMatrix {
    num_regions: usize,
    num_tokens: usize,
    data: Vec<bool>,
}

impl TargetMatrix {
    pub fn zeros(num_regions: usize, num_tokens: usize) -> Self {
        Self {
            num_regions,
            num_tokens,
            data: vec![false; num_regions * num_tokens],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self, GroundingError> {
        let num_tokens = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_tokens) {
            return Err(GroundingError::RaggedRows);
        }
        Ok(Self {
            num_regions: rows.len(),
            num_tokens,
            data: rows.concat(),
        })
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn get(&self, region: usize, token: usize) -> bool {
        self.data[region * self.num_tokens + token]
    }

    pub fn set(&mut self, region: usize, token: usize, v: bool) {
        self.data[region * self.num_tokens + token] = v;
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with logits: `max(s, 0) - s t + ln(1 + e^{-|s|})`.
fn bce_with_logits(s: f64, t: bool) -> f64 {
    let t = if t { 1.0 } else { 0.0 };
    s.max(0.0) - s * t + (-s.abs()).exp().ln_1p()
}

/// `S = O P^T`: dot product of every region row with every token row.
pub fn alignment_scores(
    regions: &FeatureMatrix,
    tokens: &FeatureMatrix,
) -> Result<GroundingScores, GroundingError> {
    if regions.dim() != tokens.dim() {
        return Err(GroundingError::DimensionMismatch {
            regions: regions.dim(),
            tokens: tokens.dim(),
        });
    }
    GroundingScores::new(regions.values.mul_transposed(&tokens.values))
}

fn check_extents(s: &GroundingScores, t: &TargetMatrix) -> Result<(), GroundingError> {
    if (s.num_regions(), s.num_tokens()) != (t.num_regions, t.num_tokens) {
        return Err(GroundingError::ExtentMismatch {
            scores: (s.num_regions(), s.num_tokens()),
            targets: (t.num_regions, t.num_tokens),
        });
    }
    Ok(())
}

/// Mean binary cross-entropy of `sigmoid(S)` against `T` over all cells.
pub fn grounding_loss(s: &GroundingScores, t: &TargetMatrix) -> Result<f64, GroundingError> {
    check_extents(s, t)?;
    let n = s.0.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = s
        .0
        .data()
        .iter()
        .zip(&t.data)
        .map(|(&s, &t)| bce_with_logits(s, t))
        .sum();
    Ok(total / n as f64)
}

/// `d loss / d S = (sigmoid(S) - T) / (regions * tokens)`.
pub fn loss_gradient(s: &GroundingScores, t: &TargetMatrix) -> Result<Matrix, GroundingError> {
    check_extents(s, t)?;
    let n = (s.num_regions() * s.num_tokens()).max(1) as f64;
    let data = s
        .0
        .data()
        .iter()
        .zip(&t.data)
        .map(|(&s, &t)| (sigmoid(s) - if t { 1.0 } else { 0.0 }) / n)
        .collect();
    Ok(Matrix::from_vec(s.num_regions(), s.num_tokens(), data).expect("same extents"))
}
