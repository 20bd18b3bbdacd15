//! Shared domain types and the cosine-similarity primitive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of colour channels every tensor carries.
pub const CHANNELS: usize = 3;

/// A 3-channel float image, channel-major (`c, y, x`), nominally in `[0, 1]`.
///
/// Values outside `[0, 1]` are only legal on tensors produced by the detection
/// perturbation, which does not clamp; `is_perturbed` records that.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
    perturbed: bool,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::build(height, width, data, false)
    }

    pub(crate) fn new_perturbed(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::build(height, width, data, true)
    }

    fn build(height: usize, width: usize, data: Vec<f32>, perturbed: bool) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!("{height}x{width}")));
        }
        let expected = CHANNELS * height * width;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image tensor"));
        }
        Ok(Self {
            height,
            width,
            data,
            perturbed,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; CHANNELS * height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> TensorShape {
        TensorShape {
            height: self.height,
            width: self.width,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_perturbed(&self) -> bool {
        self.perturbed
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Returns `self + scale * direction`, element-wise, without clamping.
    pub fn displaced(&self, direction: &[f32], scale: f32) -> Result<Self> {
        if direction.len() != self.data.len() {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                actual: direction.len(),
            });
        }
        let data = self.data.iter().zip(direction).map(|(&v, &d)| v + scale * d).collect();
        Self::new_perturbed(self.height, self.width, data)
    }
}

/// Geometry of an [`ImageTensor`]; the channel count is always [`CHANNELS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!("{height}x{width}")));
        }
        Ok(Self { height, width })
    }

    pub fn len(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output of a feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidShape("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of two embeddings, clamped to `[-1, 1]`.
///
/// Computed as `dot / sqrt(|a|^2 |b|^2)` with all three sums accumulated in
/// the same loop, so identical inputs give exactly `1.0`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (mut dot, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::InvalidParameter(format!(
                "label must be `real` or `fake`, got `{other}`"
            ))),
        }
    }
}

/// Generator tag reserved for real images.
pub const REAL_GENERATOR: &str = "real";

/// One dataset entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub generator: String,
}

impl SampleRecord {
    pub fn new(
        id: impl Into<String>,
        path: impl Into<String>,
        label: Label,
        generator: impl Into<String>,
    ) -> Result<Self> {
        let record = Self {
            id: id.into(),
            path: path.into(),
            label,
            generator: generator.into(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let generator_is_real = self.generator == REAL_GENERATOR;
        if (self.label == Label::Real) != generator_is_real {
            return Err(Error::InvalidParameter(format!(
                "sample `{}`: label `{}` is inconsistent with generator `{}` \
                 (real images must use generator `{REAL_GENERATOR}` and only they may)",
                self.id, self.label, self.generator
            )));
        }
        if self.generator.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "sample `{}`: empty generator tag",
                self.id
            )));
        }
        Ok(())
    }
}

/// Per-sample result. `detection_score` is `1 - similarity`, so that higher
/// means more likely generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub similarity: f64,
    pub detection_score: f64,
    pub label: Label,
    pub generator: String,
}

impl ScoreRecord {
    pub fn new(sample: &SampleRecord, similarity: f64) -> Self {
        Self {
            sample_id: sample.id.clone(),
            similarity,
            detection_score: 1.0 - similarity,
            label: sample.label,
            generator: sample.generator.clone(),
        }
    }
}
