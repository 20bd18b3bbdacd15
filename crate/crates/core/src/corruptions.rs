//! Evaluation-time image corruptions and the robustness sweep.
//!
//! Corruptions act on the stored image, before preprocessing, and always
//! return a tensor in `[0, 1]` of the original shape.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use jpeg_encoder::{ChromaSubsamplingMethod, ColorType, Encoder, SamplingFactor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::embedder::{rgb_to_tensor, tensor_to_rgb};
use crate::embedder::{Backbone, EmbedderConfig};
use crate::error::{Error, Result};
use crate::harness::{score_images, LoadedSample};
use crate::metrics::{evaluate_records, EvalReport};
use crate::perturbation::{sample_noise, stream_for_id, NoiseSpec};
use crate::types::{ImageTensor, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    Jpeg,
    GaussianBlur,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [Self::GaussianNoise, Self::Jpeg, Self::GaussianBlur];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::Jpeg => "jpeg",
            Self::GaussianBlur => "gaussian_blur",
        }
    }

    /// Five levels per corruption, mildest first.
    pub fn default_levels(self) -> Vec<f64> {
        match self {
            Self::GaussianNoise => vec![0.05, 0.1, 0.15, 0.2, 0.25],
            Self::Jpeg => vec![90.0, 80.0, 70.0, 60.0, 50.0],
            Self::GaussianBlur => vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian_noise" | "noise" => Ok(Self::GaussianNoise),
            "jpeg" => Ok(Self::Jpeg),
            "gaussian_blur" | "blur" => Ok(Self::GaussianBlur),
            _ => Err(Error::InvalidParameter(format!("unknown corruption `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Noise std, JPEG quality or blur sigma, depending on `kind`.
    pub level: f64,
    /// Only used by `gaussian_noise`.
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, level: f64, seed: u64) -> Result<Self> {
        let spec = Self { kind, level, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            CorruptionKind::GaussianNoise | CorruptionKind::GaussianBlur => self.level.is_finite() && self.level >= 0.0,
            CorruptionKind::Jpeg => self.level.fract() == 0.0 && (1.0..=100.0).contains(&self.level),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid {} level {}",
                self.kind, self.level
            )));
        }
        Ok(())
    }
}

/// Applies `spec` with the noise stream derived from `sample_id`.
pub fn corrupt(x: &ImageTensor, spec: &CorruptionSpec, sample_id: &str) -> Result<ImageTensor> {
    corrupt_with_stream(x, spec, corruption_stream(sample_id))
}

/// Kept apart from the detection streams of the same id.
fn corruption_stream(sample_id: &str) -> u64 {
    stream_for_id(&format!("corruption/{sample_id}"))
}

pub fn corrupt_with_stream(x: &ImageTensor, spec: &CorruptionSpec, stream: u64) -> Result<ImageTensor> {
    spec.validate()?;
    if x.is_perturbed() {
        return Err(Error::InvalidParameter(
            "corruptions apply to stored images, not perturbed tensors".into(),
        ));
    }
    match spec.kind {
        CorruptionKind::GaussianNoise => add_noise(x, spec.level, spec.seed, stream),
        CorruptionKind::Jpeg => jpeg_round_trip(x, spec.level as u8),
        CorruptionKind::GaussianBlur => gaussian_blur(x, spec.level),
    }
}

fn add_noise(x: &ImageTensor, lambda: f64, seed: u64, stream: u64) -> Result<ImageTensor> {
    let noise = sample_noise(x.shape(), &NoiseSpec::gaussian(lambda, seed)?, stream)?;
    let data = x
        .data()
        .iter()
        .zip(&noise)
        .map(|(&v, &n)| (v + n).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(x.height(), x.width(), data)
}

/// Baseline JPEG at `quality` with 4:2:0 chroma, decoded back to `[0, 1]`.
pub fn jpeg_round_trip(x: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let (w, h) = (x.width(), x.height());
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::InvalidShape(format!("{w}x{h} is too large for JPEG"))),
    };
    let rgb = tensor_to_rgb(x);
    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality.clamp(1, 100));
    encoder.set_sampling_factor(SamplingFactor::R_4_2_0);
    encoder.set_chroma_subsampling_method(ChromaSubsamplingMethod::Average);
    encoder
        .encode(rgb.as_raw(), w16, h16, ColorType::Rgb)
        .map_err(|e| Error::InvalidParameter(format!("JPEG encoding failed: {e}")))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)?.to_rgb8();
    rgb_to_tensor(&decoded)
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
/// `sigma = 0` gives the identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Separable blur of each channel, reflect-padded.
pub fn gaussian_blur(x: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    let kernel = gaussian_kernel(sigma)?;
    if kernel.len() == 1 {
        return Ok(x.clone());
    }
    let r = (kernel.len() / 2) as i64;
    let (h, w) = (x.height(), x.width());
    let mut out = Vec::with_capacity(x.len());
    for c in 0..CHANNELS {
        let plane = x.channel(c);
        let mut rows = vec![0.0f64; h * w];
        for y in 0..h {
            let line = &plane[y * w..(y + 1) * w];
            for xx in 0..w {
                rows[y * w + xx] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| t * line[reflect(xx as i64 + k as i64 - r, w)] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| t * rows[reflect(y as i64 + k as i64 - r, h) * w + xx])
                    .sum();
                out.push((v as f32).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(h, w, out)
}

/// One sweep row; `level` is `None` for the uncorrupted baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub kind: CorruptionKind,
    pub level: Option<f64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub kind: CorruptionKind,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn generators(&self) -> Vec<String> {
        self.rows
            .first()
            .map(|r| r.report.per_generator.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// `kind,level,auc,ap` for one generator, or the generator average when
    /// `generator` is `None`. The baseline row has level `none`.
    pub fn to_csv(&self, generator: Option<&str>) -> Result<String> {
        let mut out = String::from("kind,level,auc,ap\n");
        for row in &self.rows {
            let (auc, ap) = match generator {
                None => (row.report.average_auc, row.report.average_ap),
                Some(g) => {
                    let m = row
                        .report
                        .per_generator
                        .get(g)
                        .ok_or_else(|| Error::InvalidParameter(format!("unknown generator `{g}`")))?;
                    (m.auc, m.ap)
                }
            };
            let level = row.level.map_or_else(|| "none".to_string(), |l| l.to_string());
            writeln!(out, "{},{level},{auc},{ap}", self.kind).expect("write to string");
        }
        Ok(out)
    }
}

/// Corrupts every image (real and generated alike), scores and evaluates,
/// once per level, after an uncorrupted baseline row.
pub fn robustness_sweep(
    samples: &[LoadedSample],
    backbone: &Backbone,
    embedder: &EmbedderConfig,
    detector: &DetectorConfig,
    kind: CorruptionKind,
    levels: &[f64],
    corruption_seed: u64,
) -> Result<RobustnessTable> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("robustness sweep needs samples".into()));
    }
    let specs = levels
        .iter()
        .map(|&l| CorruptionSpec::new(kind, l, corruption_seed))
        .collect::<Result<Vec<_>>>()?;

    let baseline = score_images(samples, backbone, embedder, detector)?;
    let mut rows = vec![RobustnessRow {
        kind,
        level: None,
        report: evaluate_records(&baseline, detector.epsilon, "")?,
    }];
    for spec in specs {
        let corrupted = samples
            .par_iter()
            .map(|s| {
                Ok(LoadedSample {
                    record: s.record.clone(),
                    image: corrupt(&s.image, &spec, &s.record.id)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = score_images(&corrupted, backbone, embedder, detector)?;
        log::info!("{} level {}: scored {} images", kind, spec.level, scores.len());
        rows.push(RobustnessRow {
            kind,
            level: Some(spec.level),
            report: evaluate_records(&scores, detector.epsilon, "")?,
        });
    }
    Ok(RobustnessTable { kind, rows })
}
