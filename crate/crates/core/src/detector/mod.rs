//! Perturbation-similarity scoring and everything built on it: the threshold
//! rule, calibration, Gaussian smoothing with its Stein gradient, and the
//! similarity landscape.

mod calibrate;
mod landscape;
mod smoothing;

use serde::{Deserialize, Serialize};

use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::perturbation::{perturb, substream, NoiseSpec};
use crate::types::{cosine_similarity, ImageTensor, Label};

pub use calibrate::{
    calibrate_threshold, Calibration, DEFAULT_TARGET_TNR, MIN_CALIBRATION_SAMPLES, QUANTILE_CONVENTION,
};
pub use landscape::{landscape, LandscapeGrid, LandscapeSpec};
pub use smoothing::{smoothed_similarity, stein_gradient, stein_gradient_fn, SteinEstimator, SteinGradient};

/// Perturbed copies embedded per backend call.
pub(crate) const EMBED_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub noise: NoiseSpec,
    /// Noise draws averaged per image (`K`).
    pub num_noise_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            noise: NoiseSpec::default(),
            num_noise_samples: 1,
            epsilon: None,
        }
    }
}

impl DetectorConfig {
    pub fn new(noise: NoiseSpec) -> Self {
        Self {
            noise,
            ..Self::default()
        }
    }

    pub fn with_draws(mut self, k: usize) -> Self {
        self.num_noise_samples = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.num_noise_samples == 0 {
            return Err(Error::InvalidParameter("num_noise_samples must be >= 1".into()));
        }
        if let Some(eps) = self.epsilon {
            check_unit_interval("epsilon", eps)?;
        }
        Ok(())
    }
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!("{name} must lie in [-1, 1], got {v}")));
    }
    Ok(())
}

/// Mean cosine similarity between `f(x)` and `f(x + lambda * delta_k)` over
/// the configured number of draws. Draw `k` uses stream
/// `substream(sample_stream, k)`.
pub fn similarity_score(
    x: &ImageTensor,
    embedder: &dyn Embedder,
    cfg: &DetectorConfig,
    sample_stream: u64,
) -> Result<f64> {
    cfg.validate()?;
    let base = embedder.embed_one(x)?;
    let k = cfg.num_noise_samples;
    let mut total = 0.0;
    let mut start = 0;
    while start < k {
        let end = (start + EMBED_CHUNK).min(k);
        let batch = (start..end)
            .map(|i| perturb(x, &cfg.noise, substream(sample_stream, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        for e in embedder.embed(&batch)? {
            total += cosine_similarity(&base, &e)?;
        }
        start = end;
    }
    Ok(total / k as f64)
}

/// Threshold rule: generated iff `similarity <= epsilon`.
pub fn detect(similarity: f64, epsilon: Option<f64>) -> Result<Label> {
    let epsilon = epsilon.ok_or(Error::EpsilonUnset)?;
    check_unit_interval("similarity", similarity)?;
    check_unit_interval("epsilon", epsilon)?;
    Ok(if similarity <= epsilon {
        Label::Fake
    } else {
        Label::Real
    })
}
