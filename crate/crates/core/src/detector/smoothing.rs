//! Gaussian smoothing of the similarity score and its Stein-lemma gradient.
//!
//! For `G(x) = E[h(x + delta)]` with `delta ~ N(0, lambda^2 I)`,
//! `grad G(x) = E[delta * h(x + delta)] / lambda^2`, so the gradient is
//! estimated from forward evaluations only.
//!
//! Because `E[delta] = 0`, subtracting the unperturbed value `h(x)` from every
//! evaluation leaves the expectation unchanged. The centered form has far
//! lower variance, and its norm grows with how much `h` drops under noise;
//! the plain form's norm is dominated by Monte-Carlo noise proportional to
//! `sqrt(E[h^2])` whenever the true gradient is small.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{similarity_score, DetectorConfig, EMBED_CHUNK};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::perturbation::{sample_noise, standard_draws, substream, NoiseDistribution, NoiseSpec};
use crate::types::{cosine_similarity, ImageTensor};

/// Draws accumulated sequentially inside one parallel task. Fixed so results
/// do not depend on the thread count.
const DRAWS_PER_TASK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteinEstimator {
    /// `sum_i delta_i * h(x + delta_i) / (N lambda^2)`.
    Plain,
    /// `sum_i delta_i * (h(x + delta_i) - h(x)) / (N lambda^2)`.
    #[default]
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinGradient {
    pub gradient: Vec<f64>,
    pub norm: f64,
    /// Monte-Carlo estimate of `G(x)` from the same draws.
    pub smoothed_value: f64,
    pub num_samples: usize,
    pub lambda: f64,
    pub estimator: SteinEstimator,
}

fn require_gaussian(noise: &NoiseSpec) -> Result<()> {
    if noise.distribution != NoiseDistribution::Gaussian {
        return Err(Error::InvalidParameter(format!(
            "smoothing requires Gaussian noise, got {}",
            noise.distribution
        )));
    }
    Ok(())
}

fn require_positive_lambda(noise: &NoiseSpec) -> Result<()> {
    if noise.lambda <= 0.0 {
        return Err(Error::InvalidParameter("Stein gradient needs lambda > 0".into()));
    }
    Ok(())
}

/// Monte-Carlo `G(x)`: identical to [`similarity_score`] with `K = n` draws.
pub fn smoothed_similarity(
    x: &ImageTensor,
    embedder: &dyn Embedder,
    noise: &NoiseSpec,
    num_samples: usize,
    stream: u64,
) -> Result<f64> {
    require_gaussian(noise)?;
    let cfg = DetectorConfig::new(*noise).with_draws(num_samples);
    similarity_score(x, embedder, &cfg, stream)
}

/// Per-task partial sums: `sum delta_i * h_i` and `sum h_i`.
type Partial = (Vec<f64>, f64);

fn reduce(
    partials: Vec<Partial>,
    dim: usize,
    num_samples: usize,
    lambda: f64,
    estimator: SteinEstimator,
) -> SteinGradient {
    let mut gradient = vec![0.0; dim];
    let mut h_sum = 0.0;
    for (g, h) in partials {
        gradient.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        h_sum += h;
    }
    let scale = 1.0 / (num_samples as f64 * lambda * lambda);
    gradient.iter_mut().for_each(|g| *g *= scale);
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    SteinGradient {
        gradient,
        norm,
        smoothed_value: h_sum / num_samples as f64,
        num_samples,
        lambda,
        estimator,
    }
}

fn weight(estimator: SteinEstimator, value: f64, baseline: f64) -> f64 {
    match estimator {
        SteinEstimator::Plain => value,
        SteinEstimator::Centered => value - baseline,
    }
}

fn tasks(num_samples: usize) -> impl IndexedParallelIterator<Item = std::ops::Range<usize>> {
    let n_tasks = num_samples.div_ceil(DRAWS_PER_TASK);
    (0..n_tasks)
        .into_par_iter()
        .map(move |t| t * DRAWS_PER_TASK..((t + 1) * DRAWS_PER_TASK).min(num_samples))
}

/// Stein gradient of the smoothed similarity `G(x)` for an embedder.
///
/// Draw `i` is the same `delta` that [`smoothed_similarity`] would use, so
/// `smoothed_value` matches it up to summation order.
pub fn stein_gradient(
    x: &ImageTensor,
    embedder: &dyn Embedder,
    noise: &NoiseSpec,
    num_samples: usize,
    stream: u64,
    estimator: SteinEstimator,
) -> Result<SteinGradient> {
    noise.validate()?;
    require_gaussian(noise)?;
    require_positive_lambda(noise)?;
    if num_samples == 0 {
        return Err(Error::InvalidParameter("num_samples must be >= 1".into()));
    }
    let base = embedder.embed_one(x)?;
    let baseline = cosine_similarity(&base, &base)?;
    let dim = x.len();
    let partials = tasks(num_samples)
        .map(|range| -> Result<Partial> {
            let mut g = vec![0.0; dim];
            let mut h_sum = 0.0;
            let idx: Vec<usize> = range.collect();
            for chunk in idx.chunks(EMBED_CHUNK) {
                let deltas = chunk
                    .iter()
                    .map(|&i| sample_noise(x.shape(), noise, substream(stream, i as u64)))
                    .collect::<Result<Vec<_>>>()?;
                let batch = deltas.iter().map(|d| x.displaced(d, 1.0)).collect::<Result<Vec<_>>>()?;
                let embeddings = embedder.embed(&batch)?;
                for (delta, e) in deltas.iter().zip(&embeddings) {
                    let h = cosine_similarity(&e, &base)?;
                    h_sum += h;
                    let w = weight(estimator, h, baseline);
                    g.iter_mut().zip(delta).for_each(|(a, &d)| *a += d as f64 * w);
                }
            }
            Ok((g, h_sum))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(partials, dim, num_samples, noise.lambda, estimator))
}

/// Stein gradient of the Gaussian smoothing of an arbitrary scalar function.
pub fn stein_gradient_fn<F>(
    x: &[f64],
    h: F,
    lambda: f64,
    num_samples: usize,
    seed: u64,
    stream: u64,
    estimator: SteinEstimator,
) -> Result<SteinGradient>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let noise = NoiseSpec::gaussian(lambda, seed)?;
    require_positive_lambda(&noise)?;
    if num_samples == 0 || x.is_empty() {
        return Err(Error::InvalidParameter(
            "need num_samples >= 1 and a non-empty point".into(),
        ));
    }
    let dim = x.len();
    let baseline = h(x);
    let partials: Vec<Partial> = tasks(num_samples)
        .map(|range| {
            let mut g = vec![0.0; dim];
            let mut h_sum = 0.0;
            let mut shifted = vec![0.0; dim];
            for i in range {
                let z = standard_draws(NoiseDistribution::Gaussian, seed, substream(stream, i as u64), dim);
                for ((s, &xi), &zi) in shifted.iter_mut().zip(x).zip(&z) {
                    *s = xi + lambda * zi;
                }
                let value = h(&shifted);
                h_sum += value;
                let w = weight(estimator, value, baseline);
                g.iter_mut().zip(&z).for_each(|(a, &zi)| *a += lambda * zi * w);
            }
            (g, h_sum)
        })
        .collect();
    Ok(reduce(partials, dim, num_samples, lambda, estimator))
}
