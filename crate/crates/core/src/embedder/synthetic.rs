//! Analytically tractable embedders used as test oracles.
//!
//! Both read the first `input_dim` components of the flattened tensor, so a
//! small oracle dimension can be used with any image geometry.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_geometry, Backbone, Embedder};
use crate::error::{Error, Result};
use crate::perturbation::stream_rng;
use crate::types::{Embedding, ImageTensor, TensorShape};

const WEIGHT_STREAM: u64 = 1;
const PHASE_STREAM: u64 = 2;

fn leading(x: &ImageTensor, n: usize) -> Result<&[f32]> {
    x.data().get(..n).ok_or(Error::DimensionMismatch {
        expected: n,
        actual: x.len(),
    })
}

/// `E(x) = W x` with a fixed random `W`.
#[derive(Debug, Clone)]
pub struct LinearEmbedder {
    shape: Option<TensorShape>,
    input_dim: usize,
    weights: Vec<Vec<f64>>,
}

impl LinearEmbedder {
    /// Rows drawn i.i.d. from `N(0, 1/input_dim)`.
    pub fn random(shape: TensorShape, input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, WEIGHT_STREAM);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let weights = (0..output_dim)
            .map(|_| {
                (0..input_dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self::from_weights(Some(shape), weights)
    }

    /// Random matrix with orthonormal rows (Gram-Schmidt); needs `output_dim <= input_dim`.
    pub fn orthonormal(shape: TensorShape, input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if output_dim > input_dim {
            return Err(Error::InvalidParameter(format!(
                "cannot build {output_dim} orthonormal rows in dimension {input_dim}"
            )));
        }
        let mut rng = stream_rng(seed, WEIGHT_STREAM);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(output_dim);
        while rows.len() < output_dim {
            let mut v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            for r in &rows {
                let proj: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                rows.push(v);
            }
        }
        Self::from_weights(Some(shape), rows)
    }

    pub fn from_weights(shape: Option<TensorShape>, weights: Vec<Vec<f64>>) -> Result<Self> {
        let input_dim = weights.first().map(Vec::len).unwrap_or(0);
        if input_dim == 0 || weights.iter().any(|r| r.len() != input_dim) {
            return Err(Error::InvalidParameter(
                "weights must be a non-empty rectangular matrix".into(),
            ));
        }
        if let Some(s) = shape {
            if input_dim > s.len() {
                return Err(Error::DimensionMismatch {
                    expected: s.len(),
                    actual: input_dim,
                });
            }
        }
        Ok(Self {
            shape,
            input_dim,
            weights,
        })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }
}

impl Embedder for LinearEmbedder {
    fn embedding_dim(&self) -> usize {
        self.weights.len()
    }

    fn input_shape(&self) -> Option<TensorShape> {
        self.shape
    }

    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Embedding>> {
        check_geometry(self.shape, batch)?;
        batch
            .iter()
            .map(|x| {
                let v = leading(x, self.input_dim)?;
                Embedding::new(
                    self.weights
                        .iter()
                        .map(|row| row.iter().zip(v).map(|(w, &p)| w * p as f64).sum())
                        .collect(),
                )
            })
            .collect()
    }
}

/// Random-Fourier-feature map parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RffParams {
    pub input_dim: usize,
    pub output_dim: usize,
    pub frequency_scale: f64,
    pub seed: u64,
}

/// `phi(x)_i = sqrt(2/d) cos(w_i . x + b_i)` with `w_i ~ N(0, k^2 I)` and
/// `b_i ~ U[0, 2pi)`, so that `<phi(x), phi(y)> ~= exp(-k^2 |x - y|^2 / 2)`.
#[derive(Debug, Clone)]
pub struct RffEmbedder {
    params: RffParams,
    shape: Option<TensorShape>,
    /// Row-major `output_dim x input_dim`, already multiplied by `k`.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
}

impl RffEmbedder {
    pub fn new(params: RffParams, shape: Option<TensorShape>) -> Result<Self> {
        if params.input_dim == 0 || params.output_dim == 0 {
            return Err(Error::InvalidParameter("RFF dimensions must be > 0".into()));
        }
        if !(params.frequency_scale > 0.0 && params.frequency_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "RFF frequency scale must be > 0, got {}",
                params.frequency_scale
            )));
        }
        if let Some(s) = shape {
            if params.input_dim > s.len() {
                return Err(Error::DimensionMismatch {
                    expected: s.len(),
                    actual: params.input_dim,
                });
            }
        }
        let mut rng = stream_rng(params.seed, WEIGHT_STREAM);
        let frequencies = (0..params.output_dim * params.input_dim)
            .map(|_| params.frequency_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut rng = stream_rng(params.seed, PHASE_STREAM);
        let phases = (0..params.output_dim)
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        Ok(Self {
            params,
            shape,
            frequencies,
            phases,
        })
    }

    pub fn params(&self) -> &RffParams {
        &self.params
    }

    fn features(&self, x: &[f32]) -> Result<Embedding> {
        let n = self.params.input_dim;
        let amp = (2.0 / self.params.output_dim as f64).sqrt();
        let values = self
            .frequencies
            .chunks_exact(n)
            .zip(&self.phases)
            .map(|(w, b)| {
                let z: f64 = w.iter().zip(x).map(|(wi, &xi)| wi * xi as f64).sum();
                amp * (z + b).cos()
            })
            .collect();
        Embedding::new(values)
    }
}

impl Embedder for RffEmbedder {
    fn embedding_dim(&self) -> usize {
        self.params.output_dim
    }

    fn input_shape(&self) -> Option<TensorShape> {
        self.shape
    }

    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Embedding>> {
        check_geometry(self.shape, batch)?;
        batch
            .iter()
            .map(|x| self.features(leading(x, self.params.input_dim)?))
            .collect()
    }
}

/// Two RFF maps sharing frequencies and phases but with different scales:
/// `k_real` for real samples and `k_fake` for generated ones.
#[derive(Debug, Clone)]
pub struct RffPopulation {
    pub real: RffEmbedder,
    pub fake: RffEmbedder,
}

impl RffPopulation {
    pub fn into_backbone(self) -> Backbone {
        Backbone::ByLabel {
            real: Arc::new(self.real),
            fake: Arc::new(self.fake),
        }
    }
}

pub fn make_rff_population_embedder(
    k_real: f64,
    k_fake: f64,
    params: &RffParams,
    shape: Option<TensorShape>,
) -> Result<RffPopulation> {
    if !(k_real > 0.0 && k_fake >= k_real && k_fake.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need k_fake >= k_real > 0, got k_real={k_real}, k_fake={k_fake}"
        )));
    }
    let with_scale = |k| {
        RffEmbedder::new(
            RffParams {
                frequency_scale: k,
                ..*params
            },
            shape,
        )
    };
    Ok(RffPopulation {
        real: with_scale(k_real)?,
        fake: with_scale(k_fake)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::{perturb, NoiseSpec};
    use crate::types::cosine_similarity;

    fn shape() -> TensorShape {
        TensorShape::new(4, 4).unwrap()
    }

    #[test]
    fn linear_is_matrix_product() {
        let e = LinearEmbedder::random(shape(), 48, 5, 3).unwrap();
        let x = ImageTensor::from_fn(4, 4, |c, y, x| 0.01 * (c * 16 + y * 4 + x) as f32).unwrap();
        let got = e.embed_one(&x).unwrap();
        for (row, v) in e.weights().iter().zip(got.values()) {
            let want: f64 = row.iter().zip(x.data()).map(|(w, &p)| w * p as f64).sum();
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn orthonormal_rows() {
        let e = LinearEmbedder::orthonormal(shape(), 48, 10, 1).unwrap();
        for (i, a) in e.weights().iter().enumerate() {
            for (j, b) in e.weights().iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        assert!(LinearEmbedder::orthonormal(shape(), 48, 49, 1).is_err());
    }

    #[test]
    fn rff_self_similarity_is_one() {
        let e = RffEmbedder::new(
            RffParams {
                input_dim: 16,
                output_dim: 256,
                frequency_scale: 1.0,
                seed: 0,
            },
            Some(shape()),
        )
        .unwrap();
        let x = ImageTensor::filled(4, 4, 0.4).unwrap();
        let a = e.embed_one(&x).unwrap();
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(e.embed_one(&x).unwrap(), a);
    }

    #[test]
    fn rff_geometry_and_dim_checks() {
        let params = RffParams {
            input_dim: 49,
            output_dim: 8,
            frequency_scale: 1.0,
            seed: 0,
        };
        assert!(RffEmbedder::new(params, Some(shape())).is_err());
        let e = RffEmbedder::new(
            RffParams {
                input_dim: 16,
                ..params
            },
            Some(shape()),
        )
        .unwrap();
        assert!(e.embed(&[ImageTensor::filled(5, 5, 0.0).unwrap()]).is_err());
    }

    #[test]
    fn population_shares_directions() {
        let params = RffParams {
            input_dim: 16,
            output_dim: 64,
            frequency_scale: 1.0,
            seed: 9,
        };
        let pop = make_rff_population_embedder(1.0, 2.0, &params, None).unwrap();
        for (a, b) in pop.real.frequencies.iter().zip(&pop.fake.frequencies) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(pop.real.phases, pop.fake.phases);
        assert!(make_rff_population_embedder(2.0, 1.0, &params, None).is_err());
        assert!(make_rff_population_embedder(0.0, 1.0, &params, None).is_err());
    }

    #[test]
    fn rff_kernel_identity_under_gaussian_noise() {
        // n=16, k=1, lambda=0.25: mean similarity ~= exp(-0.5)
        let e = RffEmbedder::new(
            RffParams {
                input_dim: 16,
                output_dim: 2048,
                frequency_scale: 1.0,
                seed: 4,
            },
            Some(shape()),
        )
        .unwrap();
        let x = ImageTensor::filled(4, 4, 0.5).unwrap();
        let base = e.embed_one(&x).unwrap();
        let spec = NoiseSpec::gaussian(0.25, 1).unwrap();
        let mean = (0..500)
            .map(|i| {
                let y = perturb(&x, &spec, i).unwrap();
                cosine_similarity(&base, &e.embed_one(&y).unwrap()).unwrap()
            })
            .sum::<f64>()
            / 500.0;
        assert!((mean - (-0.5f64).exp()).abs() < 0.05, "{mean}");
    }
}
