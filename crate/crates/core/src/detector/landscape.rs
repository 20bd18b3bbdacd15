//! Mean cosine similarity between `f(x)` and `f(x + alpha u + beta v)` over a
//! grid of `(alpha, beta)`, for two fixed random directions `u` and `v`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::perturbation::{standard_draws, NoiseDistribution};
use crate::types::{cosine_similarity, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSpec {
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub step: f64,
    pub direction_seed: u64,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        Self {
            alpha_range: (-0.5, 0.5),
            beta_range: (-0.5, 0.5),
            step: 0.01,
            direction_seed: 0,
        }
    }
}

impl LandscapeSpec {
    /// Grid coordinates are integer multiples of `step`, so zero is hit exactly
    /// whenever the range contains it.
    fn axis(range: (f64, f64), step: f64) -> Result<Vec<f64>> {
        let (lo, hi) = range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad landscape range ({lo}, {hi})")));
        }
        let first = (lo / step - 1e-9).ceil() as i64;
        let last = (hi / step + 1e-9).floor() as i64;
        if last < first {
            return Err(Error::InvalidParameter(format!(
                "range ({lo}, {hi}) contains no multiple of step {step}"
            )));
        }
        Ok((first..=last).map(|i| i as f64 * step).collect())
    }

    pub fn alphas(&self) -> Result<Vec<f64>> {
        self.check_step()?;
        Self::axis(self.alpha_range, self.step)
    }

    pub fn betas(&self) -> Result<Vec<f64>> {
        self.check_step()?;
        Self::axis(self.beta_range, self.step)
    }

    fn check_step(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "landscape step must be > 0, got {}",
                self.step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `values[i][j]` is the mean similarity at `(alphas[i], betas[j])`.
    pub values: Vec<Vec<f64>>,
    pub direction_seed: u64,
}

impl LandscapeGrid {
    pub fn value_at(&self, alpha: f64, beta: f64) -> Option<f64> {
        let i = self.alphas.iter().position(|&a| a == alpha)?;
        let j = self.betas.iter().position(|&b| b == beta)?;
        Some(self.values[i][j])
    }

    /// Header row of betas, then one row per alpha.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha\\beta");
        for b in &self.betas {
            write!(out, ",{b}").expect("write to string");
        }
        out.push('\n');
        for (a, row) in self.alphas.iter().zip(&self.values) {
            write!(out, "{a}").expect("write to string");
            for v in row {
                write!(out, ",{v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

/// Direction with zero mean and unit per-component (population) variance.
pub(crate) fn standardized_direction(seed: u64, stream: u64, len: usize) -> Vec<f32> {
    let raw = standard_draws(NoiseDistribution::Gaussian, seed, stream, len);
    let n = len as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    raw.into_iter().map(|v| ((v - mean) / sd) as f32).collect()
}

pub fn landscape(xs: &[ImageTensor], embedder: &dyn Embedder, spec: &LandscapeSpec) -> Result<LandscapeGrid> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidParameter("landscape needs at least one image".into()))?;
    if xs.iter().any(|x| x.shape() != first.shape()) {
        return Err(Error::InvalidShape("landscape images must share one geometry".into()));
    }
    let alphas = spec.alphas()?;
    let betas = spec.betas()?;
    let len = first.len();
    let u = standardized_direction(spec.direction_seed, 0, len);
    let v = standardized_direction(spec.direction_seed, 1, len);
    let bases = embedder.embed(xs)?;

    let cells: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|i| (0..betas.len()).map(move |j| (i, j)))
        .collect();
    let flat = cells
        .par_iter()
        .map(|&(i, j)| -> Result<f64> {
            let (a, b) = (alphas[i] as f32, betas[j] as f32);
            let direction: Vec<f32> = u.iter().zip(&v).map(|(&ui, &vi)| a * ui + b * vi).collect();
            let moved = xs
                .iter()
                .map(|x| x.displaced(&direction, 1.0))
                .collect::<Result<Vec<_>>>()?;
            let mut sims = embedder
                .embed(&moved)?
                .iter()
                .zip(&bases)
                .map(|(e, base)| cosine_similarity(e, base))
                .collect::<Result<Vec<_>>>()?;
            // Sorted summation: the mean does not depend on the order of `xs`.
            sims.sort_by(f64::total_cmp);
            Ok(sims.iter().sum::<f64>() / sims.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let values = flat.chunks(betas.len()).map(<[f64]>::to_vec).collect();
    Ok(LandscapeGrid {
        alphas,
        betas,
        values,
        direction_seed: spec.direction_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{RffEmbedder, RffParams};
    use crate::types::TensorShape;

    #[test]
    fn default_axes_have_101_points_with_exact_zero() {
        let spec = LandscapeSpec::default();
        let a = spec.alphas().unwrap();
        assert_eq!(a.len(), 101);
        assert_eq!(a[50], 0.0);
        assert_eq!(a[0], -0.5);
        assert_eq!(a[100], 0.5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn direction_is_standardized() {
        let d = standardized_direction(3, 0, 4096);
        let n = d.len() as f64;
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    fn small_setup() -> (Vec<ImageTensor>, RffEmbedder, LandscapeSpec) {
        let shape = TensorShape::new(4, 4).unwrap();
        let e = RffEmbedder::new(
            RffParams {
                input_dim: 48,
                output_dim: 256,
                frequency_scale: 0.5,
                seed: 2,
            },
            Some(shape),
        )
        .unwrap();
        let xs = (0..3)
            .map(|i| ImageTensor::filled(4, 4, 0.2 * i as f32 + 0.1).unwrap())
            .collect();
        let spec = LandscapeSpec {
            alpha_range: (-0.1, 0.1),
            beta_range: (-0.05, 0.1),
            step: 0.05,
            direction_seed: 4,
        };
        (xs, e, spec)
    }

    #[test]
    fn origin_is_exactly_one_and_values_bounded() {
        let (xs, e, spec) = small_setup();
        let grid = landscape(&xs, &e, &spec).unwrap();
        assert_eq!(grid.alphas.len(), 5);
        assert_eq!(grid.betas.len(), 4);
        assert_eq!(grid.value_at(0.0, 0.0), Some(1.0));
        assert!(grid.values.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn invariant_to_image_order() {
        let (mut xs, e, spec) = small_setup();
        let a = landscape(&xs, &e, &spec).unwrap();
        xs.reverse();
        let b = landscape(&xs, &e, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let grid = LandscapeGrid {
            alphas: vec![-0.1, 0.0],
            betas: vec![0.0, 0.1, 0.2],
            values: vec![vec![0.9, 0.8, 0.7], vec![1.0, 0.95, 0.85]],
            direction_seed: 0,
        };
        assert_eq!(
            grid.to_csv(),
            "alpha\\beta,0,0.1,0.2\n-0.1,0.9,0.8,0.7\n0,1,0.95,0.85\n"
        );
    }

    #[test]
    fn rejects_bad_specs() {
        let (xs, e, mut spec) = small_setup();
        spec.step = 0.0;
        assert!(landscape(&xs, &e, &spec).is_err());
        assert!(landscape(&[], &e, &LandscapeSpec::default()).is_err());
    }
}
