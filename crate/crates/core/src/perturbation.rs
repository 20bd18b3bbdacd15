//! Additive detection noise: unit-variance draws from one of four families,
//! scaled by the intensity `lambda`, reproducible from `(seed, stream)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{ImageTensor, TensorShape};

const GAMMA_SHAPE: f64 = 2.0;
const CHI_SQUARE_DF: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian,
    /// Location 0, scale `1/sqrt(2)`.
    Laplace,
    /// Shape 2, scale 1, standardized as `(raw - 2) / sqrt(2)`.
    Gamma,
    /// 4 degrees of freedom, standardized as `(raw - 4) / sqrt(8)`.
    ChiSquare,
}

impl NoiseDistribution {
    pub const ALL: [NoiseDistribution; 4] = [
        NoiseDistribution::Laplace,
        NoiseDistribution::Gamma,
        NoiseDistribution::ChiSquare,
        NoiseDistribution::Gaussian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseDistribution::Gaussian => "gaussian",
            NoiseDistribution::Laplace => "laplace",
            NoiseDistribution::Gamma => "gamma",
            NoiseDistribution::ChiSquare => "chi_square",
        }
    }
}

impl fmt::Display for NoiseDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "laplace" => Ok(Self::Laplace),
            "gamma" => Ok(Self::Gamma),
            "chi_square" | "chisquare" | "chi2" => Ok(Self::ChiSquare),
            other => Err(Error::InvalidParameter(format!("unknown noise distribution `{other}`"))),
        }
    }
}

/// Unit-variance, zero-mean sampler for one family.
#[derive(Debug, Clone, Copy)]
pub struct StandardizedNoise {
    family: NoiseDistribution,
    gamma: Gamma<f64>,
    chi_square: ChiSquared<f64>,
}

impl StandardizedNoise {
    pub fn new(family: NoiseDistribution) -> Self {
        Self {
            family,
            gamma: Gamma::new(GAMMA_SHAPE, 1.0).expect("valid gamma parameters"),
            chi_square: ChiSquared::new(CHI_SQUARE_DF).expect("valid chi-square parameters"),
        }
    }
}

impl Distribution<f64> for StandardizedNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseDistribution::Gaussian => rng.sample(StandardNormal),
            NoiseDistribution::Laplace => {
                let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                let scale = std::f64::consts::FRAC_1_SQRT_2;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseDistribution::Gamma => (self.gamma.sample(rng) - GAMMA_SHAPE) / GAMMA_SHAPE.sqrt(),
            NoiseDistribution::ChiSquare => {
                (self.chi_square.sample(rng) - CHI_SQUARE_DF) / (2.0 * CHI_SQUARE_DF).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    pub lambda: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(distribution: NoiseDistribution, lambda: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            distribution,
            lambda,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(lambda: f64, seed: u64) -> Result<Self> {
        Self::new(NoiseDistribution::Gaussian, lambda, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            distribution: NoiseDistribution::Gaussian,
            lambda: 0.05,
            seed: 0,
        }
    }
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"noiseprobe/stream");
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Stable stream index for a sample id.
pub fn stream_for_id(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Derives the stream of the `index`-th draw below a base stream (splitmix64).
pub fn substream(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Unscaled unit-variance draws, `len` of them.
pub fn standard_draws(distribution: NoiseDistribution, seed: u64, stream: u64, len: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let dist = StandardizedNoise::new(distribution);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

/// `lambda * delta` for a tensor of `shape`.
pub fn sample_noise(shape: TensorShape, spec: &NoiseSpec, stream: u64) -> Result<Vec<f32>> {
    spec.validate()?;
    TensorShape::new(shape.height, shape.width)?;
    if spec.lambda == 0.0 {
        return Ok(vec![0.0; shape.len()]);
    }
    Ok(standard_draws(spec.distribution, spec.seed, stream, shape.len())
        .into_iter()
        .map(|d| (spec.lambda * d) as f32)
        .collect())
}

/// `x + lambda * delta`, unclamped.
pub fn perturb(x: &ImageTensor, spec: &NoiseSpec, stream: u64) -> Result<ImageTensor> {
    let noise = sample_noise(x.shape(), spec, stream)?;
    x.displaced(&noise, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_lambda_is_zero_field_and_identity() {
        let shape = TensorShape::new(4, 5).unwrap();
        let spec = NoiseSpec::gaussian(0.0, 9).unwrap();
        assert!(sample_noise(shape, &spec, 3).unwrap().iter().all(|&v| v == 0.0));
        let x = ImageTensor::from_fn(4, 5, |c, y, x| (c + y + x) as f32 * 0.07).unwrap();
        let y = perturb(&x, &spec, 3).unwrap();
        assert_eq!(
            x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn gaussian_unit_moments() {
        let d = standard_draws(NoiseDistribution::Gaussian, 1, 0, 1_000_000);
        let (m, v) = moments(&d);
        assert!(m.abs() <= 0.01, "mean {m}");
        assert!((0.99..=1.01).contains(&v), "var {v}");
    }

    // 3-sigma bounds at 1e6 draws: sd(mean) = 1e-3, sd(var) = sqrt((kurtosis - 1) / n).
    // Laplace, Gamma(2) and ChiSq(4) all have kurtosis 6.
    #[test]
    fn every_family_is_standardized() {
        for (dist, kurtosis) in [
            (NoiseDistribution::Gaussian, 3.0),
            (NoiseDistribution::Laplace, 6.0),
            (NoiseDistribution::Gamma, 6.0),
            (NoiseDistribution::ChiSquare, 6.0),
        ] {
            let n = 1_000_000;
            let d = standard_draws(dist, 7, 11, n);
            let (m, v) = moments(&d);
            let var_bound = 3.0 * ((kurtosis - 1.0) / n as f64).sqrt();
            assert!(m.abs() <= 3e-3, "{dist}: mean {m}");
            assert!((v - 1.0).abs() <= var_bound, "{dist}: var {v} (bound {var_bound})");
        }
    }

    #[test]
    fn chi_square_standardization_matches_analytic_moments() {
        // raw ChiSq(4): mean 4, variance 8
        let mut rng = stream_rng(3, 0);
        let raw = ChiSquared::new(4.0).unwrap();
        let draws: Vec<f64> = (0..400_000).map(|_| raw.sample(&mut rng)).collect();
        let (m, v) = moments(&draws);
        assert!((m - 4.0).abs() < 0.03, "{m}");
        assert!((v - 8.0).abs() < 0.15, "{v}");
        let standardized = standard_draws(NoiseDistribution::ChiSquare, 3, 0, 400_000);
        let expected: Vec<f64> = draws.iter().map(|r| (r - 4.0) / 8f64.sqrt()).collect();
        assert_eq!(standardized, expected);
    }

    #[test]
    fn perturb_is_deterministic_and_scaled() {
        let x = ImageTensor::filled(100, 100, 0.5).unwrap();
        let spec = NoiseSpec::gaussian(0.05, 42).unwrap();
        let a = perturb(&x, &spec, 17).unwrap();
        let b = perturb(&x, &spec, 17).unwrap();
        assert_eq!(a, b);
        assert!(a.is_perturbed());
        assert_ne!(a, perturb(&x, &spec, 18).unwrap());
        let dev: Vec<f64> = a.data().iter().map(|&v| v as f64 - 0.5).collect();
        let (m, var) = moments(&dev);
        assert!(m.abs() < 0.05 * 0.05);
        let sd = var.sqrt();
        assert!((sd - 0.05).abs() <= 0.05 * 0.05, "sd {sd}");
    }

    #[test]
    fn perturb_does_not_clamp() {
        let x = ImageTensor::filled(32, 32, 0.99).unwrap();
        let spec = NoiseSpec::gaussian(0.25, 1).unwrap();
        let y = perturb(&x, &spec, 0).unwrap();
        assert!(y.data().iter().any(|&v| v > 1.0));
    }

    #[test]
    fn mean_shift_vanishes_for_all_families() {
        let x = ImageTensor::filled(200, 200, 0.5).unwrap();
        for dist in NoiseDistribution::ALL {
            let spec = NoiseSpec::new(dist, 0.1, 5).unwrap();
            let y = perturb(&x, &spec, 0).unwrap();
            let shift: f64 = y.data().iter().map(|&v| v as f64 - 0.5).sum::<f64>() / y.len() as f64;
            // 3 sigma of the mean: 3 * 0.1 / sqrt(120000)
            assert!(shift.abs() < 3.0 * 0.1 / (y.len() as f64).sqrt(), "{dist}: {shift}");
        }
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(NoiseSpec::gaussian(-0.1, 0).is_err());
        assert!(NoiseSpec::gaussian(f64::NAN, 0).is_err());
    }

    #[test]
    fn distribution_names_round_trip() {
        for d in NoiseDistribution::ALL {
            assert_eq!(d.as_str().parse::<NoiseDistribution>().unwrap(), d);
            let json = serde_json::to_string(&d).unwrap();
            assert_eq!(json, format!("\"{}\"", d.as_str()));
        }
    }
}
