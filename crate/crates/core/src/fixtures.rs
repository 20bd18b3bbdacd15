//! Deterministic synthetic datasets for the RFF two-population testbed.
//!
//! Expected statistics are computed in closed form from the spec, never by
//! running the pipeline.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::embedder::{EmbedderConfig, EmbedderKind, SyntheticConfig};
use crate::error::{Error, Result};
use crate::harness::{write_manifest, RunConfig};
use crate::perturbation::{stream_for_id, stream_rng, NoiseSpec};
use crate::types::{Label, SampleRecord, CHANNELS, REAL_GENERATOR};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const EXPECTED_FILE: &str = "expected.json";
pub const CONFIG_FILE: &str = "run.toml";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub n_real: usize,
    pub n_fake: usize,
    /// Tensor components the RFF embedder reads (`n`).
    pub image_dim: usize,
    /// Side of the square images written to disk.
    pub image_size: usize,
    pub k_real: f64,
    pub k_fake: f64,
    pub lambda: f64,
    pub embedding_dim: usize,
    pub generator: String,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            n_real: 100,
            n_fake: 100,
            image_dim: 16,
            image_size: 8,
            k_real: 1.0,
            k_fake: 2.0,
            lambda: 0.1,
            embedding_dim: 2048,
            generator: "rff".into(),
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if self.n_real == 0 || self.n_fake == 0 {
            return fail("fixture needs at least one real and one generated image".into());
        }
        if !(self.k_real > 0.0 && self.k_real.is_finite() && self.k_fake.is_finite() && self.k_fake >= self.k_real) {
            return fail(format!(
                "need 0 < k_real <= k_fake, got {} and {}",
                self.k_real, self.k_fake
            ));
        }
        let numel = CHANNELS * self.image_size * self.image_size;
        if self.image_dim == 0 || self.image_dim > numel {
            return fail(format!("image_dim {} must be in 1..={numel}", self.image_dim));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be > 0".into());
        }
        if self.generator.is_empty() || self.generator == REAL_GENERATOR {
            return fail(format!("invalid generator tag `{}`", self.generator));
        }
        Ok(())
    }

    /// Run config that scores this fixture with the matching RFF testbed.
    pub fn run_config(&self, dir: &Path) -> RunConfig {
        let synthetic = SyntheticConfig {
            input_dim: Some(self.image_dim),
            frequency_scale: self.k_real,
            frequency_scale_fake: (self.k_fake != self.k_real).then_some(self.k_fake),
            seed: self.seed,
        };
        RunConfig {
            manifest_real: Some(dir.join(MANIFEST_FILE)),
            manifest_fake: None,
            output_dir: dir.join("out"),
            embedder: EmbedderConfig::synthetic(
                EmbedderKind::RffSynthetic,
                self.image_size,
                self.embedding_dim,
                synthetic,
            ),
            detector: DetectorConfig::new(NoiseSpec {
                lambda: self.lambda,
                seed: self.seed,
                ..NoiseSpec::default()
            }),
            ..RunConfig::default()
        }
    }
}

/// Closed-form expectations for a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedStatistics {
    pub lambda: f64,
    pub image_dim: usize,
    pub k_real: f64,
    pub k_fake: f64,
    /// `exp(-k^2 lambda^2 n / 2)`.
    pub expected_similarity_real: f64,
    pub expected_similarity_fake: f64,
    /// Single-draw AUC in the infinite-feature limit, `P(F(n, n) < (k_fake/k_real)^2)`.
    /// Exactly 0.5 for equal scales; `None` for odd `n` with unequal scales.
    pub expected_auc: Option<f64>,
    /// Suggested absolute tolerance on the similarity means.
    pub similarity_tolerance: f64,
}

/// `exp(-k^2 lambda^2 n / 2)`: the RFF kernel at a displacement of squared
/// norm `lambda^2 n`.
pub fn kernel_similarity(k: f64, lambda: f64, n: usize) -> f64 {
    (-(k * k) * lambda * lambda * n as f64 / 2.0).exp()
}

/// `P(F < f)` for an F distribution with `(n, n)` degrees of freedom and even
/// `n`, via the finite binomial form of the regularized incomplete beta.
pub fn f_cdf_equal_even_df(n: usize, f: f64) -> Option<f64> {
    if n == 0 || n % 2 != 0 || !(f >= 0.0) {
        return None;
    }
    let a = n / 2;
    let m = 2 * a - 1;
    let x = f / (1.0 + f);
    if x >= 1.0 {
        return Some(1.0);
    }
    // I_x(a, a) = sum_{j=a}^{2a-1} C(2a-1, j) x^j (1-x)^(2a-1-j), in log space.
    let ln_choose = |k: usize| -> f64 { (1..=k).map(|i| ((m - k + i) as f64 / i as f64).ln()).sum() };
    let (lx, l1x) = (x.ln(), (1.0 - x).ln());
    let total = (a..=m)
        .map(|j| {
            let term = ln_choose(j) + j as f64 * lx + (m - j) as f64 * l1x;
            if term.is_nan() {
                0.0
            } else {
                term.exp()
            }
        })
        .sum::<f64>();
    Some(total.min(1.0))
}

impl ExpectedStatistics {
    pub fn for_spec(spec: &SyntheticDatasetSpec) -> Self {
        let n = spec.image_dim;
        let expected_auc = if spec.k_fake == spec.k_real {
            Some(0.5)
        } else {
            let r = spec.k_fake / spec.k_real;
            f_cdf_equal_even_df(n, r * r)
        };
        Self {
            lambda: spec.lambda,
            image_dim: n,
            k_real: spec.k_real,
            k_fake: spec.k_fake,
            expected_similarity_real: kernel_similarity(spec.k_real, spec.lambda, n),
            expected_similarity_fake: kernel_similarity(spec.k_fake, spec.lambda, n),
            expected_auc,
            similarity_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFixture {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub expected: PathBuf,
    pub config: PathBuf,
    pub records: Vec<SampleRecord>,
    pub statistics: ExpectedStatistics,
}

/// Writes PNG images, `manifest.csv`, `expected.json` and `run.toml` into
/// `dir`. Identical specs give byte-identical files.
pub fn generate_fixture(spec: &SyntheticDatasetSpec, dir: &Path) -> Result<GeneratedFixture> {
    spec.validate()?;
    let image_dir = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut records = Vec::with_capacity(spec.n_real + spec.n_fake);
    let plan = (0..spec.n_real)
        .map(|i| (format!("real_{i:05}"), Label::Real, REAL_GENERATOR))
        .chain((0..spec.n_fake).map(|i| (format!("fake_{i:05}"), Label::Fake, spec.generator.as_str())));
    let side = spec.image_size as u32;
    for (id, label, generator) in plan {
        let mut rng = stream_rng(spec.seed, stream_for_id(&format!("fixture/{id}")));
        let img = image::RgbImage::from_fn(side, side, |_, _| image::Rgb(rng.random::<[u8; 3]>()));
        let rel = format!("{IMAGE_DIR}/{id}.png");
        let path = dir.join(&rel);
        img.save_with_format(&path, image::ImageFormat::Png)?;
        records.push(SampleRecord::new(id, rel, label, generator)?);
    }

    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &records)?;

    let statistics = ExpectedStatistics::for_spec(spec);
    let expected = dir.join(EXPECTED_FILE);
    let mut json = serde_json::to_string_pretty(&statistics)?;
    json.push('\n');
    std::fs::write(&expected, json).map_err(|e| Error::io(&expected, e))?;

    let config = dir.join(CONFIG_FILE);
    let mut run = spec.run_config(Path::new(""));
    run.manifest_real = Some(PathBuf::from(MANIFEST_FILE));
    run.output_dir = PathBuf::from("out");
    std::fs::write(&config, run.to_toml_string()?).map_err(|e| Error::io(&config, e))?;

    Ok(GeneratedFixture {
        dir: dir.to_path_buf(),
        manifest,
        expected,
        config,
        records,
        statistics,
    })
}
