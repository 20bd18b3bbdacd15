//! Feature extractors.
//!
//! Every backend implements [`Embedder`]: a batch of model-geometry tensors in
//! `[0, 1]` pixel space goes in, one embedding per tensor comes out. Channel
//! normalization happens inside the backend, after any perturbation has been
//! applied.

mod preprocess;
mod synthetic;

#[cfg(feature = "onnx")]
mod onnx;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Embedding, ImageTensor, Label, TensorShape};

pub use preprocess::{preprocess, preprocess_tensor, rgb_to_tensor, tensor_to_rgb};
pub use synthetic::{make_rff_population_embedder, LinearEmbedder, RffEmbedder, RffParams, RffPopulation};

#[cfg(feature = "onnx")]
pub use onnx::OnnxEmbedder;

pub trait Embedder: Send + Sync + fmt::Debug {
    fn embedding_dim(&self) -> usize;

    /// Geometry the backend requires, if any.
    fn input_shape(&self) -> Option<TensorShape> {
        None
    }

    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Embedding>>;

    fn embed_one(&self, x: &ImageTensor) -> Result<Embedding> {
        let mut out = self.embed(std::slice::from_ref(x))?;
        out.pop()
            .ok_or_else(|| Error::Model("backend returned no embedding".into()))
    }
}

pub(crate) fn check_geometry(expected: Option<TensorShape>, batch: &[ImageTensor]) -> Result<()> {
    if let Some(shape) = expected {
        if let Some(bad) = batch.iter().find(|x| x.shape() != shape) {
            return Err(Error::InvalidShape(format!(
                "embedder expects {}x{}, got {}x{}",
                shape.height,
                shape.width,
                bad.height(),
                bad.width()
            )));
        }
    }
    Ok(())
}

/// The feature extractor used for a run. Synthetic two-population testbeds
/// pick a different extractor per label; real backbones share one.
#[derive(Debug, Clone)]
pub enum Backbone {
    Shared(Arc<dyn Embedder>),
    ByLabel {
        real: Arc<dyn Embedder>,
        fake: Arc<dyn Embedder>,
    },
}

impl Backbone {
    pub fn shared(embedder: impl Embedder + 'static) -> Self {
        Backbone::Shared(Arc::new(embedder))
    }

    pub fn for_label(&self, label: Label) -> &dyn Embedder {
        match (self, label) {
            (Backbone::Shared(e), _) => e.as_ref(),
            (Backbone::ByLabel { real, .. }, Label::Real) => real.as_ref(),
            (Backbone::ByLabel { fake, .. }, Label::Fake) => fake.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    ModelFile,
    LinearSynthetic,
    RffSynthetic,
}

/// Informational: pooling is baked into exported model graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClassToken,
    MeanPool,
}

/// Parameters for the synthetic backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Leading tensor components the embedder reads; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    /// RFF frequency scale `k` (used for real samples when `frequency_scale_fake` is set).
    #[serde(default = "default_frequency_scale")]
    pub frequency_scale: f64,
    /// Separate scale for samples labelled fake; turns the RFF backend into a
    /// two-population testbed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_scale_fake: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_frequency_scale() -> f64 {
    1.0
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            input_dim: None,
            frequency_scale: 1.0,
            frequency_scale_fake: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub input_size: usize,
    pub resize_short_side: usize,
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
    pub embedding_dim: usize,
    pub pooling: Pooling,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

impl Default for EmbedderConfig {
    /// DINOv2 ViT-L/14 exported with class-token pooling.
    fn default() -> Self {
        Self {
            kind: EmbedderKind::ModelFile,
            model_path: None,
            input_size: 224,
            resize_short_side: 256,
            norm_mean: [0.485, 0.456, 0.406],
            norm_std: [0.229, 0.224, 0.225],
            embedding_dim: 1024,
            pooling: Pooling::ClassToken,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl EmbedderConfig {
    /// Config for a synthetic backend working on `size`x`size` tensors with no
    /// resize or normalization.
    pub fn synthetic(kind: EmbedderKind, size: usize, embedding_dim: usize, synthetic: SyntheticConfig) -> Self {
        Self {
            kind,
            model_path: None,
            input_size: size,
            resize_short_side: size,
            norm_mean: [0.0; 3],
            norm_std: [1.0; 3],
            embedding_dim,
            pooling: Pooling::MeanPool,
            synthetic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be > 0".into()));
        }
        if self.input_size > self.resize_short_side {
            return Err(Error::Config(format!(
                "input_size {} exceeds resize_short_side {}",
                self.input_size, self.resize_short_side
            )));
        }
        if self.norm_std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("norm_std components must be > 0".into()));
        }
        if self.norm_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("norm_mean must be finite".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be > 0".into()));
        }
        let syn = &self.synthetic;
        match self.kind {
            EmbedderKind::ModelFile => {
                if self.model_path.is_none() {
                    return Err(Error::Config("model_file embedder needs model_path".into()));
                }
            }
            EmbedderKind::LinearSynthetic | EmbedderKind::RffSynthetic => {
                let numel = self.input_shape().len();
                if let Some(n) = syn.input_dim {
                    if n == 0 || n > numel {
                        return Err(Error::Config(format!("synthetic input_dim {n} must be in 1..={numel}")));
                    }
                }
                if !(syn.frequency_scale > 0.0 && syn.frequency_scale.is_finite()) {
                    return Err(Error::Config("frequency_scale must be > 0".into()));
                }
                if let Some(kf) = syn.frequency_scale_fake {
                    if self.kind != EmbedderKind::RffSynthetic {
                        return Err(Error::Config(
                            "frequency_scale_fake is only meaningful for rff_synthetic".into(),
                        ));
                    }
                    if !(kf >= syn.frequency_scale && kf.is_finite()) {
                        return Err(Error::Config(format!(
                            "frequency_scale_fake ({kf}) must be >= frequency_scale ({})",
                            syn.frequency_scale
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> TensorShape {
        TensorShape {
            height: self.input_size,
            width: self.input_size,
        }
    }

    /// Overlays the preprocessing sidecar written by the model exporter.
    pub fn with_sidecar(mut self, sidecar: &PreprocessSidecar) -> Self {
        self.input_size = sidecar.input_size;
        self.resize_short_side = sidecar.resize_short_side;
        self.norm_mean = sidecar.norm_mean;
        self.norm_std = sidecar.norm_std;
        self.embedding_dim = sidecar.embedding_dim;
        self.pooling = sidecar.pooling;
        self
    }
}

/// `preprocess.json`, emitted next to an exported model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSidecar {
    pub input_size: usize,
    pub resize_short_side: usize,
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
    pub embedding_dim: usize,
    pub pooling: Pooling,
}

impl PreprocessSidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Instantiates the backend described by `config`.
pub fn build_backbone(config: &EmbedderConfig) -> Result<Backbone> {
    config.validate()?;
    let shape = config.input_shape();
    let syn = &config.synthetic;
    let input_dim = syn.input_dim.unwrap_or(shape.len());
    match config.kind {
        EmbedderKind::LinearSynthetic => Ok(Backbone::shared(LinearEmbedder::random(
            shape,
            input_dim,
            config.embedding_dim,
            syn.seed,
        )?)),
        EmbedderKind::RffSynthetic => {
            let params = RffParams {
                input_dim,
                output_dim: config.embedding_dim,
                frequency_scale: syn.frequency_scale,
                seed: syn.seed,
            };
            match syn.frequency_scale_fake {
                None => Ok(Backbone::shared(RffEmbedder::new(params, Some(shape))?)),
                Some(k_fake) => Ok(
                    make_rff_population_embedder(syn.frequency_scale, k_fake, &params, Some(shape))?.into_backbone(),
                ),
            }
        }
        EmbedderKind::ModelFile => build_model_file(config),
    }
}

#[cfg(feature = "onnx")]
fn build_model_file(config: &EmbedderConfig) -> Result<Backbone> {
    Ok(Backbone::shared(OnnxEmbedder::load(config)?))
}

#[cfg(not(feature = "onnx"))]
fn build_model_file(_config: &EmbedderConfig) -> Result<Backbone> {
    Err(Error::Model("built without the `onnx` feature".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_dinov2_large() {
        let cfg = EmbedderConfig::default();
        assert_eq!(cfg.input_size, 224);
        assert_eq!(cfg.resize_short_side, 256);
        assert_eq!(cfg.embedding_dim, 1024);
        assert_eq!(cfg.pooling, Pooling::ClassToken);
    }

    #[test]
    fn validation() {
        let mut cfg = EmbedderConfig::default();
        assert!(cfg.validate().is_err(), "model path required");
        cfg.model_path = Some("m.onnx".into());
        cfg.validate().unwrap();
        cfg.input_size = 300;
        assert!(cfg.validate().is_err());
        cfg.input_size = 224;
        cfg.norm_std[1] = 0.0;
        assert!(cfg.validate().is_err());

        let mut syn = EmbedderConfig::synthetic(EmbedderKind::RffSynthetic, 4, 64, SyntheticConfig::default());
        syn.validate().unwrap();
        syn.synthetic.input_dim = Some(49);
        assert!(syn.validate().is_err());
        syn.synthetic.input_dim = Some(16);
        syn.synthetic.frequency_scale_fake = Some(0.5);
        assert!(syn.validate().is_err(), "k_fake < k_real");
    }

    #[test]
    fn sidecar_round_trip() {
        let json = r#"{"input_size": 224, "resize_short_side": 256,
            "norm_mean": [0.485, 0.456, 0.406], "norm_std": [0.229, 0.224, 0.225],
            "embedding_dim": 768, "pooling": "class_token"}"#;
        let sidecar: PreprocessSidecar = serde_json::from_str(json).unwrap();
        let cfg = EmbedderConfig::default().with_sidecar(&sidecar);
        assert_eq!(cfg.embedding_dim, 768);
    }

    #[test]
    fn population_backbone_dispatches_by_label() {
        let cfg = EmbedderConfig::synthetic(
            EmbedderKind::RffSynthetic,
            4,
            32,
            SyntheticConfig {
                frequency_scale_fake: Some(2.0),
                ..SyntheticConfig::default()
            },
        );
        let backbone = build_backbone(&cfg).unwrap();
        let x = ImageTensor::filled(4, 4, 0.3).unwrap();
        let r = backbone.for_label(Label::Real).embed_one(&x).unwrap();
        let f = backbone.for_label(Label::Fake).embed_one(&x).unwrap();
        assert_ne!(r, f);
    }
}
