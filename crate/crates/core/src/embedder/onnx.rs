//! ONNX backend. Graph contract: `N x 3 x H x W` float32 (normalized) in,
//! `N x d` float32 out, pooling already inside the graph.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use tract_onnx::prelude::*;

use super::{check_geometry, Embedder, EmbedderConfig};
use crate::error::{Error, Result};
use crate::types::{Embedding, ImageTensor, TensorShape, CHANNELS};

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxEmbedder {
    path: PathBuf,
    plan: Plan,
    shape: TensorShape,
    embedding_dim: usize,
    mean: [f32; 3],
    std: [f32; 3],
}

impl fmt::Debug for OnnxEmbedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OnnxEmbedder")
            .field("path", &self.path)
            .field("shape", &self.shape)
            .field("embedding_dim", &self.embedding_dim)
            .finish()
    }
}

fn model_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Model(format!("{}: {e}", path.display()))
}

impl OnnxEmbedder {
    pub fn load(config: &EmbedderConfig) -> Result<Self> {
        let path = config
            .model_path
            .clone()
            .ok_or_else(|| Error::Config("model_file embedder needs model_path".into()))?;
        if !path.is_file() {
            return Err(Error::Model(format!("model file {} not found", path.display())));
        }
        let shape = config.input_shape();
        let plan = tract_onnx::onnx()
            .model_for_path(&path)
            .and_then(|m| {
                m.with_input_fact(
                    0,
                    InferenceFact::dt_shape(DatumType::F32, [1, CHANNELS, shape.height, shape.width]),
                )
            })
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| model_err(&path, e))?;
        let embedder = Self {
            path,
            plan,
            shape,
            embedding_dim: config.embedding_dim,
            mean: config.norm_mean.map(|v| v as f32),
            std: config.norm_std.map(|v| v as f32),
        };
        // Fail at load time on a graph whose output width disagrees with the config.
        embedder.run_one(&ImageTensor::filled(shape.height, shape.width, 0.5)?)?;
        Ok(embedder)
    }

    fn run_one(&self, x: &ImageTensor) -> Result<Embedding> {
        let plane = x.height() * x.width();
        let input: Vec<f32> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / plane;
                (v - self.mean[c]) / self.std[c]
            })
            .collect();
        let tensor =
            Tensor::from_shape(&[1, CHANNELS, x.height(), x.width()], &input).map_err(|e| model_err(&self.path, e))?;
        let outputs = self
            .plan
            .run(tvec!(tensor.into()))
            .map_err(|e| model_err(&self.path, e))?;
        let output = outputs
            .first()
            .ok_or_else(|| model_err(&self.path, "graph produced no output"))?;
        let view = output
            .to_plain_array_view::<f32>()
            .map_err(|e| model_err(&self.path, e))?;
        let values: Vec<f64> = view.iter().map(|&v| v as f64).collect();
        if values.len() != self.embedding_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embedding_dim,
                actual: values.len(),
            });
        }
        Embedding::new(values)
    }
}

impl Embedder for OnnxEmbedder {
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn input_shape(&self) -> Option<TensorShape> {
        Some(self.shape)
    }

    fn embed(&self, batch: &[ImageTensor]) -> Result<Vec<Embedding>> {
        check_geometry(Some(self.shape), batch)?;
        batch.par_iter().map(|x| self.run_one(x)).collect()
    }
}
