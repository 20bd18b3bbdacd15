use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::detector::{DetectorConfig, DEFAULT_TARGET_TNR};
use crate::embedder::{EmbedderConfig, EmbedderKind, PreprocessSidecar};
use crate::error::{Error, Result};

/// File name of the preprocessing sidecar looked up next to a model file.
pub const SIDECAR_FILE: &str = "preprocess.json";
/// Resolved configuration written next to every run's outputs.
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

/// Everything that determines a run. Loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_real: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_fake: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub target_tnr: f64,
    pub embedder: EmbedderConfig,
    pub detector: DetectorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest_real: None,
            manifest_fake: None,
            output_dir: PathBuf::from("out"),
            target_tnr: DEFAULT_TARGET_TNR,
            embedder: EmbedderConfig::default(),
            detector: DetectorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative paths are taken relative to the file's
    /// directory, and a model's preprocessing sidecar is applied if present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.rebase(base);
        cfg.apply_sidecar()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.manifest_real.as_mut() {
            fix(p);
        }
        if let Some(p) = self.manifest_fake.as_mut() {
            fix(p);
        }
        if let Some(p) = self.embedder.model_path.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Overlays `preprocess.json` from the model's directory, if one exists.
    pub fn apply_sidecar(&mut self) -> Result<()> {
        if self.embedder.kind != EmbedderKind::ModelFile {
            return Ok(());
        }
        let Some(model) = &self.embedder.model_path else {
            return Ok(());
        };
        let sidecar = model.with_file_name(SIDECAR_FILE);
        if sidecar.is_file() {
            let s = PreprocessSidecar::load(&sidecar)?;
            self.embedder = self.embedder.clone().with_sidecar(&s);
        }
        Ok(())
    }

    /// Checks parameters and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.detector.validate()?;
        if !(self.target_tnr > 0.0 && self.target_tnr < 1.0) {
            return Err(Error::Config(format!(
                "target_tnr must lie in (0, 1), got {}",
                self.target_tnr
            )));
        }
        let files = [
            ("manifest_real", self.manifest_real.as_ref()),
            ("manifest_fake", self.manifest_fake.as_ref()),
            ("embedder.model_path", self.embedder.model_path.as_ref()),
        ];
        for (name, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!("{name}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form (keys sorted at every level).
    pub fn digest(&self) -> Result<String> {
        let canonical = canonicalize(serde_json::to_value(self)?);
        let bytes = serde_json::to_vec(&canonical)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Writes the resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let text = format!("# digest = \"{}\"\n{}", self.digest()?, self.to_toml_string()?);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::NoiseDistribution;

    #[test]
    fn defaults_follow_reference_setup() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.detector.noise.lambda, 0.05);
        assert_eq!(cfg.detector.noise.distribution, NoiseDistribution::Gaussian);
        assert_eq!(cfg.embedder.embedding_dim, 1024);
        assert_eq!(cfg.target_tnr, 0.95);
    }

    #[test]
    fn partial_tables_parse() {
        let cfg = RunConfig::from_toml_str(
            "target_tnr = 0.9\n[embedder]\nkind = \"rff_synthetic\"\ninput_size = 8\nresize_short_side = 8\n\
             [embedder.synthetic]\nfrequency_scale = 2.0\n[detector.noise]\nlambda = 0.1\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.embedder.kind, EmbedderKind::RffSynthetic);
        assert_eq!(cfg.embedder.synthetic.frequency_scale, 2.0);
        assert_eq!(cfg.detector.noise.lambda, 0.1);
        assert_eq!(cfg.detector.noise.seed, 3);
        assert_eq!(cfg.detector.num_noise_samples, 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("lamda = 0.1\n").is_err());
        assert!(RunConfig::from_toml_str("[detector.noise]\nlamda = 0.1\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.manifest_real = Some(PathBuf::from("/m/real.csv"));
        cfg.detector.epsilon = Some(0.93);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn digest_tracks_every_field() {
        let base = RunConfig::default();
        let d0 = base.digest().unwrap();
        assert_eq!(d0.len(), 64);
        assert_eq!(d0, RunConfig::default().digest().unwrap());
        let mut variants = Vec::new();
        let mut c = base.clone();
        c.detector.noise.seed = 1;
        variants.push(c);
        let mut c = base.clone();
        c.detector.noise.lambda = 0.0500001;
        variants.push(c);
        let mut c = base.clone();
        c.embedder.synthetic.seed = 9;
        variants.push(c);
        let mut c = base.clone();
        c.target_tnr = 0.9;
        variants.push(c);
        let mut c = base.clone();
        c.detector.num_noise_samples = 2;
        variants.push(c);
        for v in variants {
            assert_ne!(v.digest().unwrap(), d0);
        }
    }

    #[test]
    fn load_rebases_and_applies_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("model")).unwrap();
        std::fs::write(dir.path().join("model/net.onnx"), b"").unwrap();
        std::fs::write(
            dir.path().join("model/preprocess.json"),
            r#"{"input_size":32,"resize_short_side":36,"norm_mean":[0.5,0.5,0.5],
                "norm_std":[0.25,0.25,0.25],"embedding_dim":16,"pooling":"mean_pool"}"#,
        )
        .unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "output_dir = \"results\"\n[embedder]\nmodel_path = \"model/net.onnx\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("results"));
        assert_eq!(
            cfg.embedder.model_path.as_deref(),
            Some(dir.path().join("model/net.onnx").as_path())
        );
        assert_eq!(cfg.embedder.input_size, 32);
        assert_eq!(cfg.embedder.embedding_dim, 16);
        cfg.validate().unwrap();

        let written = cfg.write_resolved(&cfg.output_dir).unwrap();
        let again = RunConfig::from_toml_str(&std::fs::read_to_string(written).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn validation_reports_missing_files() {
        let mut cfg = RunConfig::default();
        cfg.embedder.model_path = Some(PathBuf::from("/nonexistent/model.onnx"));
        let err = cfg.validate().unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("model_path"));
    }
}
