//! Noise-intensity sweep and noise-distribution ablation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pipeline::{score_images, LoadedSample};
use crate::detector::DetectorConfig;
use crate::embedder::{Backbone, EmbedderConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_records, EvalReport};
use crate::perturbation::{NoiseDistribution, NoiseSpec};
use crate::types::{Label, ScoreRecord};

/// Lambda used by the distribution ablation.
pub const ABLATION_LAMBDA: f64 = 0.05;

/// `0.00, 0.01, ..., 0.30`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=30).map(|i| i as f64 / 100.0).collect()
}

fn mean_similarity(records: &[ScoreRecord], label: Label) -> f64 {
    let sims: Vec<f64> = records
        .iter()
        .filter(|r| r.label == label)
        .map(|r| r.similarity)
        .collect();
    sims.iter().sum::<f64>() / sims.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_similarity_real: f64,
    pub mean_similarity_fake: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub distribution: NoiseDistribution,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `lambda,auc,ap,mean_similarity_real,mean_similarity_fake`, metrics
    /// averaged over generators.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,auc,ap,mean_similarity_real,mean_similarity_fake\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.lambda, r.report.average_auc, r.report.average_ap, r.mean_similarity_real, r.mean_similarity_fake
            )
            .expect("write to string");
        }
        out
    }
}

/// Rescores every sample at each lambda, keeping distribution, seed and draw
/// count from `detector`.
pub fn sweep_lambda(
    samples: &[LoadedSample],
    backbone: &Backbone,
    embedder: &EmbedderConfig,
    detector: &DetectorConfig,
    lambdas: &[f64],
) -> Result<SweepTable> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut cfg = *detector;
        cfg.noise = NoiseSpec::new(detector.noise.distribution, lambda, detector.noise.seed)?;
        let records = score_images(samples, backbone, embedder, &cfg)?;
        let report = evaluate_records(&records, cfg.epsilon, "")?;
        log::info!("lambda {lambda}: average AUC {:.4}", report.average_auc);
        rows.push(SweepRow {
            lambda,
            mean_similarity_real: mean_similarity(&records, Label::Real),
            mean_similarity_fake: mean_similarity(&records, Label::Fake),
            report,
        });
    }
    Ok(SweepTable {
        distribution: detector.noise.distribution,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Ap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub distribution: NoiseDistribution,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub lambda: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One row per distribution, one column per generator plus `average`,
    /// values in percent.
    pub fn to_csv(&self, metric: Metric) -> String {
        let generators: Vec<String> = self
            .rows
            .first()
            .map(|r| r.report.per_generator.keys().cloned().collect())
            .unwrap_or_default();
        let mut out = String::from("distribution");
        for g in &generators {
            write!(out, ",{g}").expect("write to string");
        }
        out.push_str(",average\n");
        for row in &self.rows {
            out.push_str(row.distribution.as_str());
            for g in &generators {
                let m = &row.report.per_generator[g];
                let v = match metric {
                    Metric::Auc => m.auc,
                    Metric::Ap => m.ap,
                };
                write!(out, ",{:.2}", 100.0 * v).expect("write to string");
            }
            let avg = match metric {
                Metric::Auc => row.report.average_auc,
                Metric::Ap => row.report.average_ap,
            };
            writeln!(out, ",{:.2}", 100.0 * avg).expect("write to string");
        }
        out
    }
}

/// Scores every sample once per noise family at a fixed lambda.
pub fn ablate_noise(
    samples: &[LoadedSample],
    backbone: &Backbone,
    embedder: &EmbedderConfig,
    detector: &DetectorConfig,
    lambda: f64,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for distribution in NoiseDistribution::ALL {
        let mut cfg = *detector;
        cfg.noise = NoiseSpec::new(distribution, lambda, detector.noise.seed)?;
        let records = score_images(samples, backbone, embedder, &cfg)?;
        rows.push(AblationRow {
            distribution,
            report: evaluate_records(&records, cfg.epsilon, "")?,
        });
    }
    Ok(AblationTable { lambda, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{build_backbone, EmbedderKind, SyntheticConfig};
    use crate::types::{ImageTensor, SampleRecord};

    fn samples() -> Vec<LoadedSample> {
        (0..16)
            .map(|i| {
                let (label, gen) = if i % 2 == 0 {
                    (Label::Real, "real")
                } else {
                    (Label::Fake, "G")
                };
                LoadedSample {
                    record: SampleRecord::new(format!("s{i}"), format!("s{i}.png"), label, gen).unwrap(),
                    image: ImageTensor::from_fn(4, 4, |c, y, x| ((i * 7 + c * 3 + y * 5 + x) % 11) as f32 / 10.0)
                        .unwrap(),
                }
            })
            .collect()
    }

    fn backend() -> (Backbone, EmbedderConfig) {
        let cfg = EmbedderConfig::synthetic(
            EmbedderKind::RffSynthetic,
            4,
            128,
            SyntheticConfig {
                frequency_scale: 1.0,
                frequency_scale_fake: Some(4.0),
                ..SyntheticConfig::default()
            },
        );
        (build_backbone(&cfg).unwrap(), cfg)
    }

    #[test]
    fn grid_starts_at_zero_and_covers_moderate_range() {
        let g = default_lambda_grid();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[17], 0.17);
        assert_eq!(g.len(), 31);
    }

    #[test]
    fn sweep_at_zero_is_chance() {
        let (bb, emb) = backend();
        let det = DetectorConfig::default().with_draws(2);
        let t = sweep_lambda(&samples(), &bb, &emb, &det, &[0.0, 0.1]).unwrap();
        assert_eq!(t.rows[0].report.average_auc, 0.5);
        assert_eq!(t.rows[0].mean_similarity_real, 1.0);
        assert!(t.rows[1].mean_similarity_real > t.rows[1].mean_similarity_fake);
        let csv = t.to_csv();
        assert!(csv.starts_with("lambda,auc,ap,mean_similarity_real,mean_similarity_fake\n0,0.5,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn ablation_has_table_shape() {
        let (bb, emb) = backend();
        let t = ablate_noise(&samples(), &bb, &emb, &DetectorConfig::default(), ABLATION_LAMBDA).unwrap();
        let names: Vec<_> = t.rows.iter().map(|r| r.distribution).collect();
        assert_eq!(names, NoiseDistribution::ALL);
        let csv = t.to_csv(Metric::Ap);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "distribution,G,average");
        assert!(lines[1].starts_with("laplace,"));
        assert!(lines[4].starts_with("gaussian,"));
    }
}
