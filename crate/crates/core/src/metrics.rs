//! Rank-based ROC AUC, non-interpolated Average Precision, and per-generator
//! evaluation reports. Generated images are the positive class and scores are
//! oriented so that higher means more likely generated.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{detect, QUANTILE_CONVENTION};
use crate::error::{Error, Result};
use crate::types::{Label, ScoreRecord};

fn class_counts(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let n_fake = labels.iter().filter(|&&l| l == Label::Fake).count();
    let n_real = labels.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::SingleClass { n_real, n_fake });
    }
    Ok((n_real, n_fake))
}

/// Mann-Whitney AUC: `(#(fake > real) + 0.5 #(ties)) / (n_fake n_real)`,
/// computed from midranks in `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (n_real, n_fake) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based midranks of the positives, doubled to stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the midrank (i + 1 + j) / 2
        let twice_midrank = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k] == Label::Fake).count() as u128;
        twice_rank_sum += twice_midrank * positives;
        i = j;
    }
    let p = n_fake as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * n_fake as f64 * n_real as f64))
}

/// `sum_n (R_n - R_{n-1}) P_n` over a descending-score sweep; samples with
/// equal scores enter the sweep together.
pub fn average_precision(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (_, n_fake) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut block_tp = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == Label::Fake {
                block_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += block_tp;
        if block_tp > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            ap += block_tp as f64 / n_fake as f64 * precision;
        }
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetrics {
    pub auc: f64,
    pub ap: f64,
    pub n_fake: usize,
    /// Fraction of this generator's images classified fake at `epsilon_used`.
    pub tpr: Option<f64>,
    /// Accuracy over the shared real pool plus this generator's images.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_generator: BTreeMap<String, GeneratorMetrics>,
    pub n_real: usize,
    pub average_auc: f64,
    pub average_ap: f64,
    pub epsilon_used: Option<f64>,
    /// Fraction of real images classified real at `epsilon_used`.
    pub real_tnr: Option<f64>,
    pub average_accuracy: Option<f64>,
    pub quantile_convention: String,
    pub config_digest: String,
}

impl EvalReport {
    /// `generator,auc,ap,n` rows plus a final `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("generator,auc,ap,n\n");
        for (name, m) in &self.per_generator {
            writeln!(out, "{name},{},{},{}", m.auc, m.ap, m.n_fake).expect("write to string");
        }
        let n: usize = self.per_generator.values().map(|m| m.n_fake).sum();
        writeln!(out, "average,{},{},{n}", self.average_auc, self.average_ap).expect("write to string");
        out
    }
}

fn detection_scores(similarities: &[f64]) -> Vec<f64> {
    similarities.iter().map(|s| 1.0 - s).collect()
}

fn fraction_fake(similarities: &[f64], epsilon: f64) -> Result<f64> {
    let mut fake = 0usize;
    for &s in similarities {
        if detect(s, Some(epsilon))? == Label::Fake {
            fake += 1;
        }
    }
    Ok(fake as f64 / similarities.len() as f64)
}

/// Evaluates every generator against the same pool of real images.
///
/// Inputs are similarities; ranking uses `detection_score = 1 - similarity`.
pub fn evaluate(
    real_similarities: &[f64],
    fake_similarities_by_generator: &BTreeMap<String, Vec<f64>>,
    epsilon: Option<f64>,
    config_digest: &str,
) -> Result<EvalReport> {
    if real_similarities.is_empty() {
        return Err(Error::InvalidParameter("no real samples to evaluate".into()));
    }
    if fake_similarities_by_generator.is_empty() {
        return Err(Error::InvalidParameter("no generated samples to evaluate".into()));
    }
    let real_scores = detection_scores(real_similarities);
    let real_tnr = epsilon
        .map(|eps| fraction_fake(real_similarities, eps).map(|f| 1.0 - f))
        .transpose()?;

    let mut per_generator = BTreeMap::new();
    for (name, fakes) in fake_similarities_by_generator {
        if fakes.is_empty() {
            return Err(Error::InvalidParameter(format!("generator `{name}` has no samples")));
        }
        let mut scores = real_scores.clone();
        scores.extend(detection_scores(fakes));
        let mut labels = vec![Label::Real; real_scores.len()];
        labels.resize(scores.len(), Label::Fake);

        let (tpr, accuracy) = match (epsilon, real_tnr) {
            (Some(eps), Some(tnr)) => {
                let tpr = fraction_fake(fakes, eps)?;
                let correct = tnr * real_scores.len() as f64 + tpr * fakes.len() as f64;
                (Some(tpr), Some(correct / scores.len() as f64))
            }
            _ => (None, None),
        };
        per_generator.insert(
            name.clone(),
            GeneratorMetrics {
                auc: roc_auc(&scores, &labels)?,
                ap: average_precision(&scores, &labels)?,
                n_fake: fakes.len(),
                tpr,
                accuracy,
            },
        );
    }
    let count = per_generator.len() as f64;
    let mean = |f: fn(&GeneratorMetrics) -> f64| per_generator.values().map(f).sum::<f64>() / count;
    let average_accuracy = epsilon.map(|_| per_generator.values().filter_map(|m| m.accuracy).sum::<f64>() / count);
    Ok(EvalReport {
        average_auc: mean(|m| m.auc),
        average_ap: mean(|m| m.ap),
        per_generator,
        n_real: real_similarities.len(),
        epsilon_used: epsilon,
        real_tnr,
        average_accuracy,
        quantile_convention: QUANTILE_CONVENTION.to_string(),
        config_digest: config_digest.to_string(),
    })
}

/// Groups score records by label and generator, then calls [`evaluate`].
pub fn evaluate_records(records: &[ScoreRecord], epsilon: Option<f64>, config_digest: &str) -> Result<EvalReport> {
    let mut real = Vec::new();
    let mut fakes: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        match r.label {
            Label::Real => real.push(r.similarity),
            Label::Fake => fakes.entry(r.generator.clone()).or_default().push(r.similarity),
        }
    }
    evaluate(&real, &fakes, epsilon, config_digest)
}
