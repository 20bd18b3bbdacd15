use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TARGET_TNR: f64 = 0.95;
pub const MIN_CALIBRATION_SAMPLES: usize = 20;

/// Recorded in every calibration and report.
pub const QUANTILE_CONVENTION: &str = "lower-tail empirical quantile at 1-based rank h = m*(1-tnr), \
     linear interpolation between order statistics x(floor h) and x(floor h + 1), \
     clamped to x(1) when h < 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub epsilon: f64,
    pub target_tnr: f64,
    /// Fraction of the calibration set with similarity strictly above epsilon.
    pub achieved_tnr: f64,
    pub n_real: usize,
    pub quantile_convention: String,
}

/// Picks epsilon from real-image similarities only, so that at least
/// `target_tnr` of them score strictly above it.
///
/// With distinct values the fraction above epsilon lands in
/// `[target_tnr, target_tnr + 1/m)`. Ties at the quantile push samples into
/// the fake side: a set of identical similarities is classified all fake.
pub fn calibrate_threshold(real_similarities: &[f64], target_tnr: f64) -> Result<Calibration> {
    let m = real_similarities.len();
    if m < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} real similarities, got {m}"
        )));
    }
    if !(target_tnr > 0.0 && target_tnr < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target TNR must lie in (0, 1), got {target_tnr}"
        )));
    }
    if real_similarities.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration similarities"));
    }
    let mut sorted = real_similarities.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut rank = m as f64 * (1.0 - target_tnr);
    let nearest = rank.round();
    if (rank - nearest).abs() < 1e-9 * m as f64 {
        rank = nearest;
    }
    let lower = rank.floor();
    let epsilon = if lower < 1.0 {
        sorted[0]
    } else if lower as usize >= m {
        sorted[m - 1]
    } else {
        let j = lower as usize;
        let (lo, hi) = (sorted[j - 1], sorted[j]);
        let frac = rank - lower;
        if frac == 0.0 {
            lo
        } else {
            lo + frac * (hi - lo)
        }
    };
    let above = sorted.iter().filter(|&&s| s > epsilon).count();
    Ok(Calibration {
        epsilon,
        target_tnr,
        achieved_tnr: above as f64 / m as f64,
        n_real: m,
        quantile_convention: QUANTILE_CONVENTION.to_string(),
    })
}
