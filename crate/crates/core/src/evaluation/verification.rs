use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{allowed_count, calibrate_threshold, rate_at_or_above};

/// Genuine and impostor comparison scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

/// TAR and FMR measured at the threshold calibrated for `target_fmr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub target_fmr: f64,
    pub threshold: f64,
    pub tar: f64,
    pub fmr: f64,
    /// The impostor set is too small to resolve the target (fewer than
    /// `1 / target_fmr` impostor scores), so the threshold sits above every
    /// impostor score.
    pub under_resolved: bool,
}

pub fn operating_point(s: &ScoreSample, target_fmr: f64) -> Result<OperatingPoint> {
    if s.genuine.is_empty() || s.impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    let threshold = calibrate_threshold(&s.impostor, target_fmr)?;
    Ok(OperatingPoint {
        target_fmr,
        threshold,
        tar: rate_at_or_above(&s.genuine, threshold),
        fmr: rate_at_or_above(&s.impostor, threshold),
        under_resolved: allowed_count(target_fmr, s.impostor.len()) == 0,
    })
}

/// Fraction of genuine scores at or above the threshold calibrated on the
/// impostor scores for `target_fmr`.
pub fn tar_at_fmr(s: &ScoreSample, target_fmr: f64) -> Result<f64> {
    operating_point(s, target_fmr).map(|p| p.tar)
}
