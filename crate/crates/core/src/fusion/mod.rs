//! Ensemble fusion at the feature, score and decision level, plus per-model
//! threshold calibration.
//!
//! Feature fusion minimizes the weighted squared-distance objective
//! `L(f) = sum_c w_c * |f - F_c|^2` over the supervisor embeddings `F_c`.
//! Its minimizer is the weighted mean, which is renormalized to unit length
//! so the fused embedding can be scored and stored like any other.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Embedding, ModelSubset, ModelTag};

/// Offset applied when a threshold must sit just above an observed score.
pub const THRESHOLD_EPSILON: f64 = 1e-6;

/// Centroids shorter than this are considered degenerate.
pub const MIN_CENTROID_NORM: f64 = 1e-9;

pub const RIDGE_WEIGHT: f64 = 0.08;
pub const MINUTIAE_WEIGHT: f64 = 0.05;

/// Non-negative per-model weights; at least one strictly positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<ModelTag, f64>", into = "BTreeMap<ModelTag, f64>")]
pub struct FusionWeights {
    weights: BTreeMap<ModelTag, f64>,
}

impl FusionWeights {
    pub fn new(weights: BTreeMap<ModelTag, f64>) -> Result<Self> {
        if let Some((tag, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {w} for {tag} is not a finite non-negative number")));
        }
        if !weights.values().any(|&w| w > 0.0) {
            return Err(Error::InvalidWeights("no strictly positive weight".into()));
        }
        Ok(Self { weights })
    }

    /// Ridge and minutiae supervisors weighted 0.08 and 0.05.
    pub fn ridge_minutiae() -> Self {
        Self::new(BTreeMap::from([(ModelTag::R, RIDGE_WEIGHT), (ModelTag::M, MINUTIAE_WEIGHT)]))
            .expect("static weights are valid")
    }

    /// Ridge and minutiae members get their dedicated weights, every other
    /// member of `subset` gets 1.0.
    pub fn for_subset(subset: ModelSubset) -> Self {
        let weights = subset
            .iter()
            .map(|tag| {
                let w = match tag {
                    ModelTag::R => RIDGE_WEIGHT,
                    ModelTag::M => MINUTIAE_WEIGHT,
                    _ => 1.0,
                };
                (tag, w)
            })
            .collect();
        Self::new(weights).expect("subset is non-empty")
    }

    /// Equal weight for every member of `subset`.
    pub fn uniform(subset: ModelSubset) -> Self {
        Self::new(subset.iter().map(|t| (t, 1.0)).collect()).expect("subset is non-empty")
    }

    pub fn get(&self, tag: ModelTag) -> Option<f64> {
        self.weights.get(&tag).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModelTag, f64)> + '_ {
        self.weights.iter().map(|(t, w)| (*t, *w))
    }
}

impl TryFrom<BTreeMap<ModelTag, f64>> for FusionWeights {
    type Error = Error;

    fn try_from(weights: BTreeMap<ModelTag, f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<FusionWeights> for BTreeMap<ModelTag, f64> {
    fn from(w: FusionWeights) -> Self {
        w.weights
    }
}

fn check_supervisors<'a>(
    supervisors: &'a BTreeMap<ModelTag, Embedding>,
    w: &FusionWeights,
) -> Result<Vec<(f64, &'a Embedding)>> {
    let dim = supervisors.values().next().map(Embedding::dim).unwrap_or(0);
    supervisors
        .iter()
        .map(|(tag, e)| {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: e.dim() });
            }
            let weight = w.get(*tag).ok_or(Error::MissingWeight(*tag))?;
            Ok((weight, e))
        })
        .collect()
}

/// Weighted squared-distance objective `sum_c w_c * |fe - F_c|^2`.
pub fn supervision_loss(fe: &[f64], supervisors: &BTreeMap<ModelTag, Embedding>, w: &FusionWeights) -> Result<f64> {
    let weighted = check_supervisors(supervisors, w)?;
    let mut loss = 0.0;
    for (weight, e) in weighted {
        if e.dim() != fe.len() {
            return Err(Error::DimensionMismatch { expected: fe.len(), found: e.dim() });
        }
        let sq: f64 = fe
            .iter()
            .zip(e.as_slice())
            .map(|(a, &b)| {
                let d = a - b as f64;
                d * d
            })
            .sum();
        loss += weight * sq;
    }
    Ok(loss)
}

/// [`supervision_loss`] for an embedding.
pub fn embedding_loss(fe: &Embedding, supervisors: &BTreeMap<ModelTag, Embedding>, w: &FusionWeights) -> Result<f64> {
    let wide: Vec<f64> = fe.as_slice().iter().map(|&v| v as f64).collect();
    supervision_loss(&wide, supervisors, w)
}

/// The weighted mean `sum_c w_c F_c / sum_c w_c`, before renormalization.
pub fn weighted_centroid(supervisors: &BTreeMap<ModelTag, Embedding>, w: &FusionWeights) -> Result<Vec<f64>> {
    if supervisors.is_empty() {
        return Err(Error::InvalidParams("no supervisor embeddings".into()));
    }
    let weighted = check_supervisors(supervisors, w)?;
    let total: f64 = weighted.iter().map(|(weight, _)| weight).sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights("supervisor weights sum to zero".into()));
    }
    let dim = weighted[0].1.dim();
    let mut acc = vec![0.0f64; dim];
    for (weight, e) in &weighted {
        for (a, &v) in acc.iter_mut().zip(e.as_slice()) {
            *a += weight * v as f64;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}

/// Fused representation: the unit-normalized weighted centroid.
///
/// When every positively weighted supervisor is the same vector it is
/// returned bit-for-bit.
pub fn feature_fuse_centroid(supervisors: &BTreeMap<ModelTag, Embedding>, w: &FusionWeights) -> Result<Embedding> {
    let centroid = weighted_centroid(supervisors, w)?;
    let mut active = supervisors.iter().filter(|(tag, _)| w.get(**tag).is_some_and(|x| x > 0.0)).map(|(_, e)| e);
    if let Some(first) = active.next() {
        if active.all(|e| e == first) {
            return Ok(first.clone());
        }
    }
    let norm = centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < MIN_CENTROID_NORM {
        return Err(Error::DegenerateCentroid { norm });
    }
    Embedding::normalize(&centroid)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    Mean,
    #[default]
    Median,
}

impl fmt::Display for ScoreRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreRule::Mean => "mean",
            ScoreRule::Median => "median",
        })
    }
}

impl FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(ScoreRule::Mean),
            "median" => Ok(ScoreRule::Median),
            _ => Err(Error::InvalidParams(format!("unknown score rule {s:?}"))),
        }
    }
}

pub fn score_fuse(scores: &[f64], rule: ScoreRule) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(match rule {
        ScoreRule::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        ScoreRule::Median => {
            let mut sorted = scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                (sorted[mid - 1] + sorted[mid]) / 2.0
            }
        }
    })
}

/// Per-model operating thresholds calibrated at one target FMR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdTable {
    pub target_fmr: f64,
    pub thresholds: BTreeMap<ModelTag, f64>,
}

impl ThresholdTable {
    pub fn new(target_fmr: f64) -> Result<Self> {
        check_rate(target_fmr)?;
        Ok(Self { target_fmr, thresholds: BTreeMap::new() })
    }

    /// Calibrates one threshold per model from its impostor scores.
    pub fn calibrate<'a, I>(target_fmr: f64, impostors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ModelTag, &'a [f64])>,
    {
        let mut table = Self::new(target_fmr)?;
        for (tag, scores) in impostors {
            table.thresholds.insert(tag, calibrate_threshold(scores, target_fmr)?);
        }
        Ok(table)
    }

    pub fn get(&self, tag: ModelTag) -> Result<f64> {
        self.thresholds.get(&tag).copied().ok_or(Error::MissingThreshold(tag))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text)?;
        check_rate(table.target_fmr)?;
        Ok(table)
    }
}

/// OR rule: a match if any model scores at or above its own threshold.
pub fn decision_fuse_or(per_model: &BTreeMap<ModelTag, f64>, t: &ThresholdTable) -> Result<bool> {
    let mut matched = false;
    for (&tag, &score) in per_model {
        matched |= score >= t.get(tag)?;
    }
    Ok(matched)
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRate(rate))
    }
}

/// Largest count of samples a rate of `rate` permits out of `n`.
pub(crate) fn allowed_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Fraction of `scores` at or above `threshold`.
pub fn rate_at_or_above(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// Threshold whose empirical FMR on `impostor` does not exceed `target_fmr`.
///
/// With scores sorted descending and `m = floor(target_fmr * N)`, the
/// threshold is the midpoint between the m-th and (m+1)-th largest scores.
/// When `m = 0` it is the maximum plus [`THRESHOLD_EPSILON`]. When those two
/// scores tie, the threshold sits just above the tied value (by epsilon, or
/// halfway to the next larger score if that is closer) so that every tied
/// score is rejected.
pub fn calibrate_threshold(impostor: &[f64], target_fmr: f64) -> Result<f64> {
    check_rate(target_fmr)?;
    if impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    if impostor.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParams("impostor scores must be finite".into()));
    }
    let mut sorted = impostor.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let m = allowed_count(target_fmr, n);
    if m == 0 {
        return Ok(sorted[0] + THRESHOLD_EPSILON);
    }
    if m == n {
        return Ok(sorted[n - 1]);
    }
    let (upper, lower) = (sorted[m - 1], sorted[m]);
    if upper > lower {
        let mid = lower + (upper - lower) / 2.0;
        // adjacent floats have no midpoint strictly between them
        return Ok(if mid > lower { mid } else { upper });
    }
    let above = sorted[..m].iter().rev().find(|&&s| s > upper);
    Ok(match above {
        Some(&next) => {
            let candidate = (upper + THRESHOLD_EPSILON).min(upper + (next - upper) / 2.0);
            if candidate > upper {
                candidate
            } else {
                next
            }
        }
        None => upper + THRESHOLD_EPSILON,
    })
}
