use serde::{Deserialize, Serialize};

use super::bench::BenchReport;
use super::identification::OpenSetPoint;
use super::verification::{OperatingPoint, ScoreSample};

pub const HISTOGRAM_BINS: usize = 512;

/// Fixed-width histogram over `[-1, 1]`; the last bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl ScoreHistogram {
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &s in scores {
            let pos = ((s.clamp(-1.0, 1.0) + 1.0) / 2.0 * HISTOGRAM_BINS as f64) as usize;
            counts[pos.min(HISTOGRAM_BINS - 1)] += 1;
        }
        Self { lo: -1.0, hi: 1.0, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub genuine: ScoreHistogram,
    pub impostor: ScoreHistogram,
}

/// Acceptance rates of the OR rule over per-model calibrated thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub target_fmr: f64,
    pub tar: f64,
    pub fmr: f64,
}

/// Everything one evaluation run measured. All fields except `timestamp`
/// are a pure function of the inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub genuine_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impostor_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histograms: Option<Histograms>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub tar_at_fmr: Vec<OperatingPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmc: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_set: Option<OpenSetPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput: Option<BenchReport>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl EvalReport {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { kind: kind.into(), ..Default::default() }
    }

    /// Fills counts and histograms from a score sample.
    pub fn with_scores(mut self, s: &ScoreSample) -> Self {
        self.genuine_count = Some(s.genuine.len());
        self.impostor_count = Some(s.impostor.len());
        self.histograms = Some(Histograms {
            genuine: ScoreHistogram::from_scores(&s.genuine),
            impostor: ScoreHistogram::from_scores(&s.impostor),
        });
        self
    }

    pub fn flag(&mut self, message: impl Into<String>) {
        self.flags.push(message.into());
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
