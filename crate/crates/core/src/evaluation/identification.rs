use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{allowed_count, check_rate, THRESHOLD_EPSILON};
use crate::gallery::SearchResult;
use crate::types::SubjectId;

/// Cumulative match characteristic; `hits_at_rank[r - 1]` is the fraction
/// of probes whose mate appears at rank `r` or better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub hits_at_rank: Vec<f64>,
}

impl CmcCurve {
    pub fn rank1(&self) -> f64 {
        self.hits_at_rank.first().copied().unwrap_or(0.0)
    }

    /// Hit rate at 1-based `rank`.
    pub fn at(&self, rank: usize) -> Option<f64> {
        rank.checked_sub(1).and_then(|i| self.hits_at_rank.get(i)).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,hit_rate\n");
        for (i, v) in self.hits_at_rank.iter().enumerate() {
            out.push_str(&format!("{},{v}\n", i + 1));
        }
        out
    }
}

pub fn cmc(results: &[(SearchResult, SubjectId)], max_rank: usize) -> Result<CmcCurve> {
    if max_rank == 0 {
        return Err(Error::InvalidParams("max_rank must be positive".into()));
    }
    if results.is_empty() {
        return Err(Error::InsufficientData("no probes".into()));
    }
    let mut first_hit = vec![0usize; max_rank];
    for (ranking, mate) in results {
        if ranking.ranked.len() < max_rank && !ranking.is_full() {
            return Err(Error::RankDepthTooSmall { depth: ranking.ranked.len(), max_rank });
        }
        if let Some(rank) = ranking.rank_of(mate).filter(|&r| r <= max_rank) {
            first_hit[rank - 1] += 1;
        }
    }
    let n = results.len() as f64;
    let mut cumulative = 0usize;
    let hits_at_rank = first_hit
        .into_iter()
        .map(|h| {
            cumulative += h;
            cumulative as f64 / n
        })
        .collect();
    Ok(CmcCurve { hits_at_rank })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatedTop {
    pub retrieved: SubjectId,
    pub score: f64,
    pub truth: SubjectId,
}

/// Top-1 outcomes of mated and non-mated probes.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OpenSetOutcome {
    pub mated: Vec<MatedTop>,
    pub nonmated: Vec<f64>,
}

impl OpenSetOutcome {
    /// Collects top-1 outcomes from rankings of at least depth 1.
    pub fn from_results(mated: &[(SearchResult, SubjectId)], nonmated: &[SearchResult]) -> Result<Self> {
        let top = |r: &SearchResult| r.top().cloned().ok_or(Error::EmptyScores);
        Ok(Self {
            mated: mated
                .iter()
                .map(|(r, truth)| {
                    let hit = top(r)?;
                    Ok(MatedTop { retrieved: hit.id, score: hit.score, truth: truth.clone() })
                })
                .collect::<Result<_>>()?,
            nonmated: nonmated.iter().map(|r| top(r).map(|h| h.score)).collect::<Result<_>>()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenSetPoint {
    pub target_fnir: f64,
    pub threshold: f64,
    pub fnir: f64,
    pub fpir: f64,
    /// Identification errors alone exceed the FNIR target, so the point
    /// reported is the smallest achievable FNIR instead.
    pub flagged: bool,
}

fn count_at_or_above(sorted_asc: &[f64], threshold: f64) -> usize {
    sorted_asc.len() - sorted_asc.partition_point(|&s| s < threshold)
}

/// FPIR at the largest threshold whose FNIR meets `target_fnir`.
///
/// A mated probe is a false negative when its top score is below the
/// threshold or its top candidate is the wrong subject. Thresholds are
/// swept over every observed score plus one sentinel above the maximum.
pub fn fpir_at_fnir(o: &OpenSetOutcome, target_fnir: f64) -> Result<OpenSetPoint> {
    check_rate(target_fnir)?;
    if o.mated.is_empty() || o.nonmated.is_empty() {
        return Err(Error::EmptyScores);
    }
    let n_mated = o.mated.len();
    let mut correct: Vec<f64> = o.mated.iter().filter(|m| m.retrieved == m.truth).map(|m| m.score).collect();
    let wrong = n_mated - correct.len();
    let mut nonmated = o.nonmated.clone();
    correct.sort_by(f64::total_cmp);
    nonmated.sort_by(f64::total_cmp);

    let mut candidates: Vec<f64> = o.mated.iter().map(|m| m.score).chain(o.nonmated.iter().copied()).collect();
    let max = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    candidates.push(max + THRESHOLD_EPSILON);
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();

    let misses = |t: f64| wrong + correct.len() - count_at_or_above(&correct, t);
    let allowed = allowed_count(target_fnir, n_mated);
    let (threshold, flagged) = match candidates.iter().copied().find(|&t| misses(t) <= allowed) {
        Some(t) => (t, false),
        None => (correct.first().copied().unwrap_or(candidates[0]), true),
    };
    Ok(OpenSetPoint {
        target_fnir,
        threshold,
        fnir: misses(threshold) as f64 / n_mated as f64,
        fpir: count_at_or_above(&nonmated, threshold) as f64 / nonmated.len() as f64,
        flagged,
    })
}
