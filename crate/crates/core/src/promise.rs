//! Heuristic promise estimates over an evaluated population.
//!
//! The promise of a sample blends its normalized score with two ratios: how
//! close it is to the best score in its neighborhood (local maximum) and to the
//! best score overall (global maximum).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::Problem;
use crate::ledger::{knn, LedgerError, ResolvedMetric, ScoredSample};
use crate::manifold::{LogDistribution, ManifoldError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromiseError {
    #[error("need at least {needed} samples, have {have}")]
    LedgerTooSmall { needed: usize, have: usize },
    #[error("promise weights must be nonnegative with a positive sum")]
    BadWeights,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromiseWeights {
    pub w_zeta: f64,
    pub w_lm: f64,
    pub w_gm: f64,
    pub k_local: usize,
    /// Exponent applied to both ratio heuristics.
    pub sharpness: f64,
}

impl Default for PromiseWeights {
    fn default() -> Self {
        PromiseWeights { w_zeta: 1.0, w_lm: 0.5, w_gm: 0.5, k_local: 5, sharpness: 1.0 }
    }
}

impl PromiseWeights {
    pub fn new(w_zeta: f64, w_lm: f64, w_gm: f64) -> Self {
        PromiseWeights { w_zeta, w_lm, w_gm, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), PromiseError> {
        let ws = [self.w_zeta, self.w_lm, self.w_gm];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().sum::<f64>() <= 0.0 || self.k_local == 0 {
            return Err(PromiseError::BadWeights);
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.w_zeta + self.w_lm + self.w_gm
    }
}

/// Promise values indexed by position in the population.
#[derive(Debug, Clone, PartialEq)]
pub struct PromiseVector {
    values: Vec<f64>,
}

impl PromiseVector {
    /// Wraps precomputed promise values; they must be finite, nonnegative and
    /// not all zero.
    pub fn from_values(values: Vec<f64>) -> Result<Self, PromiseError> {
        if values.is_empty() {
            return Err(LedgerError::EmptyLedger.into());
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) || values.iter().all(|v| *v == 0.0) {
            return Err(PromiseError::BadWeights);
        }
        Ok(PromiseVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    /// The induced distribution over the population.
    pub fn distribution(&self) -> Result<LogDistribution, ManifoldError> {
        LogDistribution::from_weights(&self.values)
    }
}

/// First index of the largest value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Min-max rescaling of finite scores to [0, 1]. A degenerate range maps
/// everything to 1; `-inf` sentinels map to 0.
pub fn normalize_scores<G>(samples: &[ScoredSample<G>]) -> Vec<f64> {
    let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    normalize_values(&scores)
}

pub(crate) fn normalize_values(scores: &[f64]) -> Vec<f64> {
    let finite = scores.iter().filter(|s| s.is_finite());
    let lo = finite.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .map(|&s| {
            if !s.is_finite() {
                0.0
            } else if hi > lo {
                ((s - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect()
}

fn ratio(value: f64, max: f64, sharpness: f64) -> f64 {
    if max <= 0.0 {
        1.0
    } else {
        (value / max).clamp(0.0, 1.0).powf(sharpness)
    }
}

fn local_ratio<P: Problem>(
    i: usize,
    samples: &[ScoredSample<P::Genotype>],
    normalized: &[f64],
    k_local: usize,
    metric: &ResolvedMetric,
    problem: &P,
    sharpness: f64,
) -> Result<f64, PromiseError> {
    let neighbors = knn(&samples[i].genotype, samples, k_local + 1, metric, problem)?;
    let max = neighbors
        .iter()
        .filter(|n| n.position != i)
        .take(k_local)
        .map(|n| normalized[n.position])
        .fold(normalized[i], f64::max);
    Ok(ratio(normalized[i], max, sharpness))
}

/// Ratio of a sample's normalized score to the best normalized score among
/// itself and its `k_local` nearest other samples.
pub fn local_max_prob<P: Problem>(
    i: usize,
    samples: &[ScoredSample<P::Genotype>],
    k_local: usize,
    metric: &ResolvedMetric,
    problem: &P,
) -> Result<f64, PromiseError> {
    if samples.len() < 2 {
        return Err(PromiseError::LedgerTooSmall { needed: 2, have: samples.len() });
    }
    let normalized = normalize_scores(samples);
    local_ratio(i, samples, &normalized, k_local, metric, problem, 1.0)
}

/// Ratio of a sample's normalized score to the best normalized score overall.
pub fn global_max_prob<G>(i: usize, samples: &[ScoredSample<G>]) -> f64 {
    let normalized = normalize_scores(samples);
    let max = normalized.iter().cloned().fold(0.0, f64::max);
    ratio(normalized[i], max, 1.0)
}

/// Weighted blend of normalized score and both ratio heuristics.
pub fn promise_vector<P: Problem>(
    samples: &[ScoredSample<P::Genotype>],
    weights: &PromiseWeights,
    metric: &ResolvedMetric,
    problem: &P,
) -> Result<PromiseVector, PromiseError> {
    weights.validate()?;
    if samples.is_empty() {
        return Err(LedgerError::EmptyLedger.into());
    }
    let normalized = normalize_scores(samples);
    let global_max = normalized.iter().cloned().fold(0.0, f64::max);
    let mut values = Vec::with_capacity(samples.len());
    for (i, &z) in normalized.iter().enumerate() {
        let mut v = weights.w_zeta * z;
        if weights.w_gm > 0.0 {
            v += weights.w_gm * ratio(z, global_max, weights.sharpness);
        }
        if weights.w_lm > 0.0 {
            let lm = if samples.len() < 2 {
                1.0
            } else {
                local_ratio(i, samples, &normalized, weights.k_local, metric, problem, weights.sharpness)?
            };
            v += weights.w_lm * lm;
        }
        values.push(v);
    }
    Ok(PromiseVector { values })
}
