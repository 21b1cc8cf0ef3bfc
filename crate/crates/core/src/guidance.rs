//! Guided fitness functions built from stepped promise distributions, and
//! the nearest-neighbor filter that decides which candidates get evaluated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::Problem;
use crate::ledger::{knn, DistanceMetric, LedgerError, Neighbor, ResolvedMetric, ScoredSample};
use crate::manifold::{inner, log_map, LogDistribution, ManifoldError};
use crate::promise::{normalize_scores, PromiseVector};

/// Floor added to ω in the product form so that candidates far from any
/// high-mass sample are damped rather than zeroed.
pub const OMEGA_BASELINE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("promise line is degenerate: base and target coincide")]
    DegenerateLine,
    #[error("distribution has {dist} entries but the population has {samples}")]
    SizeMismatch { dist: usize, samples: usize },
    #[error("invalid guidance parameter: {0}")]
    BadParams(String),
}

/// How strongly a candidate lies in the direction of a target distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OmegaKind {
    /// Target mass carried by the candidate's `k` nearest population members.
    KnnMass { k: usize },
    /// Length of the candidate embedding's projection onto the base→target
    /// geodesic direction.
    Projection,
    /// ω ≡ 1: plain score-driven search, used by the unguided baseline.
    Unit,
}

impl Default for OmegaKind {
    fn default() -> Self {
        OmegaKind::KnnMass { k: 7 }
    }
}

/// Combination of normalized score and ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HKind {
    /// `zeta · (ω + ω0)`
    #[default]
    Product,
    /// `α·zeta + (1 − α)·ω`
    WeightedSum { alpha: f64 },
}

impl HKind {
    pub fn apply(&self, zeta_norm: f64, omega: f64) -> f64 {
        match *self {
            HKind::Product => zeta_norm * (omega + OMEGA_BASELINE),
            HKind::WeightedSum { alpha } => alpha * zeta_norm + (1.0 - alpha) * omega,
        }
    }
}

/// Guided fitness for one sub-deme: `h(ζ, ω(x, target))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedPromise {
    pub base_promise: LogDistribution,
    pub target: LogDistribution,
    pub omega: OmegaKind,
    pub h_kind: HKind,
}

impl ModifiedPromise {
    pub fn new(base_promise: LogDistribution, target: LogDistribution, omega: OmegaKind, h_kind: HKind) -> Result<Self, GuidanceError> {
        if base_promise.len() != target.len() {
            return Err(ManifoldError::LengthMismatch { expected: base_promise.len(), got: target.len() }.into());
        }
        if let OmegaKind::KnnMass { k: 0 } = omega {
            return Err(GuidanceError::BadParams("knn_mass needs k >= 1".into()));
        }
        if let HKind::WeightedSum { alpha } = h_kind {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(GuidanceError::BadParams(format!("weighted_sum alpha {alpha} outside [0, 1]")));
            }
        }
        Ok(ModifiedPromise { base_promise, target, omega, h_kind })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub k: usize,
    pub threshold_quantile: f64,
    pub metric: DistanceMetric,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy { k: 7, threshold_quantile: 0.25, metric: DistanceMetric::Blended { lambda: 0.5 } }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if self.k == 0 {
            return Err(GuidanceError::BadParams("filter k must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.threshold_quantile) {
            return Err(GuidanceError::BadParams(format!(
                "threshold quantile {} outside [0, 1)",
                self.threshold_quantile
            )));
        }
        Ok(())
    }
}

/// Total mass `dist` places on the `k` nearest samples to `x`.
pub fn omega_knn<P: Problem>(
    x: &P::Genotype,
    dist: &LogDistribution,
    samples: &[ScoredSample<P::Genotype>],
    k: usize,
    metric: &ResolvedMetric,
    problem: &P,
) -> Result<f64, GuidanceError> {
    check_size(dist, samples)?;
    let neighbors = knn(x, samples, k, metric, problem)?;
    Ok(neighbor_mass(dist, &neighbors))
}

fn neighbor_mass(dist: &LogDistribution, neighbors: &[Neighbor]) -> f64 {
    let phi = dist.phi();
    neighbors.iter().map(|n| phi[n.position].exp()).sum::<f64>().min(1.0)
}

fn check_size<G>(dist: &LogDistribution, samples: &[ScoredSample<G>]) -> Result<(), GuidanceError> {
    if dist.len() != samples.len() {
        return Err(GuidanceError::SizeMismatch { dist: dist.len(), samples: samples.len() });
    }
    Ok(())
}

/// Inverse-distance weights, `1/(d + δ)` with δ tied to the median distance.
/// Non-finite distances get weight 0; if nothing finite remains the weights
/// are uniform.
fn inverse_distance_weights(neighbors: &[Neighbor]) -> Vec<f64> {
    let mut finite: Vec<f64> = neighbors.iter().map(|n| n.distance).filter(|d| d.is_finite()).collect();
    if finite.is_empty() {
        return vec![1.0; neighbors.len()];
    }
    finite.sort_by(f64::total_cmp);
    let delta = 1e-9 * (finite[finite.len() / 2] + 1e-30);
    neighbors
        .iter()
        .map(|n| if n.distance.is_finite() { 1.0 / (n.distance + delta) } else { 0.0 })
        .collect()
}

/// Places `x` in the population simplex: mass on its `k` nearest samples in
/// proportion to inverse distance.
pub fn embed_candidate<P: Problem>(
    x: &P::Genotype,
    samples: &[ScoredSample<P::Genotype>],
    k: usize,
    metric: &ResolvedMetric,
    problem: &P,
) -> Result<LogDistribution, GuidanceError> {
    let neighbors = knn(x, samples, k, metric, problem)?;
    Ok(embed_neighbors(samples.len(), &neighbors)?)
}

fn embed_neighbors(n: usize, neighbors: &[Neighbor]) -> Result<LogDistribution, ManifoldError> {
    let mut weights = vec![0.0; n];
    for (nb, w) in neighbors.iter().zip(inverse_distance_weights(neighbors)) {
        weights[nb.position] = w;
    }
    LogDistribution::from_weights(&weights)
}

/// Unit tangent at `base` pointing to `target`.
fn line_direction(mp: &ModifiedPromise) -> Result<Vec<f64>, GuidanceError> {
    let u = log_map(&mp.base_promise, &mp.target)?;
    let u = u.normalized().ok_or(GuidanceError::DegenerateLine)?;
    Ok(u.components().to_vec())
}

fn projection_of(mp: &ModifiedPromise, direction: &[f64], embedding: &LogDistribution) -> Result<f64, GuidanceError> {
    let e = log_map(&mp.base_promise, embedding)?;
    Ok(inner(&mp.base_promise, e.components(), direction)?.max(0.0))
}

/// Projection of the candidate's embedding onto the base→target direction,
/// clamped at zero.
pub fn omega_projection<P: Problem>(
    x: &P::Genotype,
    mp: &ModifiedPromise,
    samples: &[ScoredSample<P::Genotype>],
    k: usize,
    metric: &ResolvedMetric,
    problem: &P,
) -> Result<f64, GuidanceError> {
    check_size(&mp.target, samples)?;
    let direction = line_direction(mp)?;
    let embedding = embed_candidate(x, samples, k, metric, problem)?;
    projection_of(mp, &direction, &embedding)
}

/// Min-max normalization of a raw score against the population range; the
/// same convention as [`normalize_scores`].
pub fn normalize_against(score: f64, lo: f64, hi: f64) -> f64 {
    if !score.is_finite() {
        0.0
    } else if hi > lo {
        ((score - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

fn finite_range<G>(samples: &[ScoredSample<G>]) -> (f64, f64) {
    samples.iter().map(|s| s.score).filter(|s| s.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s), hi.max(s))
    })
}

/// Guided fitness of `x` with raw score `zeta_value`, normalized against the
/// population's score range.
pub fn modified_fitness<P: Problem>(
    x: &P::Genotype,
    zeta_value: f64,
    mp: &ModifiedPromise,
    samples: &[ScoredSample<P::Genotype>],
    policy: &FilterPolicy,
    problem: &P,
) -> Result<f64, GuidanceError> {
    GuidanceContext::new(samples.to_vec(), mp.clone(), *policy, problem)?.modified_fitness(x, zeta_value)
}

/// Type-7 (linear interpolation) quantile of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Evaluate,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutcome {
    pub decision: Decision,
    /// `None` when the filter did not run (cold start).
    pub estimate: Option<f64>,
}

/// One sub-deme's view of a fixed population snapshot: resolved metric,
/// score range, and the guided fitness of every member, computed once.
#[derive(Debug, Clone)]
pub struct GuidanceContext<'a, P: Problem> {
    samples: Vec<ScoredSample<P::Genotype>>,
    mp: ModifiedPromise,
    policy: FilterPolicy,
    problem: &'a P,
    metric: ResolvedMetric,
    direction: Option<Vec<f64>>,
    range: (f64, f64),
    fitness: Vec<f64>,
    threshold: f64,
}

impl<'a, P: Problem> GuidanceContext<'a, P> {
    pub fn new(
        samples: Vec<ScoredSample<P::Genotype>>,
        mp: ModifiedPromise,
        policy: FilterPolicy,
        problem: &'a P,
    ) -> Result<Self, GuidanceError> {
        policy.validate()?;
        if samples.is_empty() {
            return Err(LedgerError::EmptyLedger.into());
        }
        check_size(&mp.target, &samples)?;
        let metric = policy.metric.resolve(&samples, problem);
        let direction = match mp.omega {
            OmegaKind::Projection => Some(line_direction(&mp)?),
            _ => None,
        };
        let range = finite_range(&samples);
        let mut ctx = GuidanceContext {
            samples,
            mp,
            policy,
            problem,
            metric,
            direction,
            range,
            fitness: Vec::new(),
            threshold: f64::NEG_INFINITY,
        };
        let zeta = normalize_scores(&ctx.samples);
        let mut fitness = Vec::with_capacity(ctx.samples.len());
        for (s, z) in ctx.samples.iter().zip(zeta) {
            fitness.push(ctx.mp.h_kind.apply(z, ctx.omega(&s.genotype)?));
        }
        ctx.threshold = if policy.threshold_quantile > 0.0 {
            quantile(&fitness, policy.threshold_quantile)
        } else {
            f64::NEG_INFINITY
        };
        ctx.fitness = fitness;
        Ok(ctx)
    }

    pub fn samples(&self) -> &[ScoredSample<P::Genotype>] {
        &self.samples
    }

    pub fn promise(&self) -> &ModifiedPromise {
        &self.mp
    }

    /// Guided fitness of each snapshot member, in snapshot order.
    pub fn population_fitness(&self) -> &[f64] {
        &self.fitness
    }

    /// Skip threshold; `-inf` when filtering is disabled.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn omega(&self, x: &P::Genotype) -> Result<f64, GuidanceError> {
        match self.mp.omega {
            OmegaKind::Unit => Ok(1.0),
            OmegaKind::KnnMass { k } => {
                let neighbors = knn(x, &self.samples, k, &self.metric, self.problem)?;
                Ok(neighbor_mass(&self.mp.target, &neighbors))
            }
            OmegaKind::Projection => {
                let neighbors = knn(x, &self.samples, self.policy.k, &self.metric, self.problem)?;
                let embedding = embed_neighbors(self.samples.len(), &neighbors)?;
                let direction = self.direction.as_deref().ok_or(GuidanceError::DegenerateLine)?;
                projection_of(&self.mp, direction, &embedding)
            }
        }
    }

    pub fn normalized_score(&self, score: f64) -> f64 {
        normalize_against(score, self.range.0, self.range.1)
    }

    pub fn modified_fitness(&self, x: &P::Genotype, zeta_value: f64) -> Result<f64, GuidanceError> {
        Ok(self.mp.h_kind.apply(self.normalized_score(zeta_value), self.omega(x)?))
    }

    /// Inverse-distance average of the guided fitness of `x`'s nearest
    /// evaluated neighbors. Exact matches (distance 0) are averaged alone.
    pub fn estimate_fitness(&self, x: &P::Genotype) -> Result<f64, GuidanceError> {
        let neighbors = knn(x, &self.samples, self.policy.k, &self.metric, self.problem)?;
        let exact: Vec<f64> = neighbors.iter().filter(|n| n.distance == 0.0).map(|n| self.fitness[n.position]).collect();
        if !exact.is_empty() {
            return Ok(exact.iter().sum::<f64>() / exact.len() as f64);
        }
        let weights = inverse_distance_weights(&neighbors);
        let total: f64 = weights.iter().sum();
        Ok(neighbors.iter().zip(&weights).map(|(n, w)| w * self.fitness[n.position]).sum::<f64>() / total)
    }

    pub fn should_evaluate(&self, x: &P::Genotype) -> FilterOutcome {
        if self.samples.len() < 2 * self.policy.k || self.threshold == f64::NEG_INFINITY {
            return FilterOutcome { decision: Decision::Evaluate, estimate: None };
        }
        match self.estimate_fitness(x) {
            Ok(e) if e < self.threshold => FilterOutcome { decision: Decision::Skip, estimate: Some(e) },
            Ok(e) => FilterOutcome { decision: Decision::Evaluate, estimate: Some(e) },
            Err(_) => FilterOutcome { decision: Decision::Evaluate, estimate: None },
        }
    }
}

/// Order of candidate distributions, best first, by expected promise
/// `Σ p_i · promise_i`. Ties keep input order.
pub fn rank_rays(candidates: &[LogDistribution], base_promise: &PromiseVector) -> Vec<usize> {
    let expected: Vec<f64> = candidates
        .iter()
        .map(|c| c.phi().iter().zip(base_promise.values()).map(|(phi, v)| phi.exp() * v).sum())
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| expected[b].total_cmp(&expected[a]));
    order
}
