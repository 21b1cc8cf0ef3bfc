//! Memoized evaluation ledger and nearest-neighbor queries over it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::Problem;
use crate::SearchRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("evaluation budget of {budget} exhausted")]
    BudgetExhausted { budget: usize },
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("score {0} is NaN or +inf")]
    InvalidScore(f64),
}

/// Dense index of an evaluated genotype, stable for the lifetime of a ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GenotypeId(pub usize);

#[derive(Debug, Clone)]
pub struct ScoredSample<G> {
    pub id: GenotypeId,
    pub genotype: G,
    /// Raw score. `-inf` marks a genotype whose evaluation overflowed.
    pub score: f64,
    pub eval_order: usize,
}

/// Append-only record of every evaluated genotype.
#[derive(Debug, Clone)]
pub struct EvaluationLedger<G> {
    samples: Vec<ScoredSample<G>>,
    index: HashMap<Vec<u8>, GenotypeId>,
    budget: usize,
}

impl<G: Clone + Send + Sync> EvaluationLedger<G> {
    pub fn new(budget: usize) -> Self {
        EvaluationLedger { samples: Vec::new(), index: HashMap::new(), budget }
    }

    pub fn samples(&self) -> &[ScoredSample<G>] {
        &self.samples
    }

    pub fn get(&self, id: GenotypeId) -> Option<&ScoredSample<G>> {
        self.samples.get(id.0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn eval_count(&self) -> usize {
        self.samples.len()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.samples.len()
    }

    pub fn lookup<P: Problem<Genotype = G>>(&self, genotype: &G, problem: &P) -> Option<&ScoredSample<G>> {
        self.index.get(&problem.key(genotype)).map(|id| &self.samples[id.0])
    }

    pub fn contains_key(&self, key: &[u8]) -> bool {
        self.index.contains_key(key)
    }

    fn push(&mut self, key: Vec<u8>, genotype: G, score: f64) -> Result<GenotypeId, LedgerError> {
        if score.is_nan() || score == f64::INFINITY {
            return Err(LedgerError::InvalidScore(score));
        }
        let id = GenotypeId(self.samples.len());
        self.samples.push(ScoredSample { id, genotype, score, eval_order: id.0 });
        self.index.insert(key, id);
        Ok(id)
    }

    /// Scores `genotype` unless it is already recorded. The flag reports
    /// whether a fresh evaluation consumed budget.
    pub fn evaluate<P: Problem<Genotype = G>>(
        &mut self,
        genotype: &G,
        problem: &P,
    ) -> Result<(&ScoredSample<G>, bool), LedgerError> {
        let key = problem.key(genotype);
        if let Some(id) = self.index.get(&key) {
            return Ok((&self.samples[id.0], false));
        }
        if self.samples.len() >= self.budget {
            return Err(LedgerError::BudgetExhausted { budget: self.budget });
        }
        let score = problem.score(genotype);
        let id = self.push(key, genotype.clone(), score)?;
        Ok((&self.samples[id.0], true))
    }

    /// Scores a batch in parallel and appends in input order. Genotypes
    /// already present (or repeated within the batch) are skipped; the batch
    /// is truncated to the remaining budget. Returns ids of fresh samples.
    pub fn evaluate_batch<P: Problem<Genotype = G>>(
        &mut self,
        genotypes: Vec<G>,
        problem: &P,
    ) -> Result<Vec<GenotypeId>, LedgerError> {
        let mut fresh: Vec<(Vec<u8>, G)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for g in genotypes {
            let key = problem.key(&g);
            if self.index.contains_key(&key) || !seen.insert(key.clone()) {
                continue;
            }
            fresh.push((key, g));
        }
        fresh.truncate(self.remaining());
        let scores: Vec<f64> = fresh.par_iter().map(|(_, g)| problem.score(g)).collect();
        let mut ids = Vec::with_capacity(fresh.len());
        for ((key, g), score) in fresh.into_iter().zip(scores) {
            ids.push(self.push(key, g, score)?);
        }
        Ok(ids)
    }

    /// Working population for one guided iteration: the best `cap / 2`
    /// samples by score plus the most recent ones, up to `cap` in total,
    /// ordered by id.
    pub fn snapshot(&self, cap: usize) -> Vec<ScoredSample<G>> {
        if self.samples.len() <= cap {
            return self.samples.clone();
        }
        let mut chosen = vec![false; self.samples.len()];
        let mut by_score: Vec<usize> = (0..self.samples.len()).collect();
        by_score.sort_by(|&a, &b| self.samples[b].score.total_cmp(&self.samples[a].score).then(a.cmp(&b)));
        let mut taken = 0;
        for &i in by_score.iter().take(cap / 2) {
            chosen[i] = true;
            taken += 1;
        }
        for i in (0..self.samples.len()).rev() {
            if taken == cap {
                break;
            }
            if !chosen[i] {
                chosen[i] = true;
                taken += 1;
            }
        }
        self.samples.iter().zip(&chosen).filter(|(_, &c)| c).map(|(s, _)| s.clone()).collect()
    }
}

/// Highest score among `samples`.
pub fn best_score<G>(samples: &[ScoredSample<G>]) -> Result<f64, LedgerError> {
    samples
        .iter()
        .map(|s| s.score)
        .max_by(|a, b| a.total_cmp(b))
        .ok_or(LedgerError::EmptyLedger)
}

/// Sample with the highest score; ties go to the earliest evaluation.
pub fn best_sample<G>(samples: &[ScoredSample<G>]) -> Option<&ScoredSample<G>> {
    samples.iter().reduce(|best, s| if s.score > best.score { s } else { best })
}

/// Which notion of similarity drives neighbor queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DistanceMetric {
    Genotypic,
    Phenotypic,
    /// `lambda` weights the genotypic part; each part is divided by its median
    /// pairwise value over the population.
    Blended { lambda: f64 },
}

const MEDIAN_PAIRS: usize = 1000;

impl DistanceMetric {
    /// Fixes the median scales for a blended metric against a population.
    pub fn resolve<P: Problem>(&self, samples: &[ScoredSample<P::Genotype>], problem: &P) -> ResolvedMetric {
        let (geno_scale, pheno_scale) = match self {
            DistanceMetric::Blended { lambda } if *lambda > 0.0 && *lambda < 1.0 => {
                let pairs = sample_pairs(samples.len());
                let geno: Vec<f64> =
                    pairs.iter().map(|&(i, j)| problem.d_geno(&samples[i].genotype, &samples[j].genotype)).collect();
                let pheno: Vec<f64> =
                    pairs.iter().map(|&(i, j)| problem.d_pheno(&samples[i].genotype, &samples[j].genotype)).collect();
                (median_scale(geno), median_scale(pheno))
            }
            _ => (1.0, 1.0),
        };
        ResolvedMetric { metric: *self, geno_scale, pheno_scale }
    }
}

fn sample_pairs(n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let total = n * (n - 1) / 2;
    if total <= MEDIAN_PAIRS {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    let mut rng = SearchRng::seed_from_u64(n as u64);
    (0..MEDIAN_PAIRS)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j))
        })
        .collect()
}

fn median_scale(mut values: Vec<f64>) -> f64 {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return 1.0;
    }
    values.sort_by(f64::total_cmp);
    let m = values[values.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// A distance metric with population-dependent scales fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedMetric {
    pub metric: DistanceMetric,
    pub geno_scale: f64,
    pub pheno_scale: f64,
}

impl ResolvedMetric {
    pub fn unscaled(metric: DistanceMetric) -> Self {
        ResolvedMetric { metric, geno_scale: 1.0, pheno_scale: 1.0 }
    }

    pub fn distance<P: Problem>(&self, problem: &P, a: &P::Genotype, b: &P::Genotype) -> f64 {
        match self.metric {
            DistanceMetric::Genotypic => problem.d_geno(a, b),
            DistanceMetric::Phenotypic => problem.d_pheno(a, b),
            DistanceMetric::Blended { lambda } if lambda >= 1.0 => problem.d_geno(a, b),
            DistanceMetric::Blended { lambda } if lambda <= 0.0 => problem.d_pheno(a, b),
            DistanceMetric::Blended { lambda } => {
                lambda * problem.d_geno(a, b) / self.geno_scale
                    + (1.0 - lambda) * problem.d_pheno(a, b) / self.pheno_scale
            }
        }
    }
}

/// One result of a neighbor query: the position within the queried slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub position: usize,
    pub id: GenotypeId,
    pub distance: f64,
}

/// Exact `k` nearest neighbors of `x` among `samples`, ascending by distance
/// with ties broken by smaller id.
pub fn knn<P: Problem>(
    x: &P::Genotype,
    samples: &[ScoredSample<P::Genotype>],
    k: usize,
    metric: &ResolvedMetric,
    problem: &P,
) -> Result<Vec<Neighbor>, LedgerError> {
    if samples.is_empty() {
        return Err(LedgerError::EmptyLedger);
    }
    let mut all: Vec<Neighbor> = samples
        .iter()
        .enumerate()
        .map(|(position, s)| Neighbor { position, id: s.id, distance: metric.distance(problem, x, &s.genotype) })
        .collect();
    let cmp = |a: &Neighbor, b: &Neighbor| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id));
    let k = k.min(all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    Ok(all)
}
