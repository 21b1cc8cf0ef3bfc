//! Evolutionary search driven by guided fitness, and the outer loop that
//! re-derives promise directions from the growing population.

mod engine;
mod subpop;

pub use engine::{info_evo_loop, InfoEvo, InfoEvoConfig, Mode, RoundReport, RunOutcome, StopReason, Trace, TraceEntry};
pub(crate) use engine::stream_rng;
pub use subpop::{run_generation, run_subpopulation, GenerationOutcome, GenerationResult, SubDemeReport};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::Problem;
use crate::geodesic::GeodesicError;
use crate::guidance::GuidanceError;
use crate::ledger::{LedgerError, ScoredSample};
use crate::manifold::ManifoldError;
use crate::promise::PromiseError;
use crate::SearchRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Promise(#[from] PromiseError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("invalid evolution config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub subpop_size: usize,
    pub generations_per_round: usize,
    /// `None` defers to the problem's own default.
    pub mutation_rate: Option<f64>,
    pub crossover_rate: f64,
    pub elitism: usize,
    pub eda_fraction: f64,
    pub tournament_size: usize,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            subpop_size: 32,
            generations_per_round: 4,
            mutation_rate: None,
            crossover_rate: 0.7,
            elitism: 2,
            eda_fraction: 0.1,
            tournament_size: 3,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |msg: String| Err(EvolveError::BadConfig(msg));
        if self.subpop_size == 0 {
            return bad("subpop_size must be positive".into());
        }
        if self.generations_per_round == 0 {
            return bad("generations_per_round must be positive".into());
        }
        if self.elitism >= self.subpop_size {
            return bad(format!("elitism {} must be below subpop_size {}", self.elitism, self.subpop_size));
        }
        if let Some(r) = self.mutation_rate {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("mutation_rate {r} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad(format!("crossover_rate {} outside [0, 1]", self.crossover_rate));
        }
        if !(0.0..=1.0).contains(&self.eda_fraction) {
            return bad(format!("eda_fraction {} outside [0, 1]", self.eda_fraction));
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be positive".into());
        }
        Ok(())
    }

    pub fn offspring_per_generation(&self) -> usize {
        self.subpop_size - self.elitism
    }

    pub fn mutation_rate_for<P: Problem>(&self, problem: &P) -> f64 {
        self.mutation_rate.unwrap_or_else(|| problem.default_mutation_rate())
    }
}

/// Index of the fittest of `size` uniform draws; ties go to the earlier draw.
fn tournament(fitness: &[f64], size: usize, rng: &mut SearchRng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] > fitness[best] {
            best = c;
        }
    }
    best
}

/// Smoothed per-locus marginals of the top quartile of `parents` by fitness.
pub(crate) struct MarginalModel {
    probs: Vec<Vec<f64>>,
}

impl MarginalModel {
    pub(crate) fn fit<P: Problem>(
        parents: &[ScoredSample<P::Genotype>],
        fitness: &[f64],
        smoothing: f64,
        problem: &P,
    ) -> Self {
        let mut order: Vec<usize> = (0..parents.len()).collect();
        order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
        order.truncate(parents.len().div_ceil(4).max(1));
        let cards = problem.locus_cardinality();
        let mut counts: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c as usize]).collect();
        for &i in &order {
            for (locus, v) in problem.loci(&parents[i].genotype).into_iter().enumerate() {
                if let Some(slot) = counts.get_mut(locus).and_then(|c| c.get_mut(v as usize)) {
                    *slot += 1.0;
                }
            }
        }
        let total = order.len() as f64;
        let probs = counts
            .into_iter()
            .map(|c| {
                let card = c.len();
                if card <= 1 {
                    return vec![1.0; card];
                }
                c.iter()
                    .map(|&n| {
                        let f = n / total;
                        (1.0 - smoothing) * f + smoothing * (1.0 - f) / (card - 1) as f64
                    })
                    .collect()
            })
            .collect();
        MarginalModel { probs }
    }

    #[cfg(test)]
    pub(crate) fn probability(&self, locus: usize, value: usize) -> f64 {
        self.probs[locus][value]
    }

    pub(crate) fn sample(&self, rng: &mut SearchRng) -> Vec<u32> {
        self.probs
            .iter()
            .map(|p| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, &q) in p.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        return v as u32;
                    }
                }
                p.len().saturating_sub(1) as u32
            })
            .collect()
    }
}

/// Produces `subpop_size − elitism` offspring: tournament selection on
/// `fitness`, crossover then mutation, with an `eda_fraction` share sampled
/// from smoothed marginals of the top-quartile parents instead.
pub fn vary<P: Problem>(
    parents: &[ScoredSample<P::Genotype>],
    fitness: &[f64],
    config: &EvolutionConfig,
    problem: &P,
    rng: &mut SearchRng,
) -> Vec<P::Genotype> {
    if parents.is_empty() {
        return Vec::new();
    }
    let count = config.offspring_per_generation();
    let n_eda = ((config.eda_fraction * count as f64).round() as usize).min(count);
    let rate = config.mutation_rate_for(problem);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count - n_eda {
        let a = tournament(fitness, config.tournament_size, rng);
        let child = if config.crossover_rate > 0.0 && rng.random::<f64>() < config.crossover_rate {
            let b = tournament(fitness, config.tournament_size, rng);
            problem.crossover(&parents[a].genotype, &parents[b].genotype, rng)
        } else {
            parents[a].genotype.clone()
        };
        out.push(problem.mutate(&child, rate, rng));
    }
    if n_eda > 0 {
        let model = MarginalModel::fit(parents, fitness, 1.0 / config.subpop_size as f64, problem);
        for _ in 0..n_eda {
            let loci = model.sample(rng);
            out.push(problem.from_loci(&loci, rng));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{BitProblem, Dataset, RealObjective, RealProblem, SymReg};
    use crate::ledger::GenotypeId;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn wrap<G>(gs: Vec<G>) -> Vec<ScoredSample<G>> {
        gs.into_iter()
            .enumerate()
            .map(|(i, g)| ScoredSample { id: GenotypeId(i), genotype: g, score: 0.0, eval_order: i })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(EvolutionConfig::default().validate().is_ok());
        assert!(EvolutionConfig { elitism: 32, ..Default::default() }.validate().is_err());
        assert!(EvolutionConfig { mutation_rate: Some(0.0), ..Default::default() }.validate().is_err());
        assert!(EvolutionConfig { crossover_rate: 1.5, ..Default::default() }.validate().is_err());
        assert!(EvolutionConfig { tournament_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn no_variation_copies_parents() {
        let p = BitProblem::onemax(20);
        let mut rng = SearchRng::seed_from_u64(3);
        let parents = wrap((0..8).map(|_| p.random_genotype(&mut rng)).collect());
        let fitness = vec![1.0; 8];
        let cfg = EvolutionConfig {
            subpop_size: 8,
            elitism: 0,
            mutation_rate: Some(1e-300),
            crossover_rate: 0.0,
            eda_fraction: 0.0,
            ..Default::default()
        };
        let kids = vary(&parents, &fitness, &cfg, &p, &mut rng);
        assert_eq!(kids.len(), 8);
        for k in kids {
            assert!(parents.iter().any(|s| s.genotype == k));
        }
    }

    #[test]
    fn eda_respects_fixed_locus() {
        let p = BitProblem::onemax(10);
        let mut rng = SearchRng::seed_from_u64(4);
        let parents = wrap(
            (0..16)
                .map(|_| {
                    let mut g = p.random_genotype(&mut rng);
                    g[0] = true;
                    g
                })
                .collect(),
        );
        let fitness: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let m = 32;
        let model = MarginalModel::fit(&parents, &fitness, 1.0 / m as f64, &p);
        assert!((model.probability(0, 1) - (1.0 - 1.0 / m as f64)).abs() < 1e-15);
        assert!((model.probability(0, 0) - 1.0 / m as f64).abs() < 1e-15);

        let cfg = EvolutionConfig { subpop_size: m, elitism: 0, eda_fraction: 1.0, ..Default::default() };
        let mut ones = 0;
        let mut total = 0;
        for _ in 0..50 {
            for k in vary(&parents, &fitness, &cfg, &p, &mut rng) {
                ones += k[0] as usize;
                total += 1;
            }
        }
        let frac = ones as f64 / total as f64;
        assert!((frac - (1.0 - 1.0 / m as f64)).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn marginals_sum_to_one() {
        let p = SymReg::new(Dataset::default_quadratic(), 3);
        let mut rng = SearchRng::seed_from_u64(5);
        let parents = wrap((0..12).map(|_| p.random_genotype(&mut rng)).collect());
        let fitness: Vec<f64> = (0..12).map(|i| (i * 7 % 5) as f64).collect();
        let model = MarginalModel::fit(&parents, &fitness, 0.1, &p);
        for row in &model.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vary_is_deterministic() {
        let p = RealProblem::new(RealObjective::Sphere, 4, None);
        let mut rng = SearchRng::seed_from_u64(6);
        let parents = wrap((0..10).map(|_| p.random_genotype(&mut rng)).collect());
        let fitness: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cfg = EvolutionConfig { subpop_size: 10, eda_fraction: 0.3, ..Default::default() };
        let a = vary(&parents, &fitness, &cfg, &p, &mut SearchRng::seed_from_u64(9));
        let b = vary(&parents, &fitness, &cfg, &p, &mut SearchRng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
    }

    proptest! {
        #[test]
        fn offspring_stay_valid(seed in 0u64..200) {
            let p = SymReg::new(Dataset::default_quadratic(), 4);
            let mut rng = SearchRng::seed_from_u64(seed);
            let parents = wrap((0..8).map(|_| p.random_genotype(&mut rng)).collect());
            let fitness: Vec<f64> = (0..8).map(|_| rng.random()).collect();
            let cfg = EvolutionConfig { subpop_size: 12, eda_fraction: 0.5, ..Default::default() };
            for k in vary(&parents, &fitness, &cfg, &p, &mut rng) {
                prop_assert!(k.height() <= 4);
            }
        }
    }
}
