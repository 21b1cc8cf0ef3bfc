//! One guided sub-population: a few generations of vary → filter → evaluate.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::Trace;
use super::{vary, EvolutionConfig, EvolveError};
use crate::domains::Problem;
use crate::guidance::{Decision, GuidanceContext};
use crate::ledger::{best_sample, EvaluationLedger, GenotypeId, ScoredSample};
use crate::SearchRng;

/// Accounting for one sub-deme's share of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubDemeReport {
    /// Index of the ray this sub-deme follows, in generation order.
    pub ray_index: usize,
    pub generations_run: usize,
    /// Every offspring produced by variation, duplicates included.
    pub offspring_produced: usize,
    /// Offspring already in the ledger or repeated within their generation.
    pub duplicates: usize,
    /// Distinct new candidates put before the filter: `evaluated + skipped`.
    pub candidates_generated: usize,
    pub candidates_skipped: usize,
    pub candidates_evaluated: usize,
    pub best_score_before: f64,
    pub best_score_after: f64,
    pub budget_exhausted: bool,
    pub target_reached: bool,
}

/// What happened to one generation's offspring.
#[derive(Debug, Clone)]
pub struct GenerationOutcome<G> {
    pub offspring_produced: usize,
    pub duplicates: usize,
    pub skipped: Vec<G>,
    pub evaluated: Vec<GenotypeId>,
    /// Accepted candidates dropped because the budget ran out.
    pub dropped: usize,
}

/// A generation's outcome and the parents for the next one.
pub type GenerationResult<G> = (GenerationOutcome<G>, Vec<ScoredSample<G>>);

fn ledger_best<G: Clone + Send + Sync>(ledger: &EvaluationLedger<G>) -> f64 {
    best_sample(ledger.samples()).map_or(f64::NEG_INFINITY, |s| s.score)
}

fn parent_fitness<P: Problem>(ctx: &GuidanceContext<'_, P>, parents: &[ScoredSample<P::Genotype>]) -> Result<Vec<f64>, EvolveError> {
    parents
        .par_iter()
        .map(|s| ctx.modified_fitness(&s.genotype, s.score).map_err(EvolveError::from))
        .collect()
}

/// One generation. Returns the outcome and the next parent set: the
/// `elitism` best of parents plus new samples by guided fitness (always
/// including the best raw score), then evaluated offspring by guided
/// fitness, then leftover parents.
#[allow(clippy::too_many_arguments)]
pub fn run_generation<P: Problem>(
    parents: &[ScoredSample<P::Genotype>],
    ctx: &GuidanceContext<'_, P>,
    config: &EvolutionConfig,
    problem: &P,
    ledger: &mut EvaluationLedger<P::Genotype>,
    rng: &mut SearchRng,
    trace: &mut Trace,
    deme_id: usize,
) -> Result<GenerationResult<P::Genotype>, EvolveError> {
    let fitness = parent_fitness(ctx, parents)?;
    let offspring = vary(parents, &fitness, config, problem, rng);
    let produced = offspring.len();

    let mut seen = HashSet::new();
    let fresh: Vec<P::Genotype> = offspring
        .into_iter()
        .filter(|g| {
            let key = problem.key(g);
            !ledger.contains_key(&key) && seen.insert(key)
        })
        .collect();
    let duplicates = produced - fresh.len();

    let decisions: Vec<Decision> = fresh.par_iter().map(|g| ctx.should_evaluate(g).decision).collect();
    let mut accepted = Vec::new();
    let mut skipped = Vec::new();
    for (g, d) in fresh.into_iter().zip(decisions) {
        match d {
            Decision::Evaluate => accepted.push(g),
            Decision::Skip => skipped.push(g),
        }
    }
    let dropped = accepted.len().saturating_sub(ledger.remaining());
    accepted.truncate(ledger.remaining());
    trace.add_skipped(skipped.len());
    let evaluated = ledger.evaluate_batch(accepted, problem)?;
    for id in &evaluated {
        trace.record(deme_id, ledger.samples()[id.0].score);
    }

    let new: Vec<ScoredSample<P::Genotype>> = evaluated.iter().map(|id| ledger.samples()[id.0].clone()).collect();
    let new_fitness = parent_fitness(ctx, &new)?;
    let next = select_parents(parents, &fitness, &new, &new_fitness, config);
    Ok((GenerationOutcome { offspring_produced: produced, duplicates, skipped, evaluated, dropped }, next))
}

fn select_parents<G: Clone>(
    parents: &[ScoredSample<G>],
    parent_fitness: &[f64],
    new: &[ScoredSample<G>],
    new_fitness: &[f64],
    config: &EvolutionConfig,
) -> Vec<ScoredSample<G>> {
    let pool: Vec<(&ScoredSample<G>, f64, bool)> = parents
        .iter()
        .zip(parent_fitness)
        .map(|(s, &f)| (s, f, false))
        .chain(new.iter().zip(new_fitness).map(|(s, &f)| (s, f, true)))
        .collect();
    let by_fitness = |idx: &mut Vec<usize>| {
        idx.sort_by(|&a, &b| pool[b].1.total_cmp(&pool[a].1).then(pool[a].0.id.cmp(&pool[b].0.id)));
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    by_fitness(&mut order);

    let mut taken = vec![false; pool.len()];
    let mut chosen = Vec::new();
    let best = (0..pool.len())
        .reduce(|b, i| if pool[i].0.score > pool[b].0.score { i } else { b })
        .expect("pool is nonempty");
    for &i in order.iter().take(config.elitism) {
        taken[i] = true;
        chosen.push(i);
    }
    if !taken[best] {
        taken[best] = true;
        chosen.push(best);
    }
    for pass_new in [true, false] {
        for &i in &order {
            if chosen.len() >= config.subpop_size {
                break;
            }
            if !taken[i] && pool[i].2 == pass_new {
                taken[i] = true;
                chosen.push(i);
            }
        }
    }
    chosen.into_iter().map(|i| pool[i].0.clone()).collect()
}

/// Runs up to `generations_per_round` generations from `seed_parents`,
/// appending every evaluation to `ledger`. Stops early when the budget is
/// spent or the problem target is met.
#[allow(clippy::too_many_arguments)]
pub fn run_subpopulation<P: Problem>(
    seed_parents: Vec<ScoredSample<P::Genotype>>,
    ctx: &GuidanceContext<'_, P>,
    config: &EvolutionConfig,
    problem: &P,
    ledger: &mut EvaluationLedger<P::Genotype>,
    rng: &mut SearchRng,
    trace: &mut Trace,
    deme_id: usize,
    ray_index: usize,
) -> Result<SubDemeReport, EvolveError> {
    let before = ledger_best(ledger);
    let mut report = SubDemeReport {
        ray_index,
        generations_run: 0,
        offspring_produced: 0,
        duplicates: 0,
        candidates_generated: 0,
        candidates_skipped: 0,
        candidates_evaluated: 0,
        best_score_before: before,
        best_score_after: before,
        budget_exhausted: false,
        target_reached: false,
    };
    let reached = |score: f64| problem.target().is_some_and(|t| score >= t);
    let mut parents = seed_parents;
    for _ in 0..config.generations_per_round {
        if ledger.remaining() == 0 {
            report.budget_exhausted = true;
            break;
        }
        if reached(ledger_best(ledger)) || parents.is_empty() {
            break;
        }
        let (outcome, next) = run_generation(&parents, ctx, config, problem, ledger, rng, trace, deme_id)?;
        report.generations_run += 1;
        report.offspring_produced += outcome.offspring_produced;
        report.duplicates += outcome.duplicates;
        report.candidates_skipped += outcome.skipped.len();
        report.candidates_evaluated += outcome.evaluated.len();
        report.budget_exhausted |= outcome.dropped > 0;
        parents = next;
    }
    report.candidates_generated = report.candidates_evaluated + report.candidates_skipped;
    report.best_score_after = ledger_best(ledger);
    report.target_reached = reached(report.best_score_after);
    report.budget_exhausted |= ledger.remaining() == 0;
    Ok(report)
}
