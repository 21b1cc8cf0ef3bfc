//! The outer loop: promise → direction distributions → guided sub-demes.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::subpop::{run_subpopulation, SubDemeReport};
use super::{EvolutionConfig, EvolveError};
use crate::domains::Problem;
use crate::geodesic::{build_chart, geodesic_rays, step_along, StepParams};
use crate::guidance::{rank_rays, FilterPolicy, GuidanceContext, HKind, ModifiedPromise, OmegaKind};
use crate::ledger::{best_sample, DistanceMetric, EvaluationLedger, ScoredSample};
use crate::manifold::LogDistribution;
use crate::promise::{promise_vector, PromiseWeights};
use crate::SearchRng;

/// Smallest step length reached by halving.
pub const GAMMA_FLOOR: f64 = 0.01;
/// Non-improving rounds before the step length halves.
const PATIENCE: usize = 2;
/// Rounds with no fresh evaluation before random immigrants are injected.
const IDLE_BEFORE_IMMIGRANTS: usize = 3;
/// Rounds with no fresh evaluation before the run gives up.
const IDLE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Promise-directed sub-demes with candidate filtering.
    #[default]
    InfoEvo,
    /// Same evolutionary machinery, fitness = score, no rays, no filter.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfoEvoConfig {
    pub evolution: EvolutionConfig,
    pub promise: PromiseWeights,
    pub step: StepParams,
    pub policy: FilterPolicy,
    pub omega: OmegaKind,
    pub h: HKind,
    /// Random initial sample size; `None` means `subpop_size`.
    pub initial_population: Option<usize>,
    /// Cap on the population the promise distribution is defined over.
    pub snapshot_cap: usize,
    pub mode: Mode,
}

impl Default for InfoEvoConfig {
    fn default() -> Self {
        InfoEvoConfig {
            evolution: EvolutionConfig::default(),
            promise: PromiseWeights::default(),
            step: StepParams::default(),
            policy: FilterPolicy::default(),
            omega: OmegaKind::default(),
            h: HKind::default(),
            initial_population: None,
            snapshot_cap: 64,
            mode: Mode::InfoEvo,
        }
    }
}

impl InfoEvoConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        self.evolution.validate()?;
        self.promise.validate()?;
        self.step.validate()?;
        self.policy.validate()?;
        if self.initial_population == Some(0) {
            return Err(EvolveError::BadConfig("initial_population must be positive".into()));
        }
        if self.snapshot_cap < 2 {
            return Err(EvolveError::BadConfig("snapshot_cap must be at least 2".into()));
        }
        Ok(())
    }

    pub fn initial_size(&self) -> usize {
        self.initial_population.unwrap_or(self.evolution.subpop_size)
    }

    /// Sub-demes kept per round: the better half of the rays, rounded up.
    pub fn kept_subdemes(&self) -> usize {
        self.step.ray_count.div_ceil(2)
    }
}

/// One line of the evaluation trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval_order: usize,
    /// `None` stands for a `-inf` sentinel score.
    pub score: Option<f64>,
    pub deme_id: usize,
    /// Candidates skipped by the filter before this evaluation, run-wide.
    pub skipped: usize,
}

/// Run-wide, append-only evaluation trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    entries: Vec<TraceEntry>,
    skipped: usize,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn record(&mut self, deme_id: usize, score: f64) {
        self.entries.push(TraceEntry {
            eval_order: self.entries.len(),
            score: score.is_finite().then_some(score),
            deme_id,
            skipped: self.skipped,
        });
    }

    pub fn add_skipped(&mut self, n: usize) {
        self.skipped += n;
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    BudgetExhausted,
    /// Many consecutive rounds produced nothing new to evaluate.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub deme_id: usize,
    pub round_index: usize,
    pub rays_generated: usize,
    pub rays_used: usize,
    pub candidates_generated: usize,
    pub candidates_skipped: usize,
    pub candidates_evaluated: usize,
    /// Random genotypes evaluated to break a stall; included in the counts above.
    pub immigrants: usize,
    pub best_score_before: f64,
    pub best_score_after: f64,
    pub gamma_used: f64,
    pub ascent_fallback: bool,
    pub subdemes: Vec<SubDemeReport>,
}

/// Result of a complete single-population run.
#[derive(Debug, Clone)]
pub struct RunOutcome<G> {
    pub best: ScoredSample<G>,
    pub reached_target: bool,
    pub stop_reason: StopReason,
    pub initial_evaluations: usize,
    pub reports: Vec<RoundReport>,
    pub trace: Trace,
}

/// Search state for one population (one deme).
#[derive(Debug, Clone)]
pub struct InfoEvo<P: Problem> {
    problem: P,
    config: InfoEvoConfig,
    ledger: EvaluationLedger<P::Genotype>,
    deme_id: usize,
    seed: u64,
    rng: SearchRng,
    gamma: f64,
    stale_rounds: usize,
    idle_rounds: usize,
    initial_evaluations: usize,
    reports: Vec<RoundReport>,
    stop: Option<StopReason>,
}

/// Generator for `seed` on a numbered stream.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> SearchRng {
    let mut rng = SearchRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<P: Problem> InfoEvo<P> {
    pub fn new(problem: P, config: InfoEvoConfig, budget: usize, seed: u64, deme_id: usize) -> Result<Self, EvolveError> {
        config.validate()?;
        Ok(InfoEvo {
            problem,
            config,
            ledger: EvaluationLedger::new(budget),
            deme_id,
            seed,
            rng: stream_rng(seed, 1),
            gamma: config.step.gamma,
            stale_rounds: 0,
            idle_rounds: 0,
            initial_evaluations: 0,
            reports: Vec::new(),
            stop: None,
        })
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn config(&self) -> &InfoEvoConfig {
        &self.config
    }

    pub fn ledger(&self) -> &EvaluationLedger<P::Genotype> {
        &self.ledger
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn deme_id(&self) -> usize {
        self.deme_id
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn is_done(&self) -> bool {
        self.stop.is_some()
    }

    pub fn initial_evaluations(&self) -> usize {
        self.initial_evaluations
    }

    pub fn best(&self) -> Option<&ScoredSample<P::Genotype>> {
        best_sample(self.ledger.samples())
    }

    fn best_score(&self) -> f64 {
        self.best().map_or(f64::NEG_INFINITY, |s| s.score)
    }

    fn target_reached(&self) -> bool {
        self.problem.target().is_some_and(|t| self.best_score() >= t)
    }

    fn update_stop(&mut self) {
        if self.stop.is_some() {
            return;
        }
        if self.target_reached() {
            self.stop = Some(StopReason::TargetReached);
        } else if self.ledger.remaining() == 0 {
            self.stop = Some(StopReason::BudgetExhausted);
        } else if self.idle_rounds >= IDLE_LIMIT {
            self.stop = Some(StopReason::Stalled);
        }
    }

    /// Up to `count` fresh random genotypes, `seeds` first.
    fn fresh_genotypes(&self, seeds: Vec<P::Genotype>, count: usize, rng: &mut SearchRng) -> Vec<P::Genotype> {
        let mut keys = HashSet::new();
        let mut out = Vec::new();
        let mut push = |g: P::Genotype, out: &mut Vec<P::Genotype>| {
            let key = self.problem.key(&g);
            if !self.ledger.contains_key(&key) && keys.insert(key) {
                out.push(g);
            }
        };
        for g in seeds {
            if out.len() < count {
                push(g, &mut out);
            }
        }
        let mut attempts = 0;
        while out.len() < count && attempts < 100 * count.max(1) {
            push(self.problem.random_genotype(rng), &mut out);
            attempts += 1;
        }
        out
    }

    fn evaluate_recorded(&mut self, genotypes: Vec<P::Genotype>, trace: &mut Trace) -> Result<usize, EvolveError> {
        let ids = self.ledger.evaluate_batch(genotypes, &self.problem)?;
        for id in &ids {
            trace.record(self.deme_id, self.ledger.samples()[id.0].score);
        }
        Ok(ids.len())
    }

    /// Evaluates the initial population: `seeds` followed by random
    /// genotypes from a stream that depends only on the seed, so guided and
    /// baseline runs with the same seed start identically.
    pub fn initialize(&mut self, seeds: Vec<P::Genotype>, trace: &mut Trace) -> Result<(), EvolveError> {
        let count = self.config.initial_size().min(self.ledger.remaining());
        let mut rng = stream_rng(self.seed, 0);
        let init = self.fresh_genotypes(seeds, count, &mut rng);
        self.initial_evaluations += self.evaluate_recorded(init, trace)?;
        self.update_stop();
        Ok(())
    }

    /// One loop iteration. Returns `None` once the run has stopped.
    pub fn step(&mut self, trace: &mut Trace) -> Result<Option<&RoundReport>, EvolveError> {
        self.update_stop();
        if self.stop.is_some() {
            return Ok(None);
        }
        let samples = self.ledger.snapshot(self.config.snapshot_cap);
        let before = self.best_score();
        let gamma_used = self.gamma;
        let m = self.config.evolution.subpop_size;

        let (contexts, rays_generated, ascent_fallback) =
            contexts(&self.problem, &self.config, self.gamma, &mut self.rng, &samples)?;
        let mut subdemes = Vec::with_capacity(contexts.len());
        for (ray_index, ctx) in &contexts {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let fit = ctx.population_fitness();
            order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));
            let mut seeds: Vec<ScoredSample<P::Genotype>> = order.iter().take(m).map(|&i| samples[i].clone()).collect();
            if let Some(best) = best_sample(&samples) {
                if !seeds.iter().any(|s| s.id == best.id) {
                    seeds.push(best.clone());
                }
            }
            let report = run_subpopulation(
                seeds,
                ctx,
                &self.config.evolution,
                &self.problem,
                &mut self.ledger,
                &mut self.rng,
                trace,
                self.deme_id,
                *ray_index,
            )?;
            let stop = report.target_reached || self.ledger.remaining() == 0;
            subdemes.push(report);
            if stop {
                break;
            }
        }
        drop(contexts);

        let mut generated: usize = subdemes.iter().map(|s| s.candidates_generated).sum();
        let skipped: usize = subdemes.iter().map(|s| s.candidates_skipped).sum();
        let mut evaluated: usize = subdemes.iter().map(|s| s.candidates_evaluated).sum();

        self.idle_rounds = if evaluated == 0 { self.idle_rounds + 1 } else { 0 };
        let mut immigrants = 0;
        if self.idle_rounds >= IDLE_BEFORE_IMMIGRANTS && self.ledger.remaining() > 0 && !self.target_reached() {
            let count = m.min(self.ledger.remaining());
            let mut rng = self.rng.clone();
            let fresh = self.fresh_genotypes(Vec::new(), count, &mut rng);
            self.rng = rng;
            immigrants = self.evaluate_recorded(fresh, trace)?;
            generated += immigrants;
            evaluated += immigrants;
            if immigrants > 0 {
                self.idle_rounds = 0;
            }
        }

        let after = self.best_score();
        if after > before {
            self.stale_rounds = 0;
        } else {
            self.stale_rounds += 1;
            if self.stale_rounds >= PATIENCE {
                self.gamma = (self.gamma / 2.0).max(GAMMA_FLOOR);
                self.stale_rounds = 0;
            }
        }

        self.reports.push(RoundReport {
            deme_id: self.deme_id,
            round_index: self.reports.len(),
            rays_generated,
            rays_used: subdemes.len(),
            candidates_generated: generated,
            candidates_skipped: skipped,
            candidates_evaluated: evaluated,
            immigrants,
            best_score_before: before,
            best_score_after: after,
            gamma_used,
            ascent_fallback,
            subdemes,
        });
        self.update_stop();
        Ok(self.reports.last())
    }

    pub fn into_outcome(self, trace: Trace) -> Option<RunOutcome<P::Genotype>> {
        let best = best_sample(self.ledger.samples())?.clone();
        let reached_target = self.problem.target().is_some_and(|t| best.score >= t);
        Some(RunOutcome {
            best,
            reached_target,
            stop_reason: self.stop.unwrap_or(StopReason::BudgetExhausted),
            initial_evaluations: self.initial_evaluations,
            reports: self.reports,
            trace,
        })
    }
}

type RoundContexts<'p, P> = (Vec<(usize, GuidanceContext<'p, P>)>, usize, bool);

/// Guided fitness contexts for this round, one per kept sub-deme, plus
/// the number of rays generated and whether the chart fell back to
/// random directions.
fn contexts<'p, P: Problem>(
    problem: &'p P,
    config: &InfoEvoConfig,
    gamma: f64,
    rng: &mut SearchRng,
    samples: &[ScoredSample<P::Genotype>],
) -> Result<RoundContexts<'p, P>, EvolveError> {
    let keep = config.kept_subdemes();
    let n = samples.len();
    if config.mode == Mode::Baseline || n < 2 {
        let policy = FilterPolicy { threshold_quantile: 0.0, metric: DistanceMetric::Genotypic, ..config.policy };
        let u = LogDistribution::uniform(n);
        let mut out = Vec::with_capacity(keep);
        for i in 0..keep {
            let mp = ModifiedPromise::new(u.clone(), u.clone(), OmegaKind::Unit, config.h)?;
            out.push((i, GuidanceContext::new(samples.to_vec(), mp, policy, problem)?));
        }
        return Ok((out, 0, false));
    }

    let metric = config.policy.metric.resolve(samples, problem);
    let pv = promise_vector(samples, &config.promise, &metric, problem)?;
    let base = pv.distribution()?;
    let params = StepParams { gamma, ..config.step };
    let d = params.chart_dim.min(n - 1);
    let chart = build_chart(&base, &pv, d, params.chart_radius(), rng.random())?;
    let rays = geodesic_rays(&chart, &params, params.exact_for(n), rng.random())?;
    let targets = rays.iter().map(|r| step_along(r, gamma)).collect::<Result<Vec<_>, _>>()?;
    let order = rank_rays(&targets, &pv);
    let mut out = Vec::with_capacity(keep);
    for &i in order.iter().take(rays.len().div_ceil(2)) {
        let mp = ModifiedPromise::new(base.clone(), targets[i].clone(), config.omega, config.h)?;
        out.push((i, GuidanceContext::new(samples.to_vec(), mp, config.policy, problem)?));
    }
    Ok((out, rays.len(), chart.ascent_fallback))
}

/// Runs a single population from random initialization until the target is
/// met, the budget is spent, or the search stalls.
pub fn info_evo_loop<P: Problem>(
    problem: P,
    config: InfoEvoConfig,
    budget: usize,
    seed: u64,
) -> Result<RunOutcome<P::Genotype>, EvolveError> {
    let mut engine = InfoEvo::new(problem, config, budget, seed, 0)?;
    let mut trace = Trace::new();
    engine.initialize(Vec::new(), &mut trace)?;
    while engine.step(&mut trace)?.is_some() {}
    engine.into_outcome(trace).ok_or(EvolveError::Ledger(crate::ledger::LedgerError::EmptyLedger))
}
