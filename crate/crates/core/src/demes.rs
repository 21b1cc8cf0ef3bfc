//! Island orchestration: demes with their own input subsets and exemplars,
//! each running guided sub-demes, plus a Fisher distance between program
//! behaviors.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{DomainError, Problem, Program};
use crate::evolve::{stream_rng, EvolveError, InfoEvo, InfoEvoConfig, RoundReport, StopReason, Trace};
use crate::ledger::ScoredSample;
use crate::manifold::{geodesic_distance_exact, LogDistribution, ManifoldError};
use crate::SearchRng;

/// Uniform mass added to behavior vectors, relative to their range.
pub const BEHAVIOR_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemeError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error("probe set is empty")]
    NoProbes,
    #[error("invalid deme budget: {0}")]
    BadBudget(String),
}

/// Turns a behavior vector into a distribution: shift to nonnegative if
/// needed, add `eps_factor · range` everywhere, normalize. Constant vectors
/// map to the uniform distribution.
pub fn behavior_distribution(v: &[f64], eps_factor: f64) -> Result<LogDistribution, DemeError> {
    if v.is_empty() {
        return Err(DemeError::NoProbes);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DomainError::NonFiniteOutput.into());
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(LogDistribution::uniform(v.len()));
    }
    let shift = if lo < 0.0 { -lo } else { 0.0 };
    let w: Vec<f64> = v.iter().map(|x| x + shift + eps_factor * range).collect();
    Ok(LogDistribution::from_weights(&w)?)
}

/// Fisher-Rao distance between two behavior vectors with the default
/// smoothing.
pub fn behavior_fisher_distance(a: &[f64], b: &[f64]) -> Result<f64, DemeError> {
    behavior_fisher_distance_with(a, b, BEHAVIOR_EPS)
}

pub fn behavior_fisher_distance_with(a: &[f64], b: &[f64], eps_factor: f64) -> Result<f64, DemeError> {
    if a.len() != b.len() {
        return Err(DomainError::DomainMismatch.into());
    }
    let pa = behavior_distribution(a, eps_factor)?;
    let pb = behavior_distribution(b, eps_factor)?;
    Ok(geodesic_distance_exact(&pa, &pb)?)
}

/// Runs both programs on `probes` and compares their outputs as
/// distributions.
pub fn program_fisher_distance<P: Program>(
    a: &P::Genotype,
    b: &P::Genotype,
    probes: &[Vec<f64>],
    problem: &P,
) -> Result<f64, DemeError> {
    if probes.is_empty() {
        return Err(DemeError::NoProbes);
    }
    behavior_fisher_distance(&problem.outputs(a, probes), &problem.outputs(b, probes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemeStatus {
    Active,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemeBudget {
    pub per_deme: usize,
    pub subdemes_per_deme: usize,
}

impl DemeBudget {
    /// Splits a global budget evenly over `demes`.
    pub fn split(global: usize, demes: usize, subdemes_per_deme: usize) -> Self {
        DemeBudget { per_deme: global / demes.max(1), subdemes_per_deme }
    }

    pub fn validate(&self, demes: usize, global: usize) -> Result<(), DemeError> {
        if self.subdemes_per_deme == 0 {
            return Err(DemeError::BadBudget("subdemes_per_deme must be positive".into()));
        }
        if self.per_deme.saturating_mul(demes) > global {
            return Err(DemeError::BadBudget(format!(
                "{demes} demes x {} evaluations exceeds the global budget {global}",
                self.per_deme
            )));
        }
        Ok(())
    }
}

/// An island: a feature subset, an exemplar, and a private search state.
#[derive(Debug, Clone)]
pub struct Deme<P: Problem> {
    pub deme_id: usize,
    pub feature_subset: Vec<usize>,
    pub exemplar: P::Genotype,
    pub status: DemeStatus,
    problem: P,
    engine: Option<InfoEvo<P>>,
}

impl<P: Problem> Deme<P> {
    /// The problem as seen from inside the deme.
    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn engine(&self) -> Option<&InfoEvo<P>> {
        self.engine.as_ref()
    }

    pub fn evaluations(&self) -> usize {
        self.engine.as_ref().map_or(0, |e| e.ledger().eval_count())
    }

    pub fn best(&self) -> Option<&ScoredSample<P::Genotype>> {
        self.engine.as_ref().and_then(|e| e.best())
    }
}

/// `count` demes with random nonempty feature subsets and exemplars
/// honoring them. A single deme keeps every feature and the unrestricted
/// problem.
pub fn spawn_demes<P: Problem>(problem: &P, count: usize, rng: &mut SearchRng) -> Vec<Deme<P>> {
    let arity = problem.input_arity().max(1);
    (0..count)
        .map(|deme_id| {
            if count == 1 {
                let exemplar = problem.random_genotype(rng);
                return Deme {
                    deme_id,
                    feature_subset: (0..arity).collect(),
                    exemplar,
                    status: DemeStatus::Active,
                    problem: problem.clone(),
                    engine: None,
                };
            }
            let size = rng.random_range(1..=arity);
            let mut features = sample(rng, arity, size).into_vec();
            features.sort_unstable();
            let raw = problem.random_genotype(rng);
            let exemplar = problem.conform(&raw, &features, rng);
            Deme {
                deme_id,
                problem: problem.restrict(&features, &exemplar),
                feature_subset: features,
                exemplar,
                status: DemeStatus::Active,
                engine: None,
            }
        })
        .collect()
}

/// Per-deme seed; deme 0 uses the run seed itself.
pub fn deme_seed(seed: u64, deme_id: usize) -> u64 {
    seed.wrapping_add((deme_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One round for one deme: initializes on first use (exemplar first), then
/// one guided iteration with `subdemes_per_deme` rays. Marks the deme
/// exhausted once its budget is spent or its search stops.
pub fn run_deme_round<P: Problem>(
    deme: &mut Deme<P>,
    config: &InfoEvoConfig,
    budget: &DemeBudget,
    seed: u64,
    trace: &mut Trace,
) -> Result<Option<RoundReport>, DemeError> {
    if deme.status == DemeStatus::Exhausted {
        return Ok(None);
    }
    if deme.engine.is_none() {
        if budget.per_deme == 0 {
            deme.status = DemeStatus::Exhausted;
            return Ok(None);
        }
        let mut cfg = *config;
        cfg.step.ray_count = budget.subdemes_per_deme;
        let mut engine = InfoEvo::new(deme.problem.clone(), cfg, budget.per_deme, deme_seed(seed, deme.deme_id), deme.deme_id)?;
        engine.initialize(vec![deme.exemplar.clone()], trace)?;
        deme.engine = Some(engine);
    }
    let engine = deme.engine.as_mut().expect("initialized above");
    let report = engine.step(trace)?.cloned();
    if engine.is_done() {
        deme.status = DemeStatus::Exhausted;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemeSummary {
    pub deme_id: usize,
    pub feature_subset: Vec<usize>,
    pub evaluations: usize,
    pub initial_evaluations: usize,
    pub best_score: Option<f64>,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone)]
pub struct DemeRunOutcome<G> {
    pub best: ScoredSample<G>,
    pub best_deme: usize,
    pub reached_target: bool,
    pub reports: Vec<RoundReport>,
    pub trace: Trace,
    pub demes: Vec<DemeSummary>,
}

impl<G> DemeRunOutcome<G> {
    pub fn initial_evaluations(&self) -> usize {
        self.demes.iter().map(|d| d.initial_evaluations).sum()
    }
}

/// Round-robin over active demes until every deme is exhausted or any deme
/// reaches the target.
pub fn run_demes<P: Problem>(
    problem: &P,
    count: usize,
    budget: DemeBudget,
    global_budget: usize,
    config: &InfoEvoConfig,
    seed: u64,
) -> Result<DemeRunOutcome<P::Genotype>, DemeError> {
    if count == 0 {
        return Err(DemeError::BadBudget("need at least one deme".into()));
    }
    budget.validate(count, global_budget)?;
    let mut spawn_rng = stream_rng(seed, 2);
    let mut demes = spawn_demes(problem, count, &mut spawn_rng);
    let mut trace = Trace::new();
    let mut reports = Vec::new();
    let reached = |d: &Deme<P>| d.engine().and_then(|e| e.stop_reason()) == Some(StopReason::TargetReached);
    'outer: loop {
        let mut progressed = false;
        for deme in demes.iter_mut() {
            if let Some(r) = run_deme_round(deme, config, &budget, seed, &mut trace)? {
                reports.push(r);
                progressed = true;
            }
            if reached(deme) {
                break 'outer;
            }
        }
        if !progressed && demes.iter().all(|d| d.status == DemeStatus::Exhausted) {
            break;
        }
    }

    let summaries: Vec<DemeSummary> = demes
        .iter()
        .map(|d| DemeSummary {
            deme_id: d.deme_id,
            feature_subset: d.feature_subset.clone(),
            evaluations: d.evaluations(),
            initial_evaluations: d.engine().map_or(0, |e| e.initial_evaluations()),
            best_score: d.best().map(|s| s.score),
            stop_reason: d.engine().and_then(|e| e.stop_reason()),
        })
        .collect();
    let (best_deme, best) = demes
        .iter()
        .filter_map(|d| d.best().map(|b| (d.deme_id, b)))
        .reduce(|acc, c| if c.1.score > acc.1.score { c } else { acc })
        .ok_or(DemeError::BadBudget("no evaluations were possible".into()))?;
    let best = best.clone();
    let reached_target = problem.target().is_some_and(|t| best.score >= t);
    Ok(DemeRunOutcome { best, best_deme, reached_target, reports, trace, demes: summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{BinOp, BitProblem, Dataset, ExprTree, Node, SymReg};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn behavior_examples() {
        let d = behavior_fisher_distance_with(&[1.0, 3.0], &[3.0, 1.0], 1e-14).unwrap();
        assert_abs_diff_eq!(d, std::f64::consts::FRAC_PI_3, epsilon = 1e-6);
        assert_eq!(behavior_fisher_distance(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0]).unwrap(), 0.0);
        let ab = behavior_fisher_distance(&[0.0, -2.0, 4.0], &[1.0, 1.0, 3.0]).unwrap();
        let ba = behavior_fisher_distance(&[1.0, 1.0, 3.0], &[0.0, -2.0, 4.0]).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(behavior_fisher_distance(&[2.0, 2.0], &[7.0, 7.0]).unwrap(), 0.0);
        assert!(matches!(
            behavior_fisher_distance(&[f64::NAN, 1.0], &[1.0, 1.0]),
            Err(DemeError::Domain(DomainError::NonFiniteOutput))
        ));
        assert!(matches!(behavior_fisher_distance(&[], &[]), Err(DemeError::NoProbes)));
    }

    #[test]
    fn negative_outputs_are_shifted() {
        let p = behavior_distribution(&[-1.0, 1.0], 0.0).unwrap();
        assert!(p.probs()[0] < 1e-8);
    }

    #[test]
    fn program_distance() {
        let p = SymReg::new(Dataset::default_quadratic(), 4);
        let x = || Node::Var(0);
        let twice = ExprTree::new(Node::op(BinOp::Add, x(), x()));
        let scaled = ExprTree::new(Node::op(BinOp::Mul, Node::Const(2), x()));
        let probes = p.dataset().inputs.clone();
        assert_eq!(program_fisher_distance(&twice, &scaled, &probes, &p).unwrap(), 0.0);
        assert!(program_fisher_distance(&twice, &ExprTree::new(Node::op(BinOp::Mul, x(), x())), &probes, &p).unwrap() > 0.0);
        assert!(matches!(program_fisher_distance(&twice, &scaled, &[], &p), Err(DemeError::NoProbes)));
    }

    #[test]
    fn spawning() {
        let p = SymReg::new(
            Dataset::new(vec![vec![0.0, 1.0], vec![1.0, 2.0]], vec![1.0, 3.0]).unwrap(),
            3,
        );
        let one = spawn_demes(&p, 1, &mut SearchRng::seed_from_u64(1));
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].feature_subset, vec![0, 1]);
        let four = spawn_demes(&p, 4, &mut SearchRng::seed_from_u64(1));
        let ids: Vec<usize> = four.iter().map(|d| d.deme_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        for d in &four {
            assert!(!d.feature_subset.is_empty() && d.feature_subset.iter().all(|&f| f < 2));
            assert!(d.exemplar.variables().iter().all(|v| d.feature_subset.contains(v)));
        }
        let again = spawn_demes(&p, 4, &mut SearchRng::seed_from_u64(1));
        for (a, b) in four.iter().zip(&again) {
            assert_eq!(a.feature_subset, b.feature_subset);
            assert_eq!(a.exemplar, b.exemplar);
        }
    }

    #[test]
    fn zero_budget_deme_is_exhausted() {
        let p = BitProblem::onemax(10);
        let mut demes = spawn_demes(&p, 1, &mut SearchRng::seed_from_u64(2));
        let budget = DemeBudget { per_deme: 0, subdemes_per_deme: 3 };
        let mut trace = Trace::new();
        let r = run_deme_round(&mut demes[0], &InfoEvoConfig::default(), &budget, 1, &mut trace).unwrap();
        assert!(r.is_none());
        assert_eq!(demes[0].status, DemeStatus::Exhausted);
        assert!(trace.is_empty());
    }

    #[test]
    fn budget_validation() {
        assert!(DemeBudget { per_deme: 100, subdemes_per_deme: 3 }.validate(3, 300).is_ok());
        assert!(DemeBudget { per_deme: 101, subdemes_per_deme: 3 }.validate(3, 300).is_err());
        assert!(DemeBudget { per_deme: 1, subdemes_per_deme: 0 }.validate(1, 300).is_err());
        assert_eq!(DemeBudget::split(1000, 3, 2).per_deme, 333);
    }

    proptest! {
        #[test]
        fn behavior_triangle_inequality(
            a in proptest::collection::vec(-10.0..10.0f64, 5),
            b in proptest::collection::vec(-10.0..10.0f64, 5),
            c in proptest::collection::vec(-10.0..10.0f64, 5),
        ) {
            let ab = behavior_fisher_distance(&a, &b).unwrap();
            let bc = behavior_fisher_distance(&b, &c).unwrap();
            let ac = behavior_fisher_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, behavior_fisher_distance(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
        }
    }
}
