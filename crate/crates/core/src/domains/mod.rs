//! Benchmark problems and the [`Problem`] abstraction the search runs against.
//!
//! Each problem supplies the raw score (maximized), variation operators, a
//! discrete locus view for univariate marginal sampling, and two notions of
//! distance: genotypic (syntax) and phenotypic (behavior).

mod bitstring;
mod real;
mod symreg;

pub use bitstring::{score_onemax, score_trap, BitObjective, BitProblem};
pub use real::{score_rosenbrock, score_sphere, RealObjective, RealProblem, REAL_BINS, REAL_BOX};
pub use symreg::{BinOp, Dataset, ExprTree, Node, PhenoKind, SymReg, CONST_POOL};

use std::fmt::Debug;

use thiserror::Error;

use crate::SearchRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("bit length {len} is not divisible by block size {block}")]
    BadLength { len: usize, block: usize },
    #[error("program produced a non-finite output")]
    NonFiniteOutput,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset row {row}: {reason}")]
    BadDataset { row: usize, reason: String },
    #[error("genotypes belong to different domains or shapes")]
    DomainMismatch,
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
}

/// An optimization domain. Scores are maximized.
pub trait Problem: Clone + Send + Sync {
    type Genotype: Clone + Debug + Send + Sync;

    fn name(&self) -> &str;

    /// Number of input features a deme may choose a subset of (bits,
    /// coordinates, or program variables).
    fn input_arity(&self) -> usize;

    fn score(&self, g: &Self::Genotype) -> f64;

    /// Score at or above which the run counts as solved.
    fn target(&self) -> Option<f64>;

    fn random_genotype(&self, rng: &mut SearchRng) -> Self::Genotype;

    /// Per-locus variation; `rate == 0` must return an identical copy.
    fn mutate(&self, g: &Self::Genotype, rate: f64, rng: &mut SearchRng) -> Self::Genotype;

    fn crossover(&self, a: &Self::Genotype, b: &Self::Genotype, rng: &mut SearchRng) -> Self::Genotype;

    /// Mutation rate used when the evolution config does not set one.
    fn default_mutation_rate(&self) -> f64;

    /// Discrete per-locus values used for marginal estimation.
    fn loci(&self, g: &Self::Genotype) -> Vec<u32>;

    /// Number of values each locus can take; same length as [`Problem::loci`].
    fn locus_cardinality(&self) -> Vec<u32>;

    /// Builds a valid genotype from sampled locus values, repairing where needed.
    fn from_loci(&self, loci: &[u32], rng: &mut SearchRng) -> Self::Genotype;

    fn d_geno(&self, a: &Self::Genotype, b: &Self::Genotype) -> f64;

    /// Behavioral distance. May be `+inf` when a behavior is not finite.
    fn d_pheno(&self, a: &Self::Genotype, b: &Self::Genotype) -> f64;

    /// Canonical serialized form; equal keys mean equal genotypes.
    fn key(&self, g: &Self::Genotype) -> Vec<u8>;

    fn render(&self, g: &Self::Genotype) -> String;

    /// A copy of this problem whose variation only touches `features`, with
    /// all other loci pinned to `exemplar`.
    fn restrict(&self, features: &[usize], exemplar: &Self::Genotype) -> Self;

    /// Ensures an exemplar honors a feature subset.
    fn conform(&self, g: &Self::Genotype, features: &[usize], rng: &mut SearchRng) -> Self::Genotype;
}

/// A problem whose genotypes are programs that can be run on probe inputs.
pub trait Program: Problem {
    fn outputs(&self, g: &Self::Genotype, probes: &[Vec<f64>]) -> Vec<f64>;
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Names accepted by the harness, with a one-line description each.
pub fn problem_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("onemax", "maximize the number of ones in a bitstring (--bits)"),
        ("trap", "concatenated deceptive trap-5 blocks (--bits, multiple of 5)"),
        ("sphere", "maximize -sum(x^2) over [-5,5]^d (--dim)"),
        ("rosenbrock", "maximize the negated Rosenbrock function over [-5,5]^d (--dim)"),
        ("symreg", "symbolic regression by expression trees (--max-depth, --dataset)"),
    ]
}
