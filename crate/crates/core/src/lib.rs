//! Information-geometric guidance for evolutionary search.
//!
//! An evaluated population defines a finite simplex of distributions. A
//! heuristic promise distribution over the population is pushed along
//! Fisher-Rao geodesics; each stepped distribution becomes a guided fitness
//! for a sub-population, and nearest-neighbor estimates of that fitness decide
//! which new candidates are worth an expensive evaluation.

pub mod demes;
pub mod domains;
pub mod evolve;
pub mod geodesic;
pub mod guidance;
pub mod ledger;
pub mod manifold;
pub mod promise;

/// Random generator used for every seeded stream in the crate.
pub type SearchRng = rand_chacha::ChaCha8Rng;
