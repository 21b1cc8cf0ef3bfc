//! Run configuration: a JSON document, overridden field by field by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use infoevo_core::domains::{
    problem_catalog, BitProblem, Dataset, PhenoKind, RealObjective, RealProblem, SymReg,
};
use infoevo_core::evolve::InfoEvoConfig;
use infoevo_core::ledger::DistanceMetric;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: line {line}, column {column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("cannot read config file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid value for `{field}`: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    InfoEvo,
    Baseline,
    Paired,
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "info_evo" | "info-evo" => Ok(RunMode::InfoEvo),
            "baseline" => Ok(RunMode::Baseline),
            "paired" => Ok(RunMode::Paired),
            other => Err(format!("unknown mode `{other}` (expected info_evo, baseline or paired)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    pub bits: usize,
    pub trap_block: usize,
    pub dim: usize,
    pub max_depth: usize,
    pub dataset: Option<PathBuf>,
    /// Overrides the problem's own success threshold.
    pub target: Option<f64>,
    /// Behavioral distance for trees: `euclidean` or `fisher`.
    pub pheno: String,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            name: "onemax".into(),
            bits: 50,
            trap_block: 5,
            dim: 10,
            max_depth: 5,
            dataset: None,
            target: None,
            pheno: "euclidean".into(),
        }
    }
}

/// Score a real-vector run must reach to count as solved, unless overridden.
pub const REAL_TARGET: f64 = -1e-3;

/// A problem instance ready to run.
#[derive(Debug, Clone)]
pub enum BuiltProblem {
    Bits(BitProblem),
    Real(RealProblem),
    Tree(SymReg),
}

impl ProblemConfig {
    pub fn build(&self) -> Result<BuiltProblem, ConfigError> {
        match self.name.as_str() {
            "onemax" | "trap" => {
                if self.bits == 0 {
                    return Err(ConfigError::field("bits", "must be positive"));
                }
                let p = if self.name == "onemax" {
                    BitProblem::onemax(self.bits)
                } else {
                    BitProblem::trap(self.bits, self.trap_block).map_err(|e| ConfigError::field("bits", e.to_string()))?
                };
                if self.target.is_some() {
                    return Err(ConfigError::field("target", "bitstring targets are fixed at the string length"));
                }
                Ok(BuiltProblem::Bits(p))
            }
            "sphere" | "rosenbrock" => {
                if self.dim == 0 {
                    return Err(ConfigError::field("dim", "must be positive"));
                }
                let objective = if self.name == "sphere" { RealObjective::Sphere } else { RealObjective::Rosenbrock };
                Ok(BuiltProblem::Real(RealProblem::new(objective, self.dim, Some(self.target.unwrap_or(REAL_TARGET)))))
            }
            "symreg" => {
                if self.max_depth == 0 {
                    return Err(ConfigError::field("max_depth", "must be positive"));
                }
                let dataset = match &self.dataset {
                    Some(path) => Dataset::from_csv_path(path).map_err(|e| ConfigError::field("dataset", e.to_string()))?,
                    None => Dataset::default_quadratic(),
                };
                let pheno = match self.pheno.as_str() {
                    "euclidean" => PhenoKind::Euclidean,
                    "fisher" => PhenoKind::Fisher,
                    other => return Err(ConfigError::field("pheno", format!("unknown behavioral distance `{other}`"))),
                };
                let mut p = SymReg::new(dataset, self.max_depth).with_pheno(pheno);
                if let Some(t) = self.target {
                    p = p.with_target(Some(t));
                }
                Ok(BuiltProblem::Tree(p))
            }
            other => {
                let names: Vec<&str> = problem_catalog().iter().map(|(n, _)| *n).collect();
                Err(ConfigError::field("problem", format!("unknown problem `{other}` (known: {})", names.join(", "))))
            }
        }
    }

    /// Neighbor metric used when the config does not name one: genotypic for
    /// bitstrings and real vectors, whose behavior is the score itself.
    pub fn default_metric(&self) -> DistanceMetric {
        match self.name.as_str() {
            "symreg" => DistanceMetric::Blended { lambda: 0.5 },
            _ => DistanceMetric::Genotypic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub budget: usize,
    pub seed: Option<u64>,
    pub mode: RunMode,
    pub demes: usize,
    /// Rays (and candidate sub-demes) per deme round; defaults to the
    /// step parameters' ray count.
    pub subdemes: Option<usize>,
    /// Neighbor metric; `None` picks a per-problem default.
    pub metric: Option<DistanceMetric>,
    pub search: InfoEvoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemConfig::default(),
            budget: 20000,
            seed: None,
            mode: RunMode::InfoEvo,
            demes: 1,
            subdemes: None,
            metric: None,
            search: InfoEvoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&text, path)
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| ConfigError::field("seed", "a seed is required (--seed or \"seed\" in the config)"))
    }

    pub fn subdemes(&self) -> usize {
        self.subdemes.unwrap_or(self.search.step.ray_count)
    }

    /// Search configuration with the per-problem metric default applied.
    pub fn effective_search(&self) -> InfoEvoConfig {
        let mut s = self.search;
        s.policy.metric = self.metric.unwrap_or_else(|| self.problem.default_metric());
        s.step.ray_count = self.subdemes();
        s
    }

    /// Checks everything a run needs, naming the first offending field.
    pub fn validate(&self) -> Result<BuiltProblem, ConfigError> {
        self.seed()?;
        if self.budget == 0 {
            return Err(ConfigError::field("budget", "must be positive"));
        }
        if self.demes == 0 {
            return Err(ConfigError::field("demes", "must be positive"));
        }
        if self.budget / self.demes == 0 {
            return Err(ConfigError::field("budget", "too small to give every deme an evaluation"));
        }
        if self.subdemes() == 0 {
            return Err(ConfigError::field("subdemes", "must be positive"));
        }
        self.effective_search().validate().map_err(|e| ConfigError::field("search", e.to_string()))?;
        self.problem.build()
    }
}
