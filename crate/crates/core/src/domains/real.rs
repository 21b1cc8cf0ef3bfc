use rand::Rng;
use rand_distr::StandardNormal;

use super::{euclidean, Problem};
use crate::SearchRng;

/// Search box shared by the real-vector benchmarks.
pub const REAL_BOX: (f64, f64) = (-5.0, 5.0);

/// Number of equal-width bins per coordinate in the locus view.
pub const REAL_BINS: u32 = 8;

/// Negated sum of squares; the maximum 0 sits at the origin.
pub fn score_sphere(x: &[f64]) -> f64 {
    -x.iter().map(|v| v * v).sum::<f64>()
}

/// Negated Rosenbrock valley; the maximum 0 sits at (1, ..., 1).
pub fn score_rosenbrock(x: &[f64]) -> f64 {
    -x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealObjective {
    Sphere,
    Rosenbrock,
}

#[derive(Debug, Clone)]
pub struct RealProblem {
    name: String,
    objective: RealObjective,
    dim: usize,
    target: Option<f64>,
    active: Vec<bool>,
    exemplar: Option<Vec<f64>>,
}

impl RealProblem {
    pub fn new(objective: RealObjective, dim: usize, target: Option<f64>) -> Self {
        let name = match objective {
            RealObjective::Sphere => "sphere",
            RealObjective::Rosenbrock => "rosenbrock",
        };
        RealProblem { name: name.into(), objective, dim, target, active: vec![true; dim], exemplar: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn pinned(&self, i: usize) -> Option<f64> {
        if self.active[i] {
            None
        } else {
            self.exemplar.as_ref().map(|e| e[i])
        }
    }
}

fn bin_width() -> f64 {
    (REAL_BOX.1 - REAL_BOX.0) / REAL_BINS as f64
}

impl Problem for RealProblem {
    type Genotype = Vec<f64>;

    fn name(&self) -> &str {
        &self.name
    }

    fn input_arity(&self) -> usize {
        self.dim
    }

    fn score(&self, g: &Vec<f64>) -> f64 {
        match self.objective {
            RealObjective::Sphere => score_sphere(g),
            RealObjective::Rosenbrock => score_rosenbrock(g),
        }
    }

    fn target(&self) -> Option<f64> {
        self.target
    }

    fn random_genotype(&self, rng: &mut SearchRng) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.pinned(i).unwrap_or_else(|| rng.random_range(REAL_BOX.0..REAL_BOX.1)))
            .collect()
    }

    /// Gaussian perturbation with a log-uniform step scale, so both coarse
    /// moves and fine convergence remain possible without step adaptation.
    fn mutate(&self, g: &Vec<f64>, rate: f64, rng: &mut SearchRng) -> Vec<f64> {
        let mut out = g.clone();
        for (i, x) in out.iter_mut().enumerate() {
            if self.active[i] && rate > 0.0 && rng.random::<f64>() < rate {
                let scale = 10f64.powf(rng.random_range(-5.0..0.0)) * (REAL_BOX.1 - REAL_BOX.0);
                let step: f64 = rng.sample(StandardNormal);
                *x = (*x + scale * step).clamp(REAL_BOX.0, REAL_BOX.1);
            }
        }
        out
    }

    fn crossover(&self, a: &Vec<f64>, b: &Vec<f64>, rng: &mut SearchRng) -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let t: f64 = rng.random();
                x + t * (y - x)
            })
            .collect()
    }

    fn default_mutation_rate(&self) -> f64 {
        1.0 / self.dim.max(1) as f64
    }

    fn loci(&self, g: &Vec<f64>) -> Vec<u32> {
        g.iter()
            .map(|&x| (((x - REAL_BOX.0) / bin_width()).floor() as i64).clamp(0, REAL_BINS as i64 - 1) as u32)
            .collect()
    }

    fn locus_cardinality(&self) -> Vec<u32> {
        vec![REAL_BINS; self.dim]
    }

    fn from_loci(&self, loci: &[u32], rng: &mut SearchRng) -> Vec<f64> {
        loci.iter()
            .enumerate()
            .map(|(i, &bin)| {
                self.pinned(i).unwrap_or_else(|| {
                    let lo = REAL_BOX.0 + bin as f64 * bin_width();
                    rng.random_range(lo..lo + bin_width())
                })
            })
            .collect()
    }

    fn d_geno(&self, a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        euclidean(a, b)
    }

    fn d_pheno(&self, a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        (self.score(a) - self.score(b)).abs()
    }

    fn key(&self, g: &Vec<f64>) -> Vec<u8> {
        g.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect()
    }

    fn render(&self, g: &Vec<f64>) -> String {
        let parts: Vec<String> = g.iter().map(|x| format!("{x:.6}")).collect();
        format!("[{}]", parts.join(", "))
    }

    fn restrict(&self, features: &[usize], exemplar: &Vec<f64>) -> Self {
        let mut active = vec![false; self.dim];
        for &f in features {
            active[f] = true;
        }
        RealProblem { active, exemplar: Some(exemplar.clone()), ..self.clone() }
    }

    fn conform(&self, g: &Vec<f64>, _features: &[usize], _rng: &mut SearchRng) -> Vec<f64> {
        g.clone()
    }
}
