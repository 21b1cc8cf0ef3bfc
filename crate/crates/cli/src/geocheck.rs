//! Lattice geodesics against the closed-form Fisher-Rao distance.

use rand::{Rng, SeedableRng};
use serde::Serialize;

use infoevo_core::geodesic::{chart_through, dijkstra_geodesic, refine_polyline};
use infoevo_core::manifold::{geodesic_distance_exact, LogDistribution};
use infoevo_core::SearchRng;

use crate::config::ConfigError;
use crate::CliError;

/// Largest accepted relative error of a refined lattice path.
pub const TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Serialize)]
pub struct Trial {
    pub n: usize,
    pub trial: usize,
    pub exact: f64,
    pub lattice: f64,
    pub refined: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicReport {
    pub resolution: usize,
    pub levels: usize,
    pub trials: Vec<Trial>,
    pub max_rel_error: f64,
}

impl GeodesicReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn random_distribution(n: usize, rng: &mut SearchRng) -> LogDistribution {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    LogDistribution::from_weights(&w).expect("weights are positive")
}

/// Random pairs per dimension in `ns`; each pair is connected by a
/// 2-d lattice in a chart whose plane contains the true geodesic.
pub fn geodesic_check(ns: &[usize], trials: usize, resolution: usize, levels: usize, seed: u64) -> Result<GeodesicReport, CliError> {
    if trials == 0 {
        return Err(ConfigError::field("trials", "must be at least 1").into());
    }
    if ns.is_empty() {
        return Err(ConfigError::field("n", "give at least one dimension").into());
    }
    if let Some(&bad) = ns.iter().find(|&&n| n < 3) {
        return Err(ConfigError::field("n", format!("every n must be at least 3, got {bad}")).into());
    }
    if resolution < 2 {
        return Err(ConfigError::field("resolution", "must be at least 2").into());
    }
    let run = |e: &dyn std::fmt::Display| CliError::Run(e.to_string());
    let mut out = Vec::new();
    for &n in ns {
        let mut rng = SearchRng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for t in 0..trials {
            let a = random_distribution(n, &mut rng);
            let b = random_distribution(n, &mut rng);
            let exact = geodesic_distance_exact(&a, &b).map_err(|e| run(&e))?;
            let chart = chart_through(&a, &b, 2, exact * 1.1, rng.random()).map_err(|e| run(&e))?;
            let goal = chart.coordinates(&b).map_err(|e| run(&e))?;
            let coarse = dijkstra_geodesic(&chart, &[0.0, 0.0], &goal, resolution).map_err(|e| run(&e))?;
            let refined = refine_polyline(&coarse, levels).map_err(|e| run(&e))?;
            let rel_error = (refined.length() - exact).abs() / exact;
            out.push(Trial { n, trial: t, exact, lattice: coarse.length(), refined: refined.length(), rel_error });
        }
    }
    let max_rel_error = out.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GeodesicReport { resolution, levels, trials: out, max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fine_grid_passes_and_rejects_bad_input() {
        let r = geodesic_check(&[3], 5, 32, 3, 1).unwrap();
        assert!(r.passed(), "max error {}", r.max_rel_error);
        assert!(r.trials.iter().all(|t| t.refined <= t.lattice + 1e-12));
        assert!(geodesic_check(&[3], 0, 32, 3, 1).is_err());
        assert!(geodesic_check(&[2], 1, 32, 3, 1).is_err());
    }
}
