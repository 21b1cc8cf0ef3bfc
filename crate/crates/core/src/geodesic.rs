//! Numerical geodesic search in a low-dimensional chart of the distribution
//! manifold: Dijkstra on a lazily built lattice, hierarchical polyline
//! refinement, ray generation and fixed-length stepping.
//!
//! A [`Chart`] uses normal coordinates at its base point: coordinates `c`
//! map to `exp_base(Σ c_j u_j)` for orthonormal tangent directions `u_j`.
//! Lattice edges are weighted by the exact Fisher-Rao distance between the
//! distributions at their endpoints, so the only approximation is the shape
//! of the lattice path.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{
    exp_map, geodesic_distance_exact, geodesic_interpolate, gram_schmidt_step, log_map, project_tangent,
    LogDistribution, ManifoldError, TangentVector,
};
use crate::promise::PromiseVector;
use crate::SearchRng;

/// Populations larger than this use closed-form rays under [`RayMode::Auto`].
pub const AUTO_EXACT_THRESHOLD: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesicError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("chart dimension {d} needs at least {} points, have {n}", d + 1)]
    ChartTooLarge { d: usize, n: usize },
    #[error("goal lies outside the chart radius")]
    GoalOutsideChart,
    #[error("no lattice path between start and goal")]
    NoPath,
    #[error("step {gamma} exceeds ray length {length}")]
    GammaExceedsRay { gamma: f64, length: f64 },
    #[error("invalid step parameters: {0}")]
    BadParams(String),
}

/// How rays are traced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RayMode {
    /// Closed-form rays for populations above [`AUTO_EXACT_THRESHOLD`], lattice otherwise.
    #[default]
    Auto,
    Exact,
    Lattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepParams {
    pub gamma: f64,
    pub ray_count: usize,
    pub grid_resolution: usize,
    pub refinement_levels: usize,
    pub chart_dim: usize,
    pub ray_mode: RayMode,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            gamma: 0.25,
            ray_count: 5,
            grid_resolution: 32,
            refinement_levels: 3,
            chart_dim: 2,
            ray_mode: RayMode::Auto,
        }
    }
}

impl StepParams {
    pub fn validate(&self) -> Result<(), GeodesicError> {
        if !(self.gamma > 0.0 && self.gamma < std::f64::consts::PI) {
            return Err(GeodesicError::BadParams(format!("gamma must lie in (0, pi), got {}", self.gamma)));
        }
        if self.ray_count == 0 {
            return Err(GeodesicError::BadParams("ray_count must be positive".into()));
        }
        if self.grid_resolution < 2 {
            return Err(GeodesicError::BadParams("grid_resolution must be at least 2".into()));
        }
        if !(1..=3).contains(&self.chart_dim) {
            return Err(GeodesicError::BadParams("chart_dim must be 1, 2 or 3".into()));
        }
        Ok(())
    }

    /// Chart radius leaving two lattice cells of margin around goals at `2 gamma`.
    pub fn chart_radius(&self) -> f64 {
        2.0 * self.gamma * (1.0 + 2.0 / self.grid_resolution as f64)
    }

    pub fn exact_for(&self, n: usize) -> bool {
        match self.ray_mode {
            RayMode::Auto => n > AUTO_EXACT_THRESHOLD,
            RayMode::Exact => true,
            RayMode::Lattice => false,
        }
    }
}

/// Normal-coordinate chart at a base distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub base: LogDistribution,
    pub directions: Vec<TangentVector>,
    pub radius: f64,
    /// Set when the promise-ascent direction vanished and all directions are random.
    pub ascent_fallback: bool,
}

impl Chart {
    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Tangent vector `Σ c_j u_j`.
    pub fn tangent(&self, coords: &[f64]) -> TangentVector {
        let parts: Vec<(f64, &TangentVector)> = coords.iter().cloned().zip(&self.directions).collect();
        TangentVector::combine(&self.base, &parts)
    }

    pub fn point(&self, coords: &[f64]) -> Result<LogDistribution, GeodesicError> {
        if coords.iter().all(|&c| c == 0.0) {
            return Ok(self.base.clone());
        }
        Ok(exp_map(&self.base, &self.tangent(coords), 1.0)?)
    }

    /// Coordinates of the projection of `log_base(target)` onto the chart directions.
    pub fn coordinates(&self, target: &LogDistribution) -> Result<Vec<f64>, GeodesicError> {
        let v = log_map(&self.base, target)?;
        self.directions
            .iter()
            .map(|u| Ok(crate::manifold::inner(&self.base, v.components(), u.components())?))
            .collect()
    }
}

fn random_tangent(base: &LogDistribution, rng: &mut SearchRng) -> Result<TangentVector, ManifoldError> {
    let raw: Vec<f64> = (0..base.len()).map(|_| rng.sample(StandardNormal)).collect();
    project_tangent(base, &raw)
}

/// Builds a chart whose first direction points mass toward high-promise
/// samples; the remaining directions are seeded random orthonormal tangents.
pub fn build_chart(
    base: &LogDistribution,
    promise: &PromiseVector,
    d: usize,
    radius: f64,
    seed: u64,
) -> Result<Chart, GeodesicError> {
    let n = base.len();
    if d == 0 || n < d + 1 {
        return Err(GeodesicError::ChartTooLarge { d, n });
    }
    if promise.values().len() != n {
        return Err(ManifoldError::LengthMismatch { expected: n, got: promise.values().len() }.into());
    }
    let mut rng = SearchRng::seed_from_u64(seed);
    let ascent = project_tangent(base, promise.values())?;
    let mut directions = Vec::with_capacity(d);
    let ascent_fallback = match ascent.normalized() {
        Some(u) if ascent.norm() >= 1e-12 => {
            directions.push(u);
            false
        }
        _ => true,
    };
    let mut attempts = 0;
    while directions.len() < d {
        attempts += 1;
        if attempts > 100 {
            return Err(GeodesicError::ChartTooLarge { d, n });
        }
        let v = random_tangent(base, &mut rng)?;
        if let Some(u) = gram_schmidt_step(base, &v, &directions) {
            directions.push(u);
        }
    }
    Ok(Chart { base: base.clone(), directions, radius, ascent_fallback })
}

/// Builds a chart at `base` whose coordinate plane contains the geodesic
/// direction toward `target`, rotated by a seeded random angle so the target
/// generally sits off the lattice axes.
pub fn chart_through(
    base: &LogDistribution,
    target: &LogDistribution,
    d: usize,
    radius: f64,
    seed: u64,
) -> Result<Chart, GeodesicError> {
    let n = base.len();
    if d < 2 || n < d + 1 {
        return Err(GeodesicError::ChartTooLarge { d, n });
    }
    let mut rng = SearchRng::seed_from_u64(seed);
    let toward = log_map(base, target)?;
    let g = toward.normalized().ok_or(ManifoldError::ZeroTangent)?;
    let mut basis = vec![g];
    let mut attempts = 0;
    while basis.len() < d {
        attempts += 1;
        if attempts > 100 {
            return Err(GeodesicError::ChartTooLarge { d, n });
        }
        let v = random_tangent(base, &mut rng)?;
        if let Some(u) = gram_schmidt_step(base, &v, &basis) {
            basis.push(u);
        }
    }
    let phi: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
    let (s, c) = phi.sin_cos();
    let u1 = TangentVector::combine(base, &[(c, &basis[0]), (s, &basis[1])]);
    let u2 = TangentVector::combine(base, &[(-s, &basis[0]), (c, &basis[1])]);
    basis[0] = u1;
    basis[1] = u2;
    Ok(Chart { base: base.clone(), directions: basis, radius, ascent_fallback: false })
}

/// A discretized path on the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPolyline {
    points: Vec<LogDistribution>,
    length: f64,
}

impl GeodesicPolyline {
    pub fn new(points: Vec<LogDistribution>) -> Result<Self, GeodesicError> {
        if points.is_empty() {
            return Err(GeodesicError::NoPath);
        }
        let mut length = 0.0;
        for w in points.windows(2) {
            length += geodesic_distance_exact(&w[0], &w[1])?;
        }
        Ok(GeodesicPolyline { points, length })
    }

    pub fn points(&self) -> &[LogDistribution] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn first(&self) -> &LogDistribution {
        &self.points[0]
    }

    pub fn last(&self) -> &LogDistribution {
        &self.points[self.points.len() - 1]
    }

    /// Samples the exact geodesic `exp_base(t v)` for `t` in `[0, 1]`.
    pub fn from_exp(base: &LogDistribution, v: &TangentVector, segments: usize) -> Result<Self, GeodesicError> {
        let segments = segments.max(1);
        let points = (0..=segments)
            .map(|j| exp_map(base, v, j as f64 / segments as f64))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    cost: f64,
    node: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Relative weight of the chord-offset term in lattice edge costs.
const CHORD_WEIGHT: f64 = 0.03;

/// Midpoint-relaxation passes per refinement level.
const RELAX_SWEEPS: usize = 2;

/// Euclidean distance in chart coordinates from `p` to the segment `a`-`b`.
fn chord_offset(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|x| x * x).sum();
    let t = if len2 > 0.0 {
        (ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ap.iter().zip(&ab).map(|(x, y)| (x - t * y).powi(2)).sum::<f64>().sqrt()
}

struct Lattice<'a> {
    chart: &'a Chart,
    spacing: f64,
    bound: f64,
    start: Vec<f64>,
    goal: Vec<f64>,
    index: HashMap<Vec<i64>, usize>,
    coords: Vec<Vec<f64>>,
    cells: Vec<Option<Vec<i64>>>,
    points: Vec<LogDistribution>,
}

impl<'a> Lattice<'a> {
    fn cell_coords(&self, cell: &[i64]) -> Vec<f64> {
        cell.iter().map(|&i| self.spacing * i as f64).collect()
    }

    fn inside(&self, coords: &[f64]) -> bool {
        coords.iter().all(|c| c.abs() <= self.bound)
    }

    fn add(&mut self, coords: Vec<f64>, cell: Option<Vec<i64>>) -> Result<usize, GeodesicError> {
        let id = self.points.len();
        self.points.push(self.chart.point(&coords)?);
        if let Some(c) = &cell {
            self.index.insert(c.clone(), id);
        }
        self.coords.push(coords);
        self.cells.push(cell);
        Ok(id)
    }

    fn node(&mut self, cell: Vec<i64>) -> Result<usize, GeodesicError> {
        if let Some(&id) = self.index.get(&cell) {
            return Ok(id);
        }
        let coords = self.cell_coords(&cell);
        self.add(coords, Some(cell))
    }

    /// Lattice cells within one spacing of `p` in every coordinate.
    fn cells_around(&self, p: &[f64]) -> Vec<Vec<i64>> {
        let mut out: Vec<Vec<i64>> = vec![vec![]];
        for &x in p {
            let lo = ((x - self.spacing) / self.spacing - 1e-9).ceil() as i64;
            let hi = ((x + self.spacing) / self.spacing + 1e-9).floor() as i64;
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (lo..=hi).map(move |i| {
                        let mut c = prefix.clone();
                        c.push(i);
                        c
                    })
                })
                .collect();
        }
        out
    }

    fn near(&self, a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= self.spacing * (1.0 + 1e-9))
    }

    /// Exact edge length, inflated slightly by how far the edge midpoint
    /// strays from the start-goal chord. Among lattice paths of equal exact
    /// length this prefers the evenly interleaved staircase, which refinement
    /// straightens quickly; the reported length is always the exact one.
    fn edge_cost(&self, a: usize, b: usize) -> Result<f64, GeodesicError> {
        let exact = geodesic_distance_exact(&self.points[a], &self.points[b])?;
        let mid: Vec<f64> = self.coords[a].iter().zip(&self.coords[b]).map(|(x, y)| 0.5 * (x + y)).collect();
        let offset = chord_offset(&mid, &self.start, &self.goal);
        Ok(exact * (1.0 + CHORD_WEIGHT * offset / self.spacing))
    }
}

fn neighbor_offsets(d: usize) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-1..=1).map(move |s| {
                    let mut p = prefix.clone();
                    p.push(s);
                    p
                })
            })
            .collect();
    }
    out.retain(|o| o.iter().any(|&s| s != 0));
    out
}

/// Shortest lattice path between two chart points.
///
/// The lattice is anchored at the chart origin with spacing
/// `radius / resolution` and uses all `3^d - 1` neighbor offsets
/// (8-connected in 2-d, 26-connected in 3-d). Nodes are materialized on first
/// touch. Start and goal join the lattice through every node within one
/// spacing of them in each coordinate.
pub fn dijkstra_geodesic(
    chart: &Chart,
    start: &[f64],
    goal: &[f64],
    resolution: usize,
) -> Result<GeodesicPolyline, GeodesicError> {
    let d = chart.dim();
    if start.len() != d || goal.len() != d {
        return Err(ManifoldError::LengthMismatch { expected: d, got: start.len().min(goal.len()) }.into());
    }
    let norm = |c: &[f64]| c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * chart.radius.max(1.0);
    if norm(start) > chart.radius + tol || norm(goal) > chart.radius + tol {
        return Err(GeodesicError::GoalOutsideChart);
    }
    if start == goal {
        return GeodesicPolyline::new(vec![chart.point(start)?]);
    }
    let spacing = chart.radius / resolution.max(1) as f64;
    let mut lattice = Lattice {
        chart,
        spacing,
        bound: chart.radius + spacing,
        start: start.to_vec(),
        goal: goal.to_vec(),
        index: HashMap::new(),
        coords: Vec::new(),
        cells: Vec::new(),
        points: Vec::new(),
    };
    let source = lattice.add(start.to_vec(), None)?;
    let sink = lattice.add(goal.to_vec(), None)?;
    let offsets = neighbor_offsets(d);

    let mut dist: Vec<f64> = vec![0.0, f64::INFINITY];
    let mut prev: Vec<Option<usize>> = vec![None, None];
    let mut done: Vec<bool> = vec![false, false];
    let mut heap = BinaryHeap::new();
    heap.push(QueueEntry { cost: 0.0, node: source });

    while let Some(QueueEntry { cost, node }) = heap.pop() {
        if done[node] || cost > dist[node] {
            continue;
        }
        if node == sink {
            break;
        }
        done[node] = true;
        let mut next_ids = Vec::new();
        match lattice.cells[node].clone() {
            None => {
                for cell in lattice.cells_around(&lattice.coords[node].clone()) {
                    if lattice.inside(&lattice.cell_coords(&cell)) {
                        next_ids.push(lattice.node(cell)?);
                    }
                }
            }
            Some(cell) => {
                for off in &offsets {
                    let next: Vec<i64> = cell.iter().zip(off).map(|(a, b)| a + b).collect();
                    if lattice.inside(&lattice.cell_coords(&next)) {
                        next_ids.push(lattice.node(next)?);
                    }
                }
            }
        }
        if lattice.near(&lattice.coords[node], goal) {
            next_ids.push(sink);
        }
        for id in next_ids {
            if id == dist.len() {
                dist.push(f64::INFINITY);
                prev.push(None);
                done.push(false);
            }
            if done[id] {
                continue;
            }
            let c = cost + lattice.edge_cost(node, id)?;
            if c < dist[id] {
                dist[id] = c;
                prev[id] = Some(node);
                heap.push(QueueEntry { cost: c, node: id });
            }
        }
    }

    if prev[sink].is_none() {
        return Err(GeodesicError::NoPath);
    }
    let mut at = sink;
    let mut path = vec![lattice.points[sink].clone()];
    while let Some(p) = prev[at] {
        path.push(lattice.points[p].clone());
        at = p;
    }
    path.reverse();
    // start or goal may coincide with a lattice node
    path.dedup_by(|a, b| geodesic_distance_exact(a, b).map(|x| x == 0.0).unwrap_or(false));
    GeodesicPolyline::new(path)
}

/// Hierarchical refinement: each level inserts geodesic midpoints between
/// consecutive points, then relaxes every interior point in turn to the
/// midpoint of its neighbors, which minimizes the sum of the two adjacent
/// distances. Endpoints never move.
pub fn refine_polyline(polyline: &GeodesicPolyline, levels: usize) -> Result<GeodesicPolyline, GeodesicError> {
    refine_polyline_with(polyline, levels, RELAX_SWEEPS)
}

pub fn refine_polyline_with(polyline: &GeodesicPolyline, levels: usize, sweeps: usize) -> Result<GeodesicPolyline, GeodesicError> {
    let mut points = polyline.points.clone();
    if points.len() < 2 {
        return Ok(polyline.clone());
    }
    for _ in 0..levels {
        let mut refined = Vec::with_capacity(points.len() * 2 - 1);
        for w in points.windows(2) {
            refined.push(w[0].clone());
            refined.push(geodesic_interpolate(&w[0], &w[1], 0.5)?);
        }
        refined.push(points[points.len() - 1].clone());
        points = refined;
        let interior = points.len() - 1;
        for i in (0..sweeps).flat_map(|_| 1..interior) {
            let before = geodesic_distance_exact(&points[i - 1], &points[i])?
                + geodesic_distance_exact(&points[i], &points[i + 1])?;
            let candidate = geodesic_interpolate(&points[i - 1], &points[i + 1], 0.5)?;
            let after = geodesic_distance_exact(&points[i - 1], &candidate)?
                + geodesic_distance_exact(&candidate, &points[i + 1])?;
            if after < before {
                points[i] = candidate;
            }
        }
    }
    let out = GeodesicPolyline::new(points)?;
    if out.length > polyline.length {
        // rounding in midpoint maps can add ~1e-16 per segment
        return Ok(polyline.clone());
    }
    Ok(out)
}

/// A traced geodesic leaving the chart base.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicRay {
    pub origin: LogDistribution,
    pub initial_direction: TangentVector,
    pub polyline: GeodesicPolyline,
    /// Direction in chart coordinates (unit Euclidean norm).
    pub chart_direction: Vec<f64>,
}

/// Unit chart-coordinate directions for `count` rays: the ascent axis first,
/// then both signs of the other axes, then seeded random cones around the
/// ascent axis.
pub fn ray_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let axis = |j: usize, s: f64| {
        let mut v = vec![0.0; d];
        v[j] = s;
        v
    };
    let mut dirs = vec![axis(0, 1.0)];
    for j in 1..d {
        dirs.push(axis(j, 1.0));
        dirs.push(axis(j, -1.0));
    }
    if d == 1 {
        dirs.push(axis(0, -1.0));
    }
    let mut rng = SearchRng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    while dirs.len() < count {
        let mut v = axis(0, 1.0);
        if d > 1 {
            for x in v.iter_mut().skip(1) {
                *x = 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dirs.push(v.iter().map(|x| x / norm).collect());
    }
    dirs.truncate(count);
    dirs
}

/// Traces `params.ray_count` rays from the chart base, each reaching arc
/// length `2 gamma` so stepping by `gamma` stays clear of the far end.
pub fn geodesic_rays(chart: &Chart, params: &StepParams, exact: bool, seed: u64) -> Result<Vec<GeodesicRay>, GeodesicError> {
    params.validate()?;
    let reach = 2.0 * params.gamma;
    let origin = vec![0.0; chart.dim()];
    ray_directions(chart.dim(), params.ray_count, seed)
        .into_iter()
        .map(|c| {
            let unit = chart.tangent(&c);
            let polyline = if exact {
                GeodesicPolyline::from_exp(&chart.base, &unit.scaled(reach), params.grid_resolution)?
            } else {
                let goal: Vec<f64> = c.iter().map(|x| x * reach).collect();
                let coarse = dijkstra_geodesic(chart, &origin, &goal, params.grid_resolution)?;
                refine_polyline(&coarse, params.refinement_levels)?
            };
            Ok(GeodesicRay { origin: chart.base.clone(), initial_direction: unit, polyline, chart_direction: c })
        })
        .collect()
}

/// Point at arc length `gamma` along the ray's polyline.
pub fn step_along(ray: &GeodesicRay, gamma: f64) -> Result<LogDistribution, GeodesicError> {
    let poly = &ray.polyline;
    if gamma > poly.length + 1e-12 {
        return Err(GeodesicError::GammaExceedsRay { gamma, length: poly.length });
    }
    let mut left = gamma;
    for w in poly.points.windows(2) {
        let seg = geodesic_distance_exact(&w[0], &w[1])?;
        if left <= seg {
            if seg == 0.0 {
                return Ok(w[0].clone());
            }
            return Ok(geodesic_interpolate(&w[0], &w[1], left / seg)?);
        }
        left -= seg;
    }
    Ok(poly.last().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chart_for(base: &LogDistribution, d: usize, radius: f64, seed: u64) -> Chart {
        let n = base.len();
        let promise: Vec<f64> = (0..n).map(|i| (i + 1) as f64).collect();
        let pv = PromiseVector::from_values(promise).unwrap();
        build_chart(base, &pv, d, radius, seed).unwrap()
    }

    #[test]
    fn uniform_promise_triggers_fallback() {
        let base = LogDistribution::uniform(4);
        let pv = PromiseVector::from_values(vec![1.0; 4]).unwrap();
        let chart = build_chart(&base, &pv, 2, 1.0, 3).unwrap();
        assert!(chart.ascent_fallback);
        assert_eq!(chart.dim(), 2);
    }

    #[test]
    fn chart_is_orthonormal_and_deterministic() {
        let base = LogDistribution::from_weights(&[0.2, 0.5, 0.3]).unwrap();
        let chart = chart_for(&base, 2, 1.0, 17);
        let u = &chart.directions;
        let dot = crate::manifold::inner(&base, u[0].components(), u[1].components()).unwrap();
        assert!(dot.abs() < 1e-8);
        assert_abs_diff_eq!(u[0].norm(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(u[1].norm(), 1.0, epsilon = 1e-8);
        assert!(!chart.ascent_fallback);
        assert_eq!(chart, chart_for(&base, 2, 1.0, 17));
        assert!(matches!(
            build_chart(&base, &PromiseVector::from_values(vec![1.0, 2.0, 3.0]).unwrap(), 3, 1.0, 1),
            Err(GeodesicError::ChartTooLarge { .. })
        ));
    }

    #[test]
    fn dijkstra_same_start_and_goal() {
        let base = LogDistribution::uniform(3);
        let chart = chart_for(&base, 2, 1.0, 1);
        let p = dijkstra_geodesic(&chart, &[0.1, 0.0], &[0.1, 0.0], 8).unwrap();
        assert_eq!(p.points().len(), 1);
        assert_eq!(p.length(), 0.0);
        assert_eq!(
            dijkstra_geodesic(&chart, &[0.0, 0.0], &[2.0, 0.0], 8),
            Err(GeodesicError::GoalOutsideChart)
        );
    }

    #[test]
    fn dijkstra_uniform_to_skewed_n3() {
        let base = LogDistribution::uniform(3);
        let goal = LogDistribution::from_weights(&[0.7, 0.2, 0.1]).unwrap();
        let exact = geodesic_distance_exact(&base, &goal).unwrap();
        assert_abs_diff_eq!(exact, 0.785_714_632_930_197_4, epsilon = 1e-9);
        let chart = chart_for(&base, 2, exact * 1.1, 5);
        let coords = chart.coordinates(&goal).unwrap();
        let coarse = dijkstra_geodesic(&chart, &[0.0, 0.0], &coords, 32).unwrap();
        assert!((coarse.length() - exact) / exact <= 2.0 / 32.0 + 0.03);
        let refined = refine_polyline(&coarse, 3).unwrap();
        assert!((refined.length() - exact).abs() < (coarse.length() - exact).abs());
        assert!((refined.length() - exact) / exact < 0.02);
    }

    #[test]
    fn dijkstra_along_axis() {
        let base = LogDistribution::from_weights(&[0.3, 0.3, 0.2, 0.2]).unwrap();
        let chart = chart_for(&base, 2, 0.6, 9);
        let t = 0.5;
        let path = dijkstra_geodesic(&chart, &[0.0, 0.0], &[t, 0.0], 32).unwrap();
        assert!((path.length() - t).abs() / t < 0.02);
    }

    #[test]
    fn refine_subdivides_and_keeps_geodesics() {
        let base = LogDistribution::from_weights(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let chart = chart_for(&base, 2, 1.0, 2);
        let v = chart.tangent(&[0.3, 0.2]);
        let poly = GeodesicPolyline::from_exp(&base, &v, 4).unwrap();
        let refined = refine_polyline(&poly, 2).unwrap();
        assert_abs_diff_eq!(refined.length(), poly.length(), epsilon = 1e-9);
        let two = GeodesicPolyline::new(vec![poly.first().clone(), poly.last().clone()]).unwrap();
        let once = refine_polyline(&two, 1).unwrap();
        assert_eq!(once.points().len(), 3);
        assert_eq!(once.first(), two.first());
        assert_eq!(once.last(), two.last());
    }

    #[test]
    fn rays_and_steps() {
        let base = LogDistribution::from_weights(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let params = StepParams::default();
        let chart = chart_for(&base, 2, params.chart_radius(), 4);
        for exact in [true, false] {
            let rays = geodesic_rays(&chart, &params, exact, 4).unwrap();
            assert_eq!(rays.len(), params.ray_count);
            assert_eq!(rays[0].chart_direction, vec![1.0, 0.0]);
            for ray in &rays {
                assert_abs_diff_eq!(ray.initial_direction.norm(), 1.0, epsilon = 1e-8);
                assert!(ray.polyline.length() >= params.gamma);
                assert_eq!(ray.origin, *ray.polyline.first());
                assert_eq!(step_along(ray, 0.0).unwrap(), ray.origin);
                let end = step_along(ray, ray.polyline.length()).unwrap();
                assert!(geodesic_distance_exact(&end, ray.polyline.last()).unwrap() < 1e-9);
                assert!(matches!(step_along(ray, 10.0), Err(GeodesicError::GammaExceedsRay { .. })));
            }
            assert_eq!(rays, geodesic_rays(&chart, &params, exact, 4).unwrap());
        }
        let single = StepParams { ray_count: 1, ..params };
        let rays = geodesic_rays(&chart, &single, true, 4).unwrap();
        assert_eq!(rays.len(), 1);
        assert_eq!(rays[0].initial_direction, chart.directions[0]);
    }

    #[test]
    fn exact_ray_step_has_exact_distance() {
        let base = LogDistribution::from_weights(&[0.25, 0.25, 0.3, 0.2]).unwrap();
        let chart = chart_for(&base, 2, 1.0, 8);
        let params = StepParams { gamma: 0.3, ..Default::default() };
        let rays = geodesic_rays(&chart, &params, true, 8).unwrap();
        let p = step_along(&rays[0], 0.3).unwrap();
        assert_abs_diff_eq!(geodesic_distance_exact(&base, &p).unwrap(), 0.3, epsilon = 1e-6);
    }

    #[test]
    fn dijkstra_is_symmetric_under_swap() {
        let base = LogDistribution::from_weights(&[0.3, 0.1, 0.4, 0.2]).unwrap();
        let chart = chart_for(&base, 2, 1.0, 11);
        let a = [0.13, -0.41];
        let b = [-0.37, 0.52];
        let ab = dijkstra_geodesic(&chart, &a, &b, 24).unwrap();
        let ba = dijkstra_geodesic(&chart, &b, &a, 24).unwrap();
        assert!((ab.length() - ba.length()).abs() < 1e-9);
    }

    #[test]
    fn dijkstra_in_three_dimensions() {
        let base = LogDistribution::from_weights(&[0.1, 0.2, 0.3, 0.25, 0.15]).unwrap();
        let goal = LogDistribution::from_weights(&[0.3, 0.3, 0.1, 0.1, 0.2]).unwrap();
        let exact = geodesic_distance_exact(&base, &goal).unwrap();
        let chart = chart_through(&base, &goal, 3, exact * 1.1, 2).unwrap();
        let coords = chart.coordinates(&goal).unwrap();
        let coarse = dijkstra_geodesic(&chart, &[0.0; 3], &coords, 16).unwrap();
        let refined = refine_polyline(&coarse, 3).unwrap();
        assert!(refined.length() <= coarse.length());
        assert!((refined.length() - exact) / exact < 0.03);
    }

    proptest::proptest! {
        #[test]
        fn refinement_never_lengthens(seed in 0u64..500) {
            let mut rng = SearchRng::seed_from_u64(seed);
            let w: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.05).collect();
            let a = LogDistribution::from_weights(&w).unwrap();
            let w: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.05).collect();
            let b = LogDistribution::from_weights(&w).unwrap();
            let exact = geodesic_distance_exact(&a, &b).unwrap();
            let chart = chart_through(&a, &b, 2, exact * 1.1, seed).unwrap();
            let coords = chart.coordinates(&b).unwrap();
            let coarse = dijkstra_geodesic(&chart, &[0.0, 0.0], &coords, 12).unwrap();
            let refined = refine_polyline(&coarse, 2).unwrap();
            proptest::prop_assert!(refined.length() <= coarse.length() + 1e-12);
            proptest::prop_assert!(refined.length() >= exact - 1e-9);
        }
    }

    #[test]
    fn param_validation() {
        assert!(StepParams { gamma: 4.0, ..Default::default() }.validate().is_err());
        assert!(StepParams { ray_count: 0, ..Default::default() }.validate().is_err());
        assert!(StepParams::default().validate().is_ok());
    }
}
