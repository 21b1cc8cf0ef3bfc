//! The space of probability distributions over a fixed evaluated population.
//!
//! A point is stored as a log-probability vector `phi` with `Σ exp(phi_i) = 1`.
//! The tangent space at `phi` is the set of vectors with zero expectation under
//! the weighted inner product `<f, g>_phi = Σ f_i g_i exp(phi_i)`, which is the
//! Fisher-Rao metric on the open simplex.
//!
//! Geodesics are computed through the isometric embedding `p -> 2 sqrt(p)` onto
//! the radius-2 sphere, where they become great-circle arcs. This gives closed
//! forms for the distance, exponential map and logarithm map.

use thiserror::Error;

/// Per-coordinate probability floor applied before taking logarithms.
pub const EPS_FLOOR: f64 = 1e-9;

/// Tolerance used for the normalization and tangency invariants.
pub const NORM_TOL: f64 = 1e-10;

const SPHERE_RADIUS: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("weight {index} is negative or not finite ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("empty weight vector")]
    Empty,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tangent vector has zero norm")]
    ZeroTangent,
}

/// A point of the distribution manifold, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDistribution {
    phi: Vec<f64>,
}

impl LogDistribution {
    /// Builds a distribution proportional to `weights`, flooring each entry at
    /// [`EPS_FLOOR`] times the total before normalizing.
    pub fn from_weights(weights: &[f64]) -> Result<Self, ManifoldError> {
        Self::from_weights_with_floor(weights, EPS_FLOOR)
    }

    pub fn from_weights_with_floor(weights: &[f64], floor: f64) -> Result<Self, ManifoldError> {
        if weights.is_empty() {
            return Err(ManifoldError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ManifoldError::NegativeWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ManifoldError::AllZeroWeights);
        }
        let min_w = floor * total;
        let floored: Vec<f64> = weights.iter().map(|&w| w.max(min_w)).collect();
        Ok(Self::from_positive(&floored))
    }

    /// Normalizes a vector of nonnegative masses with a positive sum. Entries
    /// that are exactly zero yield `-inf` log-probabilities, so callers outside
    /// this module go through [`LogDistribution::from_weights`].
    fn from_positive(masses: &[f64]) -> Self {
        let z: f64 = masses.iter().sum();
        let phi = masses.iter().map(|&m| (m / z).ln()).collect();
        LogDistribution { phi }
    }

    /// Uniform distribution over `n` points.
    pub fn uniform(n: usize) -> Self {
        LogDistribution { phi: vec![-(n as f64).ln(); n] }
    }

    /// Wraps raw log-probabilities after renormalizing them.
    pub fn from_log_probs(phi: &[f64]) -> Result<Self, ManifoldError> {
        if phi.is_empty() {
            return Err(ManifoldError::Empty);
        }
        let max = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = phi.iter().map(|&x| (x - max).exp()).collect();
        Self::from_weights(&weights)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn probs(&self) -> Vec<f64> {
        self.phi.iter().map(|x| x.exp()).collect()
    }

    fn sphere_point(&self) -> Vec<f64> {
        self.phi.iter().map(|x| SPHERE_RADIUS * (0.5 * x).exp()).collect()
    }

    fn check_len(&self, got: usize) -> Result<(), ManifoldError> {
        if got != self.len() {
            return Err(ManifoldError::LengthMismatch { expected: self.len(), got });
        }
        Ok(())
    }
}

/// A tangent vector, tied to the base point it was projected at.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    f: Vec<f64>,
    base: LogDistribution,
}

impl TangentVector {
    pub fn components(&self) -> &[f64] {
        &self.f
    }

    pub fn base(&self) -> &LogDistribution {
        &self.base
    }

    pub fn norm(&self) -> f64 {
        weighted_dot(&self.base.phi, &self.f, &self.f).sqrt()
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector { f: self.f.iter().map(|x| x * s).collect(), base: self.base.clone() }
    }

    /// Unit vector in the same direction, or `None` for a (numerically) zero vector.
    pub fn normalized(&self) -> Option<TangentVector> {
        let norm = self.norm();
        if norm < 1e-300 || !norm.is_finite() {
            None
        } else {
            Some(self.scaled(1.0 / norm))
        }
    }

    /// Linear combination `Σ c_j v_j` of tangent vectors sharing a base.
    pub fn combine(base: &LogDistribution, parts: &[(f64, &TangentVector)]) -> TangentVector {
        let mut f = vec![0.0; base.len()];
        for (c, v) in parts {
            for (acc, x) in f.iter_mut().zip(&v.f) {
                *acc += c * x;
            }
        }
        TangentVector { f, base: base.clone() }
    }
}

fn weighted_dot(phi: &[f64], f: &[f64], g: &[f64]) -> f64 {
    phi.iter().zip(f).zip(g).map(|((p, a), b)| a * b * p.exp()).sum()
}

/// `F(phi) = Σ exp(phi_i)`, the total mass of an unnormalized log-vector.
pub fn mass(phi: &[f64]) -> f64 {
    phi.iter().map(|x| x.exp()).sum()
}

/// The weighted inner product `Σ f_i g_i exp(phi_i)` at `base`.
pub fn inner(base: &LogDistribution, f: &[f64], g: &[f64]) -> Result<f64, ManifoldError> {
    base.check_len(f.len())?;
    base.check_len(g.len())?;
    Ok(weighted_dot(&base.phi, f, g))
}

/// Differential of the mass function at `base` applied to `f`; identical to
/// `inner(base, f, 1)`, i.e. the gradient of the mass is the all-ones vector.
pub fn differential_mass(base: &LogDistribution, f: &[f64]) -> Result<f64, ManifoldError> {
    let ones = vec![1.0; base.len()];
    inner(base, f, &ones)
}

/// Removes the component of `f` along the all-ones normal direction.
pub fn project_tangent(base: &LogDistribution, f: &[f64]) -> Result<TangentVector, ManifoldError> {
    let mean = differential_mass(base, f)?;
    let mut projected: Vec<f64> = f.iter().map(|x| x - mean).collect();
    // second pass removes the rounding residue of the first
    let residue = differential_mass(base, &projected)?;
    for x in &mut projected {
        *x -= residue;
    }
    Ok(TangentVector { f: projected, base: base.clone() })
}

/// Bhattacharyya coefficient and the chord-based angle between unit-sphere images.
fn sphere_angle(a: &LogDistribution, b: &LogDistribution) -> f64 {
    let ua: Vec<f64> = a.phi.iter().map(|x| (0.5 * x).exp()).collect();
    let ub: Vec<f64> = b.phi.iter().map(|x| (0.5 * x).exp()).collect();
    let na = ua.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = ub.iter().map(|x| x * x).sum::<f64>().sqrt();
    let chord = ua
        .iter()
        .zip(&ub)
        .map(|(x, y)| {
            let d = x / na - y / nb;
            d * d
        })
        .sum::<f64>()
        .sqrt();
    // 2 asin(c/2) equals acos(BC) for unit vectors and keeps precision near 0
    2.0 * (0.5 * chord).clamp(0.0, 1.0).asin()
}

/// Closed-form Fisher-Rao distance `2 arccos(Σ sqrt(p_i q_i))`.
pub fn geodesic_distance_exact(a: &LogDistribution, b: &LogDistribution) -> Result<f64, ManifoldError> {
    a.check_len(b.len())?;
    Ok(SPHERE_RADIUS * sphere_angle(a, b))
}

/// Follows the geodesic from `base` with initial velocity `v` for time `t`.
pub fn exp_map(base: &LogDistribution, v: &TangentVector, t: f64) -> Result<LogDistribution, ManifoldError> {
    base.check_len(v.f.len())?;
    if t == 0.0 {
        return Ok(base.clone());
    }
    let speed = v.norm();
    if speed == 0.0 {
        return Err(ManifoldError::ZeroTangent);
    }
    let q0 = base.sphere_point();
    // push-forward of f under p -> 2 sqrt(p) is sqrt(p_i) f_i
    let vq: Vec<f64> = base.phi.iter().zip(&v.f).map(|(p, f)| (0.5 * p).exp() * f).collect();
    let angle = t * speed / SPHERE_RADIUS;
    let (s, c) = angle.sin_cos();
    let masses: Vec<f64> = q0
        .iter()
        .zip(&vq)
        .map(|(q, w)| {
            let x = c * q + s * SPHERE_RADIUS * w / speed;
            0.25 * x * x
        })
        .collect();
    LogDistribution::from_weights(&masses)
}

/// Inverse of [`exp_map`]: the initial velocity reaching `target` at `t = 1`.
pub fn log_map(base: &LogDistribution, target: &LogDistribution) -> Result<TangentVector, ManifoldError> {
    base.check_len(target.len())?;
    let theta = sphere_angle(base, target);
    let n = base.len();
    if theta == 0.0 {
        return Ok(TangentVector { f: vec![0.0; n], base: base.clone() });
    }
    let q0 = base.sphere_point();
    let q1 = target.sphere_point();
    let r2 = SPHERE_RADIUS * SPHERE_RADIUS;
    let cos_t = q0.iter().zip(&q1).map(|(a, b)| a * b).sum::<f64>() / r2;
    let w: Vec<f64> = q0.iter().zip(&q1).map(|(a, b)| b - cos_t * a).collect();
    let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if w_norm == 0.0 {
        return Ok(TangentVector { f: vec![0.0; n], base: base.clone() });
    }
    let dist = SPHERE_RADIUS * theta;
    let f: Vec<f64> = base
        .phi
        .iter()
        .zip(&w)
        .map(|(p, wi)| wi / w_norm * dist / (0.5 * p).exp())
        .collect();
    let tangent = project_tangent(base, &f)?;
    // projection removes only rounding residue; restore the exact length
    let norm = tangent.norm();
    Ok(if norm > 0.0 { tangent.scaled(dist / norm) } else { tangent })
}

/// Point at fraction `s` of the way along the geodesic from `a` to `b`.
pub fn geodesic_interpolate(a: &LogDistribution, b: &LogDistribution, s: f64) -> Result<LogDistribution, ManifoldError> {
    let v = log_map(a, b)?;
    if v.norm() == 0.0 {
        return Ok(a.clone());
    }
    exp_map(a, &v, s)
}

/// Orthonormalizes `v` against `basis` under the inner product at `base`.
pub fn gram_schmidt_step(base: &LogDistribution, v: &TangentVector, basis: &[TangentVector]) -> Option<TangentVector> {
    let mut f = v.f.clone();
    for _ in 0..2 {
        for u in basis {
            let c = weighted_dot(&base.phi, &f, &u.f);
            for (x, y) in f.iter_mut().zip(&u.f) {
                *x -= c * y;
            }
        }
    }
    let candidate = project_tangent(base, &f).ok()?;
    if candidate.norm() < 1e-12 {
        return None;
    }
    candidate.normalized()
}
