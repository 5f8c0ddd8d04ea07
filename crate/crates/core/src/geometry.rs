//! lp geometry toolkit: norms, dual exponents, geometry-dependent regularity
//! constants, and constraint sets with linear-minimization and projection
//! oracles.
//!
//! Conventions: exponents live in [1, inf] with `inf` meaning the max norm;
//! logarithms in regularity constants are natural.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

// ============================================================================
// Exponents
// ============================================================================

/// An lp-norm exponent in [1, inf].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LpExponent(f64);

impl LpExponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(CoreError::config("p", format!("exponent must lie in [1, inf], got {p}")));
        }
        Ok(LpExponent(p))
    }

    pub fn one() -> Self {
        LpExponent(1.0)
    }

    pub fn two() -> Self {
        LpExponent(2.0)
    }

    pub fn infinity() -> Self {
        LpExponent(f64::INFINITY)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// The Hoelder conjugate: 1/p + 1/q = 1, with 1 and inf paired.
    pub fn dual(self) -> LpExponent {
        if self.0 == 1.0 {
            LpExponent(f64::INFINITY)
        } else if self.0.is_infinite() {
            LpExponent(1.0)
        } else {
            LpExponent(self.0 / (self.0 - 1.0))
        }
    }
}

/// The Hoelder conjugate exponent of `p`.
pub fn dual_exponent(p: LpExponent) -> LpExponent {
    p.dual()
}

// ============================================================================
// Norms and pairings
// ============================================================================

/// The lp norm of `v`. Scales by the max entry first so large exponents
/// neither overflow nor underflow.
pub fn lp_norm(v: &[f64], p: LpExponent) -> f64 {
    let pv = p.value();
    if v.is_empty() {
        return 0.0;
    }
    if pv.is_infinite() {
        return v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    }
    if pv == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    if pv == 2.0 {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|x| (x.abs() / m).powf(pv)).sum();
    m * s.powf(1.0 / pv)
}

/// Euclidean inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ============================================================================
// Regularity constants
// ============================================================================

/// Which smoothness/regularity profile a solver family assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularityVariant {
    /// kappa = min(1/(p-1), 2 ln d)
    NoisySfw,
    /// kappa = min(1/(p-1), ln d)
    WeaklyConvex,
}

/// Geometry-dependent constants for lp spaces with 1 <= p <= 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub variant: RegularityVariant,
}

/// Computes the regularity constants for dimension `d` and exponent `p`.
///
/// kappa caps the 1/(p-1) blowup at a log(d) scale (the cap differs by
/// variant); kappa_tilde = 1 + ln(d) whenever p < 2 and 1 at p = 2.
pub fn regularity_constants(p: LpExponent, d: usize, variant: RegularityVariant) -> Result<RegularityConstants> {
    let pv = p.value();
    if !(1.0..=2.0).contains(&pv) {
        return Err(CoreError::config("p", format!("regularity constants need p in [1, 2], got {pv}")));
    }
    if d < 2 {
        return Err(CoreError::config("d", format!("regularity constants need d >= 2, got {d}")));
    }
    let ln_d = (d as f64).ln();
    let inv = if pv > 1.0 { 1.0 / (pv - 1.0) } else { f64::INFINITY };
    let kappa = match variant {
        RegularityVariant::NoisySfw => inv.min(2.0 * ln_d),
        RegularityVariant::WeaklyConvex => inv.min(ln_d),
    };
    let kappa_tilde = if pv < 2.0 { 1.0 + ln_d } else { 1.0 };
    Ok(RegularityConstants { kappa, kappa_tilde, variant })
}

// ============================================================================
// Constraint sets
// ============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintKind {
    LpBall {
        center: Vec<f64>,
        radius: f64,
        p: LpExponent,
    },
    Polytope {
        vertices: Vec<Vec<f64>>,
    },
    Unconstrained {
        dim: usize,
    },
}

/// A feasible region together with its precomputed diameter in the ambient
/// lp norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub kind: ConstraintKind,
    /// Exponent of the norm in which the diameter is measured.
    pub norm_p: LpExponent,
    /// max_{u,v in W} ||u - v||_p; infinite for unconstrained.
    pub diameter: f64,
    pub dim: usize,
}

impl ConstraintSet {
    /// Ball { w : ||w - center||_p <= radius }; diameter 2 * radius.
    pub fn lp_ball(center: Vec<f64>, radius: f64, p: LpExponent) -> Result<Self> {
        if center.is_empty() {
            return Err(CoreError::config("center", "ball center must be nonempty"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(CoreError::config("radius", format!("ball radius must be positive and finite, got {radius}")));
        }
        let dim = center.len();
        Ok(ConstraintSet {
            kind: ConstraintKind::LpBall { center, radius, p },
            norm_p: p,
            diameter: 2.0 * radius,
            dim,
        })
    }

    /// Convex hull of an explicit vertex list; diameter is the max pairwise
    /// lp distance, precomputed at construction.
    pub fn polytope(vertices: Vec<Vec<f64>>, p: LpExponent) -> Result<Self> {
        if vertices.is_empty() {
            return Err(CoreError::config("vertices", "polytope needs at least one vertex"));
        }
        let dim = vertices[0].len();
        if dim == 0 || vertices.iter().any(|v| v.len() != dim) {
            return Err(CoreError::config("vertices", "polytope vertices must share a positive dimension"));
        }
        let mut diameter = 0.0f64;
        let mut diff = vec![0.0; dim];
        for i in 0..vertices.len() {
            for j in (i + 1)..vertices.len() {
                for k in 0..dim {
                    diff[k] = vertices[i][k] - vertices[j][k];
                }
                diameter = diameter.max(lp_norm(&diff, p));
            }
        }
        Ok(ConstraintSet {
            kind: ConstraintKind::Polytope { vertices },
            norm_p: p,
            diameter,
            dim,
        })
    }

    /// The cross-polytope { ||w - 0||_1 <= radius } as an explicit vertex
    /// list (2d signed scaled basis vectors), the polyhedral form of the
    /// l1 ball.
    pub fn l1_cross_polytope(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::config("d", "dimension must be positive"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(CoreError::config("radius", format!("radius must be positive and finite, got {radius}")));
        }
        let mut vertices = Vec::with_capacity(2 * dim);
        for j in 0..dim {
            for sign in [1.0, -1.0] {
                let mut v = vec![0.0; dim];
                v[j] = sign * radius;
                vertices.push(v);
            }
        }
        Self::polytope(vertices, LpExponent::one())
    }

    pub fn unconstrained(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::config("d", "dimension must be positive"));
        }
        Ok(ConstraintSet {
            kind: ConstraintKind::Unconstrained { dim },
            norm_p: LpExponent::two(),
            diameter: f64::INFINITY,
            dim,
        })
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self.kind, ConstraintKind::Unconstrained { .. })
    }

    pub fn vertices(&self) -> Option<&[Vec<f64>]> {
        match &self.kind {
            ConstraintKind::Polytope { vertices } => Some(vertices),
            _ => None,
        }
    }

    /// A deterministic feasible starting point: vertex 0 for polytopes, the
    /// center for balls, the origin when unconstrained.
    pub fn initial_point(&self) -> Vec<f64> {
        match &self.kind {
            ConstraintKind::Polytope { vertices } => vertices[0].clone(),
            ConstraintKind::LpBall { center, .. } => center.clone(),
            ConstraintKind::Unconstrained { dim } => vec![0.0; *dim],
        }
    }

    /// Membership test with a relative tolerance on the ball radius.
    /// Polytope membership is certified structurally by the solvers (their
    /// iterates are explicit convex combinations), so here it is checked
    /// via the l1 cross-polytope norm when the vertex list is one, and
    /// accepted otherwise.
    pub fn contains(&self, w: &[f64], rel_tol: f64) -> bool {
        match &self.kind {
            ConstraintKind::Unconstrained { .. } => true,
            ConstraintKind::LpBall { center, radius, p } => {
                let diff: Vec<f64> = w.iter().zip(center).map(|(a, b)| a - b).collect();
                lp_norm(&diff, *p) <= radius * (1.0 + rel_tol)
            }
            ConstraintKind::Polytope { vertices } => {
                if let Some(radius) = cross_polytope_radius(vertices) {
                    lp_norm(w, LpExponent::one()) <= radius * (1.0 + rel_tol)
                } else {
                    true
                }
            }
        }
    }

    /// argmin_{v in W} <c, v>.
    ///
    /// Polytopes scan vertices (lowest index wins ties). lp balls use the
    /// closed form center - radius * sign(c) |c|^{q-1} / ||c||_q^{q-1}; a
    /// zero objective returns the center. Unconstrained sets reject.
    pub fn linear_minimize(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.dim {
            return Err(CoreError::config("c", format!("objective has dim {}, set has dim {}", c.len(), self.dim)));
        }
        match &self.kind {
            ConstraintKind::Unconstrained { .. } => Err(CoreError::config(
                "constraint",
                "linear minimization over an unconstrained set is unbounded",
            )),
            ConstraintKind::Polytope { vertices } => {
                let mut best = 0usize;
                let mut best_score = dot(c, &vertices[0]);
                for (i, v) in vertices.iter().enumerate().skip(1) {
                    let s = dot(c, v);
                    if s < best_score {
                        best_score = s;
                        best = i;
                    }
                }
                Ok(vertices[best].clone())
            }
            ConstraintKind::LpBall { center, radius, p } => {
                Ok(ball_linear_minimize(center, *radius, *p, c))
            }
        }
    }

    /// Projection onto W. Supported for the cases the projected solvers
    /// need: l2 balls (radial scaling) and unconstrained sets (identity).
    /// Polytopes and non-Euclidean balls signal a configuration error.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(CoreError::config("v", format!("point has dim {}, set has dim {}", v.len(), self.dim)));
        }
        match &self.kind {
            ConstraintKind::Unconstrained { .. } => Ok(v.to_vec()),
            ConstraintKind::LpBall { center, radius, p } if p.value() == 2.0 => {
                let diff: Vec<f64> = v.iter().zip(center).map(|(a, b)| a - b).collect();
                let norm = lp_norm(&diff, LpExponent::two());
                if norm <= *radius {
                    Ok(v.to_vec())
                } else {
                    let scale = radius / norm;
                    Ok(center.iter().zip(&diff).map(|(c, d)| c + scale * d).collect())
                }
            }
            ConstraintKind::LpBall { p, .. } => Err(CoreError::config(
                "constraint",
                format!("projection onto an l{} ball is unsupported; use an l2 ball or unconstrained set", p.value()),
            )),
            ConstraintKind::Polytope { .. } => Err(CoreError::config(
                "constraint",
                "projection onto a polytope is unsupported; choose a solver that uses linear minimization",
            )),
        }
    }
}

/// Detects a cross-polytope vertex list (signed scaled basis vectors) and
/// returns its radius.
pub(crate) fn cross_polytope_radius(vertices: &[Vec<f64>]) -> Option<f64> {
    let dim = vertices[0].len();
    if vertices.len() != 2 * dim {
        return None;
    }
    let mut radius = None;
    for v in vertices {
        let mut nonzero = None;
        for (j, &x) in v.iter().enumerate() {
            if x != 0.0 {
                if nonzero.is_some() {
                    return None;
                }
                nonzero = Some((j, x.abs()));
            }
        }
        let (_, r) = nonzero?;
        match radius {
            None => radius = Some(r),
            Some(r0) if r0 == r => {}
            _ => return None,
        }
    }
    radius
}

/// Closed-form LMO over an lp ball. Computed in units of max|c_j| so large
/// dual exponents stay finite, then rescaled onto the boundary exactly.
fn ball_linear_minimize(center: &[f64], radius: f64, p: LpExponent, c: &[f64]) -> Vec<f64> {
    let max_abs = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return center.to_vec();
    }
    let q = p.dual().value();
    let mut dir: Vec<f64> = if p.value() == 1.0 {
        // Extreme coordinate: steepest entry (lowest index on ties).
        let j = c
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        let mut d = vec![0.0; c.len()];
        d[j] = -c[j].signum();
        d
    } else if p.is_infinite() {
        c.iter().map(|x| if *x == 0.0 { 0.0 } else { -x.signum() }).collect()
    } else {
        let s: f64 = c.iter().map(|x| (x.abs() / max_abs).powf(q)).sum();
        let denom = s.powf((q - 1.0) / q);
        c.iter()
            .map(|x| {
                if *x == 0.0 {
                    0.0
                } else {
                    -x.signum() * (x.abs() / max_abs).powf(q - 1.0) / denom
                }
            })
            .collect()
    };
    // Renormalize so the output sits on the boundary to machine precision.
    let norm = lp_norm(&dir, p);
    if norm > 0.0 && norm.is_finite() {
        for d in dir.iter_mut() {
            *d /= norm;
        }
    }
    center.iter().zip(&dir).map(|(ctr, d)| ctr + radius * d).collect()
}

// ============================================================================
// Tests
// ============================================================================
