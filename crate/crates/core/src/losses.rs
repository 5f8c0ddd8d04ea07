//! Loss models over linear predictions, the scalar links they are built
//! from, and a smoothed first-order oracle that needs only link value and
//! one-sided derivative access.
//!
//! Generalized linear losses take the form f(w, (x, y)) = link(<w, x>, y).
//! Two nonconvex models used by the stationarity experiments live here too.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::dot;

// ============================================================================
// Examples
// ============================================================================

/// One observation: feature vector and scalar target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

// ============================================================================
// Scalar links
// ============================================================================

/// A user-supplied convex scalar link. Derivatives are taken numerically
/// (one-sided differences), so only the value closure is required; the
/// stated Lipschitz constant sizes search intervals and schedules.
#[derive(Clone)]
pub struct CustomLink {
    pub name: &'static str,
    pub value: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub lipschitz: f64,
}

impl fmt::Debug for CustomLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLink")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Convex scalar loss u -> link(u, y). Hinge and logistic expect labels in
/// {-1, +1}; absolute regresses on real targets.
#[derive(Debug, Clone)]
pub enum Link {
    Absolute,
    Hinge,
    Logistic,
    Custom(CustomLink),
}

/// Step used for one-sided numerical derivatives of custom links.
fn fd_step(u: f64) -> f64 {
    1e-7 * (1.0 + u.abs())
}

/// Numerically stable log(1 + exp(t)).
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Absolute => "absolute",
            Link::Hinge => "hinge",
            Link::Logistic => "logistic",
            Link::Custom(c) => c.name,
        }
    }

    pub fn value(&self, u: f64, y: f64) -> f64 {
        match self {
            Link::Absolute => (u - y).abs(),
            Link::Hinge => (1.0 - y * u).max(0.0),
            Link::Logistic => softplus(-y * u),
            Link::Custom(c) => (c.value)(u, y),
        }
    }

    /// Right-sided derivative in u.
    pub fn right_derivative(&self, u: f64, y: f64) -> f64 {
        match self {
            Link::Absolute => {
                if u >= y {
                    1.0
                } else {
                    -1.0
                }
            }
            Link::Hinge => {
                let margin = y * u;
                if margin < 1.0 {
                    -y
                } else if margin > 1.0 {
                    0.0
                } else {
                    // At the kink the one-sided slopes are -y and 0; the
                    // right one is the larger.
                    (-y).max(0.0)
                }
            }
            Link::Logistic => -y * sigmoid(-y * u),
            Link::Custom(c) => {
                let h = fd_step(u);
                ((c.value)(u + h, y) - (c.value)(u, y)) / h
            }
        }
    }

    /// Left-sided derivative in u.
    pub fn left_derivative(&self, u: f64, y: f64) -> f64 {
        match self {
            Link::Absolute => {
                if u > y {
                    1.0
                } else {
                    -1.0
                }
            }
            Link::Hinge => {
                let margin = y * u;
                if margin < 1.0 {
                    -y
                } else if margin > 1.0 {
                    0.0
                } else {
                    (-y).min(0.0)
                }
            }
            Link::Logistic => -y * sigmoid(-y * u),
            Link::Custom(c) => {
                let h = fd_step(u);
                ((c.value)(u, y) - (c.value)(u - h, y)) / h
            }
        }
    }

    /// A subgradient at u: zero whenever zero lies between the one-sided
    /// slopes (so minimizers report as stationary), otherwise the right
    /// slope.
    pub fn subgradient(&self, u: f64, y: f64) -> f64 {
        let right = self.right_derivative(u, y);
        if right < 0.0 {
            return right;
        }
        if self.left_derivative(u, y) <= 0.0 {
            0.0
        } else {
            right
        }
    }

    /// Lipschitz constant of u -> value(u, y) over unit labels.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Link::Absolute | Link::Hinge | Link::Logistic => 1.0,
            Link::Custom(c) => c.lipschitz,
        }
    }

    /// Whether the link has a Lipschitz derivative; the constant for the
    /// logistic link is 1/4.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Link::Logistic => Some(0.25),
            _ => None,
        }
    }

    /// Exact minimizer of value(u, y) + (beta/2)(u - m)^2.
    ///
    /// Absolute and hinge have closed forms, logistic uses a safeguarded
    /// Newton iteration, custom links fall back to a ternary search sized
    /// by the stated Lipschitz constant.
    pub fn prox(&self, m: f64, y: f64, beta: f64) -> f64 {
        debug_assert!(beta > 0.0);
        match self {
            Link::Absolute => {
                let gap = m - y;
                y + gap.signum() * (gap.abs() - 1.0 / beta).max(0.0)
            }
            Link::Hinge => {
                let margin = y * m;
                if margin >= 1.0 {
                    m
                } else if margin <= 1.0 - 1.0 / beta {
                    m + y / beta
                } else {
                    // Interior case pins the prediction to the margin; for
                    // unit labels that point is y itself.
                    y
                }
            }
            Link::Logistic => logistic_prox(m, y, beta),
            Link::Custom(c) => ternary_prox(self, m, y, beta, c.lipschitz),
        }
    }
}

/// Exact proximal point of a scalar link: argmin_u [link(u, y) + (beta/2)(u - m)^2].
pub fn prox_scalar(link: &Link, y: f64, m: f64, beta: f64) -> f64 {
    link.prox(m, y, beta)
}

/// Root of g(u) = -y sigmoid(-y u) + beta (u - m), the stationarity
/// condition of the logistic prox. Newton steps with a bisection safeguard;
/// the root lies in [m - 1/beta, m + 1/beta] because |link'| < 1.
fn logistic_prox(m: f64, y: f64, beta: f64) -> f64 {
    let g = |u: f64| -y * sigmoid(-y * u) + beta * (u - m);
    let mut lo = m - 1.0 / beta;
    let mut hi = m + 1.0 / beta;
    let mut u = m;
    for _ in 0..200 {
        let gu = g(u);
        if gu > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let s = sigmoid(-y * u);
        let slope = y * y * s * (1.0 - s) + beta;
        let mut next = u - gu / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-12 * (1.0 + u.abs()) {
            return next;
        }
        u = next;
    }
    u
}

/// Ternary search for the prox of an arbitrary convex link. The objective
/// is strictly convex, so interval thirds bracket the minimizer.
fn ternary_prox(link: &Link, m: f64, y: f64, beta: f64, lipschitz: f64) -> f64 {
    let h = |u: f64| link.value(u, y) + 0.5 * beta * (u - m) * (u - m);
    let mut lo = m - 2.0 * lipschitz / beta;
    let mut hi = m + 2.0 * lipschitz / beta;
    for _ in 0..500 {
        if hi - lo <= 1e-13 * (1.0 + m.abs()) {
            break;
        }
        let third = (hi - lo) / 3.0;
        let m1 = lo + third;
        let m2 = hi - third;
        if h(m1) < h(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

// ============================================================================
// GLL specification and the smoothed oracle
// ============================================================================

/// A generalized linear loss: scalar link applied to <w, x>, together with
/// the constants every schedule formula needs.
#[derive(Debug, Clone)]
pub struct GllSpec {
    pub link: Link,
    /// Lipschitz constant of the link.
    pub l0: f64,
    /// Dual-norm bound on features.
    pub r: f64,
    /// Closed link domain; prox searches stay inside it. Unbounded ends are
    /// the infinities.
    pub domain: (f64, f64),
}

impl GllSpec {
    pub fn new(link: Link, r: f64) -> Result<Self> {
        let l0 = link.lipschitz();
        if !(r > 0.0) || !r.is_finite() {
            return Err(CoreError::config("r", format!("feature bound must be positive and finite, got {r}")));
        }
        if !(l0 > 0.0) || !l0.is_finite() {
            return Err(CoreError::config("l0", format!("link Lipschitz constant must be positive and finite, got {l0}")));
        }
        Ok(GllSpec { link, l0, r, domain: (f64::NEG_INFINITY, f64::INFINITY) })
    }

    pub fn absolute(r: f64) -> Result<Self> {
        GllSpec::new(Link::Absolute, r)
    }

    pub fn hinge(r: f64) -> Result<Self> {
        GllSpec::new(Link::Hinge, r)
    }

    pub fn logistic(r: f64) -> Result<Self> {
        GllSpec::new(Link::Logistic, r)
    }

    pub fn custom(link: CustomLink, r: f64) -> Result<Self> {
        GllSpec::new(Link::Custom(link), r)
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(CoreError::config("domain", format!("domain must be a nonempty interval, got [{lo}, {hi}]")));
        }
        self.domain = (lo, hi);
        Ok(self)
    }

    /// Lipschitz constant of the full loss w -> link(<w, x>) over ||x||* <= r.
    pub fn loss_lipschitz(&self) -> f64 {
        self.l0 * self.r
    }

    fn check_alpha(&self, alpha: f64) -> Result<()> {
        let limit = 4.0 * self.l0 * self.r;
        if !(alpha > 0.0) || alpha >= limit {
            return Err(CoreError::config(
                "alpha",
                format!("accuracy target must lie in (0, 4 * l0 * r) = (0, {limit}), got {alpha}"),
            ));
        }
        Ok(())
    }
}

/// Number of bisection steps guaranteeing the oracle accuracy target:
/// ceil(log2(16 l0^2 r^2 / alpha^2)).
pub fn bisection_iteration_count(l0: f64, r: f64, alpha: f64) -> u32 {
    let steps = (16.0 * l0 * l0 * r * r / (alpha * alpha)).log2().ceil();
    steps.max(1.0) as u32
}

/// Approximate prox point of the link at prediction m via derivative-sign
/// bisection over the interval domain ∩ [m - 2 l0/beta, m + 2 l0/beta] (the
/// prox cannot move further than l0/beta from m).
///
/// Each step looks at the one-sided slopes of
/// h(u) = link(u) + (beta/2)(u - m)^2 at the midpoint: a nonpositive right
/// slope moves the left edge, a nonnegative left slope moves the right edge,
/// and slopes straddling zero mean the midpoint is the minimizer. The best
/// midpoint by h-value is returned.
pub fn bisection_prox(spec: &GllSpec, beta: f64, alpha: f64, m: f64, y: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(CoreError::config("beta", format!("smoothing parameter must be positive and finite, got {beta}")));
    }
    spec.check_alpha(alpha)?;
    let reach = 2.0 * spec.l0 / beta;
    let mut a = spec.domain.0.max(m - reach);
    let mut b = spec.domain.1.min(m + reach);
    if a > b {
        // m lies more than the reach outside the domain; the prox sits at
        // the nearest domain endpoint.
        let pin = m.clamp(spec.domain.0, spec.domain.1);
        a = pin;
        b = pin;
    }
    let h = |u: f64| spec.link.value(u, y) + 0.5 * beta * (u - m) * (u - m);
    let mut best = 0.5 * (a + b);
    let mut best_val = h(best);
    for _ in 0..bisection_iteration_count(spec.l0, spec.r, alpha) {
        if !(b > a) {
            break;
        }
        let mid = 0.5 * (a + b);
        let val = h(mid);
        if val < best_val {
            best_val = val;
            best = mid;
        }
        let pull = beta * (mid - m);
        if spec.link.right_derivative(mid, y) + pull <= 0.0 {
            a = mid;
        } else if spec.link.left_derivative(mid, y) + pull >= 0.0 {
            b = mid;
        } else {
            // Slopes straddle zero only at the minimizer of a convex h.
            a = mid;
            b = mid;
        }
    }
    Ok(best)
}

/// Bisection gradient oracle for the smoothed loss, written into `out`:
/// beta (m - u-bar) x with u-bar from `bisection_prox`. The output dual norm
/// is within alpha of the exact envelope gradient.
pub fn bisection_oracle_into(
    w: &[f64],
    ex: &Example,
    spec: &GllSpec,
    beta: f64,
    alpha: f64,
    out: &mut [f64],
) -> Result<()> {
    let m = dot(w, &ex.x);
    let u = bisection_prox(spec, beta, alpha, m, ex.y)?;
    let scale = beta * (m - u);
    for (o, xi) in out.iter_mut().zip(&ex.x) {
        *o = scale * xi;
    }
    Ok(())
}

/// Allocating variant of `bisection_oracle_into`.
pub fn bisection_oracle(w: &[f64], ex: &Example, spec: &GllSpec, beta: f64, alpha: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ex.x.len()];
    bisection_oracle_into(w, ex, spec, beta, alpha, &mut out)?;
    Ok(out)
}

/// Value of the smoothed link at prediction <w, x> computed from the exact
/// prox point: link(u*) + (beta/2)(u* - m)^2.
pub fn smoothed_value(w: &[f64], ex: &Example, spec: &GllSpec, beta: f64) -> f64 {
    let m = dot(w, &ex.x);
    let u = spec.link.prox(m, ex.y, beta);
    spec.link.value(u, ex.y) + 0.5 * beta * (u - m) * (u - m)
}

/// A GLL paired with an envelope parameter. The envelope f_beta is
/// (2 l0 r)-Lipschitz, (beta r^2)-smooth, and within l0^2/(2 beta) of the
/// raw loss pointwise.
#[derive(Debug, Clone)]
pub struct SmoothedGll {
    pub base: GllSpec,
    pub beta: f64,
}

impl SmoothedGll {
    pub fn new(base: GllSpec, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(CoreError::config("beta", format!("smoothing parameter must be positive and finite, got {beta}")));
        }
        Ok(SmoothedGll { base, beta })
    }

    /// Scalar envelope value at prediction m.
    pub fn value_scalar(&self, m: f64, y: f64) -> f64 {
        let u = self.base.link.prox(m, y, self.beta);
        self.base.link.value(u, y) + 0.5 * self.beta * (u - m) * (u - m)
    }

    pub fn value(&self, w: &[f64], ex: &Example) -> f64 {
        self.value_scalar(dot(w, &ex.x), ex.y)
    }

    /// Exact scalar envelope derivative beta (m - u*) from the closed-form
    /// prox; the bisection oracle approximates this.
    pub fn gradient_scalar(&self, m: f64, y: f64) -> f64 {
        self.beta * (m - self.base.link.prox(m, y, self.beta))
    }

    pub fn gradient_into(&self, w: &[f64], ex: &Example, out: &mut [f64]) {
        let scale = self.gradient_scalar(dot(w, &ex.x), ex.y);
        for (o, xi) in out.iter_mut().zip(&ex.x) {
            *o = scale * xi;
        }
    }

    pub fn gradient(&self, w: &[f64], ex: &Example) -> Vec<f64> {
        let mut out = vec![0.0; ex.x.len()];
        self.gradient_into(w, ex, &mut out);
        out
    }

    /// Approximate scalar envelope derivative via the bisection oracle.
    pub fn oracle_scalar(&self, alpha: f64, m: f64, y: f64) -> Result<f64> {
        let u = bisection_prox(&self.base, self.beta, alpha, m, y)?;
        Ok(self.beta * (m - u))
    }

    pub fn oracle_into(&self, alpha: f64, w: &[f64], ex: &Example, out: &mut [f64]) -> Result<()> {
        bisection_oracle_into(w, ex, &self.base, self.beta, alpha, out)
    }

    /// Bisection steps per oracle call at the given accuracy.
    pub fn iteration_count(&self, alpha: f64) -> u32 {
        bisection_iteration_count(self.base.l0, self.base.r, alpha)
    }
}

// ============================================================================
// Loss models
// ============================================================================

/// Structural family of a loss model.
///
/// `SmoothNonconvex` is f(w, (x, y)) = phi(<w, x> - y) with
/// phi(t) = t^2 / (1 + t^2): bounded, smooth, nonconvex.
/// `WeaklyConvex` is robust phase retrieval f(w, (x, y)) = |<w, x>^2 - y|:
/// nonsmooth and nonconvex but weakly convex.
#[derive(Debug, Clone)]
pub enum LossKind {
    Gll(GllSpec),
    SmoothNonconvex { feature_bound: f64 },
    WeaklyConvex { feature_bound: f64, w_bound: f64 },
}

/// A loss family together with its validated regularity constants.
#[derive(Debug, Clone)]
pub struct LossModel {
    pub kind: LossKind,
    /// Lipschitz constant of w -> f(w, ex) over the admissible inputs.
    pub l0: f64,
    /// Gradient Lipschitz constant where the family is smooth.
    pub l1: Option<f64>,
    /// Weak convexity modulus where the family is nonconvex.
    pub rho: Option<f64>,
}

fn phi(t: f64) -> f64 {
    t * t / (1.0 + t * t)
}

fn phi_prime(t: f64) -> f64 {
    let s = 1.0 + t * t;
    2.0 * t / (s * s)
}

/// Max slope of phi, attained at t = 1/sqrt(3).
const PHI_LIPSCHITZ: f64 = 0.649_519_052_838_329;

impl LossModel {
    pub fn gll(spec: GllSpec) -> Self {
        let l0 = spec.loss_lipschitz();
        let l1 = spec.link.smoothness().map(|s| s * spec.r * spec.r);
        LossModel { kind: LossKind::Gll(spec), l0, l1, rho: None }
    }

    pub fn smooth_nonconvex(feature_bound: f64) -> Self {
        let l1 = 2.0 * feature_bound * feature_bound;
        LossModel {
            kind: LossKind::SmoothNonconvex { feature_bound },
            l0: PHI_LIPSCHITZ * feature_bound,
            l1: Some(l1),
            // Any L1-smooth function is L1-weakly convex.
            rho: Some(l1),
        }
    }

    pub fn weakly_convex(feature_bound: f64, w_bound: f64) -> Self {
        let rho = 2.0 * feature_bound * feature_bound;
        LossModel {
            kind: LossKind::WeaklyConvex { feature_bound, w_bound },
            l0: 2.0 * feature_bound * feature_bound * w_bound,
            l1: None,
            rho: Some(rho),
        }
    }

    pub fn name(&self) -> &'static str {
        match &self.kind {
            LossKind::Gll(g) => g.link.name(),
            LossKind::SmoothNonconvex { .. } => "smooth_nonconvex",
            LossKind::WeaklyConvex { .. } => "phase_retrieval",
        }
    }

    pub fn as_gll(&self) -> Option<&GllSpec> {
        match &self.kind {
            LossKind::Gll(g) => Some(g),
            _ => None,
        }
    }

    pub fn value(&self, w: &[f64], ex: &Example) -> f64 {
        let m = dot(w, &ex.x);
        match &self.kind {
            LossKind::Gll(g) => g.link.value(m, ex.y),
            LossKind::SmoothNonconvex { .. } => phi(m - ex.y),
            LossKind::WeaklyConvex { .. } => (m * m - ex.y).abs(),
        }
    }

    /// Writes a subgradient of w -> value(w, ex) into `out`. At kink points
    /// the zero-containing choice is preferred (see `Link::subgradient`);
    /// the phase retrieval sign at an exact match is zero.
    pub fn subgradient_into(&self, w: &[f64], ex: &Example, out: &mut [f64]) {
        let m = dot(w, &ex.x);
        let scale = match &self.kind {
            LossKind::Gll(g) => g.link.subgradient(m, ex.y),
            LossKind::SmoothNonconvex { .. } => phi_prime(m - ex.y),
            LossKind::WeaklyConvex { .. } => {
                let r = m * m - ex.y;
                if r == 0.0 {
                    0.0
                } else {
                    r.signum() * 2.0 * m
                }
            }
        };
        for (o, xi) in out.iter_mut().zip(&ex.x) {
            *o = scale * xi;
        }
    }

    pub fn subgradient(&self, w: &[f64], ex: &Example) -> Vec<f64> {
        let mut out = vec![0.0; ex.x.len()];
        self.subgradient_into(w, ex, &mut out);
        out
    }

    pub fn is_convex(&self) -> bool {
        matches!(self.kind, LossKind::Gll(_))
    }
}

/// A (sub)gradient of the loss model at w.
pub fn grad(model: &LossModel, w: &[f64], ex: &Example) -> Vec<f64> {
    model.subgradient(w, ex)
}

// ============================================================================
// Tests
// ============================================================================
