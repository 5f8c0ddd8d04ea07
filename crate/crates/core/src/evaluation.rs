//! Monte-Carlo estimators of population accuracy measures.
//!
//! Population quantities are estimated on held-out evaluation streams:
//! excess risk against a reference minimizer, the stationarity gap of the
//! mean gradient, and proximal near-stationarity through a deterministic
//! prox-point oracle. Sums are accumulated over fixed-width chunks combined
//! in index order, so an estimate is bitwise identical no matter how many
//! workers the chunks are spread across.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TaskFamily, TaskSpec};
use crate::error::{CoreError, Result};
use crate::geometry::{
    dot, lp_norm, regularity_constants, ConstraintKind, ConstraintSet, LpExponent,
    RegularityVariant,
};
use crate::losses::{Example, LossModel};
use crate::rng::{substream, tag};
use crate::solvers::{grad_psi, grad_psi_dual, pull_into_ball};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

/// Fixed summation chunk width. Partial sums are always formed over these
/// chunks and combined in index order, which pins the floating-point result
/// regardless of how chunks are scheduled.
const CHUNK: usize = 1024;

/// Stream salt separating baseline fitting draws from estimation draws.
const FIT_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

// ============================================================================
// Domain types
// ============================================================================

/// Which population quantity a metric estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    ExcessRisk,
    StationarityGap,
    ProxDistance,
    ProxGap,
}

impl MetricName {
    pub fn name(self) -> &'static str {
        match self {
            MetricName::ExcessRisk => "excess_risk",
            MetricName::StationarityGap => "stationarity_gap",
            MetricName::ProxDistance => "prox_distance",
            MetricName::ProxGap => "prox_gap",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricName {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excess_risk" => Ok(MetricName::ExcessRisk),
            "stationarity_gap" => Ok(MetricName::StationarityGap),
            "prox_distance" => Ok(MetricName::ProxDistance),
            "prox_gap" => Ok(MetricName::ProxGap),
            other => Err(CoreError::config("metric", format!("unknown metric `{other}`"))),
        }
    }
}

/// A Monte-Carlo estimate with its sample count and 95% half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub name: MetricName,
    pub value: f64,
    /// Evaluation draws behind the estimate.
    pub m: usize,
    pub ci_half_width: f64,
}

/// Result of the proximal near-stationarity measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxReport {
    /// Minimizer of the regularized objective over the frozen sample.
    pub prox_point: Vec<f64>,
    /// Distance from the query point in the p_bar norm.
    pub prox_distance: f64,
    /// Distance scaled by max(1, beta D), the certificate normalization.
    pub normalized_distance: f64,
    /// Surrogate gap beta D times the distance.
    pub prox_gap: f64,
    /// Frozen sample size behind the oracle.
    pub m: usize,
    /// Inner iterations the oracle actually ran.
    pub iterations: usize,
    /// Last measured per-iteration objective decrease.
    pub final_decrease: f64,
}

/// Least-squares fit of log(value) against log(n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// A non-private reference minimizer found by restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReference {
    pub point: Vec<f64>,
    /// Empirical risk of the point on the fitting sample.
    pub risk: f64,
    /// Best-value spread across restarts; large values flag a poor fit.
    pub restart_spread: f64,
    pub restarts: usize,
}

// ============================================================================
// Chunk-stable summation
// ============================================================================

/// Sums fixed-width chunks independently, then combines the partials in
/// index order. Scheduling chunks across workers cannot change the result.
fn ordered_sum(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for chunk in values.chunks(CHUNK) {
        let mut part = 0.0;
        for v in chunk {
            part += v;
        }
        total += part;
    }
    total
}

/// Sample mean and 95% normal half-width over per-example scalars.
fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    debug_assert!(m >= 2);
    let mean = ordered_sum(values) / m as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = ordered_sum(&sq) / (m - 1) as f64;
    let half = Z95 * (var / m as f64).sqrt();
    (mean, half)
}

fn check_samples(m: usize) -> Result<()> {
    if m < 2 {
        return Err(CoreError::config("m", format!("estimators need at least 2 draws, got {m}")));
    }
    Ok(())
}

/// Largest l2 norm the feasible set allows; feeds the loss constants that
/// depend on the parameter scale.
pub fn feasible_l2_bound(constraint: &ConstraintSet) -> f64 {
    match &constraint.kind {
        ConstraintKind::LpBall { center, radius, p } => {
            let inflate = if p.value() > 2.0 {
                (constraint.dim as f64).powf(0.5 - 1.0 / p.value())
            } else {
                1.0
            };
            lp_norm(center, LpExponent::two()) + radius * inflate
        }
        ConstraintKind::Polytope { vertices } => vertices
            .iter()
            .map(|v| lp_norm(v, LpExponent::two()))
            .fold(0.0, f64::max),
        ConstraintKind::Unconstrained { .. } => f64::INFINITY,
    }
}

// ============================================================================
// Excess population risk
// ============================================================================

/// Whether the generator guarantees the planted parameter minimizes the
/// population risk: median-calibrated regression targets (absolute, phase
/// retrieval, whose additive noise is symmetric), well-specified logistic
/// labels, and any family at zero label noise, where the planted point has
/// zero loss on every sample.
fn planted_is_optimal(task: &TaskSpec) -> bool {
    match task.family {
        TaskFamily::AbsoluteGll | TaskFamily::LogisticGll | TaskFamily::PhaseRetrieval => true,
        TaskFamily::HingeGll | TaskFamily::SmoothNonconvex => task.label_noise == 0.0,
    }
}

/// Excess population risk of `w` with a 95% confidence half-width.
///
/// The estimate is a paired mean of f(w, z) - f(ref, z) over `m` fresh
/// draws of evaluation stream `stream`. The reference is the planted
/// parameter when the generator guarantees its optimality, otherwise the
/// best of ten non-private restart solves on a salted fitting stream.
pub fn estimate_population_risk(
    w: &[f64],
    task: &TaskSpec,
    constraint: &ConstraintSet,
    m: usize,
    stream: u64,
) -> Result<MetricEstimate> {
    check_samples(m)?;
    let loss = task.loss_model(feasible_l2_bound(constraint));
    let reference: Vec<f64> = if planted_is_optimal(task) {
        task.w_star.clone()
    } else {
        baseline_reference(task, constraint, m, stream ^ FIT_STREAM_SALT)?.point
    };
    let values: Vec<f64> = (0..m as u64)
        .map(|i| {
            let ex = task.eval_example(stream, i);
            loss.value(w, &ex) - loss.value(&reference, &ex)
        })
        .collect();
    let (value, ci_half_width) = mean_and_ci(&values);
    Ok(MetricEstimate { name: MetricName::ExcessRisk, value, m, ci_half_width })
}

/// Fits a reference minimizer of the empirical risk on a frozen sample of
/// `m` draws from the given stream: ten restarts of a deterministic
/// non-private solver, best empirical value kept, with the spread of the
/// restart values reported so a poor fit is visible.
///
/// Balls run averaged projected subgradient descent; polytopes run
/// conditional gradient steps on the exact linear oracle.
pub fn baseline_reference(
    task: &TaskSpec,
    constraint: &ConstraintSet,
    m: usize,
    stream: u64,
) -> Result<BaselineReference> {
    check_samples(m)?;
    if constraint.is_unconstrained() {
        return Err(CoreError::config(
            "constraint",
            "a baseline reference needs a bounded feasible set",
        ));
    }
    let loss = task.loss_model(feasible_l2_bound(constraint));
    let sample: Vec<Example> = (0..m as u64).map(|i| task.eval_example(stream, i)).collect();
    let restarts = 10usize;
    let iterations = 2000usize;
    let mut best_point: Option<Vec<f64>> = None;
    let mut best_risk = f64::INFINITY;
    let mut worst_risk = f64::NEG_INFINITY;
    for r in 0..restarts {
        let start = if r == 0 {
            constraint.initial_point()
        } else {
            random_feasible_point(constraint, task.seed, stream, r as u64)
        };
        let candidates = baseline_descend(&loss, constraint, &sample, start, iterations)?;
        let mut restart_best = f64::INFINITY;
        for point in candidates {
            let risk = empirical_risk(&loss, &point, &sample);
            if risk < restart_best {
                restart_best = risk;
            }
            if risk < best_risk {
                best_risk = risk;
                best_point = Some(point);
            }
        }
        worst_risk = worst_risk.max(restart_best);
    }
    Ok(BaselineReference {
        point: best_point.expect("at least one restart"),
        risk: best_risk,
        restart_spread: worst_risk - best_risk,
        restarts,
    })
}

fn empirical_risk(loss: &LossModel, w: &[f64], sample: &[Example]) -> f64 {
    let values: Vec<f64> = sample.iter().map(|ex| loss.value(w, ex)).collect();
    ordered_sum(&values) / values.len() as f64
}

fn mean_subgradient(loss: &LossModel, w: &[f64], sample: &[Example], out: &mut [f64]) {
    out.fill(0.0);
    let mut scratch = vec![0.0; out.len()];
    let mut part = vec![0.0; out.len()];
    for chunk in sample.chunks(CHUNK) {
        part.fill(0.0);
        for ex in chunk {
            loss.subgradient_into(w, ex, &mut scratch);
            for (p, s) in part.iter_mut().zip(&scratch) {
                *p += s;
            }
        }
        for (o, p) in out.iter_mut().zip(&part) {
            *o += p;
        }
    }
    let inv = 1.0 / sample.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

fn random_feasible_point(constraint: &ConstraintSet, seed: u64, stream: u64, restart: u64) -> Vec<f64> {
    let mut rng = substream(seed, &[tag::INIT, stream, restart]);
    match &constraint.kind {
        ConstraintKind::LpBall { center, radius, .. } => {
            let mut w: Vec<f64> = center
                .iter()
                .map(|c| c + radius * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            pull_into_ball(constraint, &mut w);
            w
        }
        ConstraintKind::Polytope { vertices } => {
            let weights: Vec<f64> = vertices.iter().map(|_| -rng.random::<f64>().ln()).collect();
            let total: f64 = weights.iter().sum();
            let mut w = vec![0.0; constraint.dim];
            for (v, wt) in vertices.iter().zip(&weights) {
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj += wt / total * vj;
                }
            }
            w
        }
        ConstraintKind::Unconstrained { dim } => vec![0.0; *dim],
    }
}

/// One deterministic descent pass; returns candidate minimizers.
fn baseline_descend(
    loss: &LossModel,
    constraint: &ConstraintSet,
    sample: &[Example],
    start: Vec<f64>,
    iterations: usize,
) -> Result<Vec<Vec<f64>>> {
    let d = start.len();
    let mut w = start;
    let mut grad = vec![0.0; d];
    match &constraint.kind {
        ConstraintKind::LpBall { .. } => {
            let scale = constraint.diameter / loss.l0.max(1e-12);
            let mut avg = vec![0.0; d];
            for t in 1..=iterations {
                mean_subgradient(loss, &w, sample, &mut grad);
                let eta = scale / (t as f64).sqrt();
                for j in 0..d {
                    w[j] -= eta * grad[j];
                }
                pull_into_ball(constraint, &mut w);
                let inv = 1.0 / iterations as f64;
                for j in 0..d {
                    avg[j] += inv * w[j];
                }
            }
            pull_into_ball(constraint, &mut avg);
            Ok(vec![avg, w])
        }
        ConstraintKind::Polytope { .. } => {
            for t in 0..iterations {
                mean_subgradient(loss, &w, sample, &mut grad);
                let v = constraint.linear_minimize(&grad)?;
                let eta = 2.0 / (t as f64 + 2.0);
                for j in 0..d {
                    w[j] = (1.0 - eta) * w[j] + eta * v[j];
                }
            }
            Ok(vec![w])
        }
        ConstraintKind::Unconstrained { .. } => Err(CoreError::config(
            "constraint",
            "a baseline reference needs a bounded feasible set",
        )),
    }
}

// ============================================================================
// Stationarity gap
// ============================================================================

/// <g, w> - min over W of <g, v>: the linear maximization the gap metric
/// reduces to once the gradient estimate is fixed.
pub fn gap_from_gradient(g: &[f64], w: &[f64], constraint: &ConstraintSet) -> Result<f64> {
    let v = constraint.linear_minimize(g)?;
    Ok(dot(g, w) - dot(g, &v))
}

/// Stationarity gap of the population risk at `w`, estimated from the mean
/// gradient over `m` fresh draws.
///
/// The reported half-width conditions on the selected extreme point: it is
/// the CI of the per-example scalars <g_i, w - v> at the fixed maximizer.
pub fn stationarity_gap(
    w: &[f64],
    task: &TaskSpec,
    constraint: &ConstraintSet,
    m: usize,
    stream: u64,
) -> Result<MetricEstimate> {
    check_samples(m)?;
    if constraint.is_unconstrained() {
        return Err(CoreError::config("constraint", "the stationarity gap needs a bounded feasible set"));
    }
    let loss = task.loss_model(feasible_l2_bound(constraint));
    if loss.l1.is_none() {
        return Err(CoreError::config(
            "loss",
            format!("the stationarity gap needs a smooth family; `{}` is nonsmooth", loss.name()),
        ));
    }
    let d = constraint.dim;
    let mut ghat = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut part = vec![0.0; d];
    let mut index = 0u64;
    while (index as usize) < m {
        part.fill(0.0);
        let upper = (index as usize + CHUNK).min(m) as u64;
        for i in index..upper {
            let ex = task.eval_example(stream, i);
            loss.subgradient_into(w, &ex, &mut scratch);
            for (p, s) in part.iter_mut().zip(&scratch) {
                *p += s;
            }
        }
        for (g, p) in ghat.iter_mut().zip(&part) {
            *g += p;
        }
        index = upper;
    }
    let inv = 1.0 / m as f64;
    for g in ghat.iter_mut() {
        *g *= inv;
    }
    let vertex = constraint.linear_minimize(&ghat)?;
    let diff: Vec<f64> = w.iter().zip(&vertex).map(|(a, b)| a - b).collect();
    let values: Vec<f64> = (0..m as u64)
        .map(|i| {
            let ex = task.eval_example(stream, i);
            loss.subgradient_into(w, &ex, &mut scratch);
            dot(&scratch, &diff)
        })
        .collect();
    let (mean, ci_half_width) = mean_and_ci(&values);
    // The mean is <ghat, w - v> up to rounding, which is nonnegative by the
    // choice of v; the clamp only trims stray ulps at zero gaps.
    Ok(MetricEstimate {
        name: MetricName::StationarityGap,
        value: mean.max(0.0),
        m,
        ci_half_width,
    })
}

// ============================================================================
// Proximal near-stationarity
// ============================================================================

/// Deterministic full-batch mirror descent minimizer of
/// objective(v) + (beta/2) ||v - w||_{p_bar}^2 over the feasible set.
///
/// `gradient` and `objective` evaluate the unregularized objective; the
/// prox term is added internally. Steps follow 1 / (rho t); the run stops
/// once the measured per-iteration objective decrease falls below 1e-10,
/// or after `iterations` steps. Returns the point, the iterations used,
/// and the last measured per-iteration decrease.
pub fn prox_point<G, O>(
    mut gradient: G,
    mut objective: O,
    constraint: &ConstraintSet,
    w: &[f64],
    start: &[f64],
    beta: f64,
    p_bar: f64,
    rho: f64,
    iterations: usize,
) -> Result<(Vec<f64>, usize, f64)>
where
    G: FnMut(&[f64], &mut [f64]),
    O: FnMut(&[f64]) -> f64,
{
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(CoreError::config("rho", format!("the step schedule needs rho > 0, got {rho}")));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(CoreError::config("beta", format!("regularization must be positive and finite, got {beta}")));
    }
    let d = w.len();
    let mut v = start.to_vec();
    let mut g = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut reg = vec![0.0; d];
    let mut z = vec![0.0; d];
    let p_norm = LpExponent::new(p_bar)?;
    let regularized = |point: &[f64], objective: &mut O| {
        let step: Vec<f64> = point.iter().zip(w).map(|(a, b)| a - b).collect();
        objective(point) + 0.5 * beta * lp_norm(&step, p_norm).powi(2)
    };
    let check_every = 50usize;
    let mut prev = regularized(&v, &mut objective);
    let mut used = 0usize;
    let mut final_decrease = f64::INFINITY;
    for t in 1..=iterations {
        gradient(&v, &mut g);
        for j in 0..d {
            diff[j] = v[j] - w[j];
        }
        grad_psi(&diff, p_bar, &mut reg);
        for j in 0..d {
            g[j] += beta * reg[j];
        }
        let eta = 1.0 / (rho * t as f64);
        grad_psi(&v, p_bar, &mut z);
        for j in 0..d {
            z[j] -= eta * g[j];
        }
        grad_psi_dual(&z, p_bar, &mut v);
        pull_into_ball(constraint, &mut v);
        used = t;
        if t % check_every == 0 {
            let current = regularized(&v, &mut objective);
            final_decrease = (prev - current) / check_every as f64;
            prev = current;
            if final_decrease.abs() < 1e-10 {
                break;
            }
        }
    }
    Ok((v, used, final_decrease))
}

/// Proximal near-stationarity of `w`: the distance to the prox point of
/// the empirical risk on a frozen sample of `m` draws, its normalized
/// variant, and the surrogate gap beta D times the distance.
pub fn prox_near_stationarity(
    w: &[f64],
    task: &TaskSpec,
    beta: f64,
    p_bar: f64,
    constraint: &ConstraintSet,
    m: usize,
    stream: u64,
) -> Result<ProxReport> {
    check_samples(m)?;
    if constraint.is_unconstrained() {
        return Err(CoreError::config("constraint", "the prox oracle needs a bounded feasible set"));
    }
    let loss = task.loss_model(feasible_l2_bound(constraint));
    let rho = match loss.rho {
        Some(r) if r > 0.0 => r,
        _ => {
            return Err(CoreError::config(
                "loss",
                format!("the prox metric targets weakly convex families; `{}` declares no modulus", loss.name()),
            ))
        }
    };
    let reg = regularity_constants(task.p, task.d, RegularityVariant::WeaklyConvex)?;
    if beta <= rho * reg.kappa {
        return Err(CoreError::config(
            "beta",
            format!(
                "regularization beta = {beta} must exceed rho kappa = {} for a strongly convex subproblem",
                rho * reg.kappa
            ),
        ));
    }
    let sample: Vec<Example> = (0..m as u64).map(|i| task.eval_example(stream, i)).collect();
    let (point, iterations, final_decrease) = prox_point(
        |v, out| mean_subgradient(&loss, v, &sample, out),
        |v| empirical_risk(&loss, v, &sample),
        constraint,
        w,
        w,
        beta,
        p_bar,
        rho,
        10_000,
    )?;
    let diff: Vec<f64> = point.iter().zip(w).map(|(a, b)| a - b).collect();
    let prox_distance = lp_norm(&diff, LpExponent::new(p_bar)?);
    let scale = (beta * constraint.diameter).max(1.0);
    Ok(ProxReport {
        prox_point: point,
        prox_distance,
        normalized_distance: scale * prox_distance,
        prox_gap: beta * constraint.diameter * prox_distance,
        m,
        iterations,
        final_decrease,
    })
}

// ============================================================================
// Rate fitting
// ============================================================================

/// Least-squares slope of log(value) against log(n).
pub fn fit_rate(ns: &[usize], values: &[f64]) -> Result<RateFit> {
    if ns.len() != values.len() {
        return Err(CoreError::config(
            "values",
            format!("{} sample sizes but {} values", ns.len(), values.len()),
        ));
    }
    if ns.len() < 3 {
        return Err(CoreError::config("ns", format!("rate fits need at least 3 points, got {}", ns.len())));
    }
    if let Some(bad) = ns.iter().find(|&&n| n == 0) {
        return Err(CoreError::config("ns", format!("sample sizes must be positive, got {bad}")));
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(CoreError::config("values", format!("log fits need positive finite values, got {bad}")));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / k;
    let y_mean = ys.iter().sum::<f64>() / k;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(CoreError::config("ns", "rate fits need at least two distinct sample sizes"));
    }
    let slope = sxy / sxx;
    Ok(RateFit { slope, intercept: y_mean - slope * x_mean, points: ns.len() })
}

// ============================================================================
// Tests
// ============================================================================
