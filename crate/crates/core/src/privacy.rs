//! Privacy accounting: mechanism calibration, composition rules, and a
//! ledger that tracks spend per disjoint data slice.
//!
//! Accounting model: every noise event is recorded against a group. A group
//! owns a half-open slice [start, end) of the dataset; slices of different
//! groups must not overlap, so group totals combine by taking the maximum
//! (parallel composition). Within a group, a single entry passes through
//! unchanged and two or more entries combine by the advanced composition
//! bound with the slack delta' supplied at query time.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

// ============================================================================
// Budgets and composition
// ============================================================================

/// An (epsilon, delta) differential privacy budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(CoreError::config("epsilon", format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(CoreError::config("delta", format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }

    pub const ZERO: PrivacyBudget = PrivacyBudget { epsilon: 0.0, delta: 0.0 };

    /// True when self is larger than `target` beyond a relative slack.
    pub fn exceeds(&self, target: &PrivacyBudget, rel_slack: f64) -> bool {
        self.epsilon > target.epsilon * (1.0 + rel_slack)
            || self.delta > target.delta * (1.0 + rel_slack) + f64::MIN_POSITIVE
    }
}

fn check_step(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(CoreError::config("epsilon", format!("per-step epsilon must be positive and finite, got {epsilon}")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(CoreError::config("delta", format!("per-step delta must lie in [0, 1), got {delta}")));
    }
    Ok(())
}

fn check_delta_prime(delta_prime: f64) -> Result<()> {
    if !(delta_prime > 0.0) || delta_prime >= 1.0 {
        return Err(CoreError::config("delta_prime", format!("composition slack must lie in (0, 1), got {delta_prime}")));
    }
    Ok(())
}

/// Advanced composition of k identical (epsilon, delta) mechanisms with
/// slack delta':
/// epsilon' = epsilon sqrt(2 k ln(1/delta')) + k epsilon (e^epsilon - 1),
/// delta_total = k delta + delta'.
///
/// The bound is applied verbatim for every k >= 1, so even k = 1 pays the
/// sqrt term.
pub fn advanced_composition(epsilon: f64, delta: f64, k: u64, delta_prime: f64) -> Result<PrivacyBudget> {
    if k == 0 {
        return Err(CoreError::config("k", "composition needs at least one mechanism".to_string()));
    }
    check_step(epsilon, delta)?;
    check_delta_prime(delta_prime)?;
    let kf = k as f64;
    let eps = epsilon * (2.0 * kf * (1.0 / delta_prime).ln()).sqrt() + kf * epsilon * epsilon.exp_m1();
    Ok(PrivacyBudget { epsilon: eps, delta: kf * delta + delta_prime })
}

/// Heterogeneous advanced composition:
/// epsilon' = sqrt(2 ln(1/delta') sum eps_i^2) + sum eps_i (e^{eps_i} - 1),
/// delta_total = sum delta_i + delta'. Symmetric in the terms, so the
/// result does not depend on recording order.
pub fn heterogeneous_composition(terms: &[(f64, f64)], delta_prime: f64) -> Result<PrivacyBudget> {
    if terms.is_empty() {
        return Err(CoreError::config("terms", "composition needs at least one mechanism".to_string()));
    }
    check_delta_prime(delta_prime)?;
    for &(e, d) in terms {
        check_step(e, d)?;
    }
    let sq: f64 = terms.iter().map(|(e, _)| e * e).sum();
    let drift: f64 = terms.iter().map(|(e, _)| e * e.exp_m1()).sum();
    let delta: f64 = terms.iter().map(|(_, d)| d).sum();
    Ok(PrivacyBudget {
        epsilon: (2.0 * (1.0 / delta_prime).ln() * sq).sqrt() + drift,
        delta: delta + delta_prime,
    })
}

// ============================================================================
// Mechanism calibration and sampling
// ============================================================================

/// Noise family attached to a ledger entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Laplace,
    Gaussian,
    NoisyMax,
}

/// Standard deviation for the Gaussian mechanism:
/// sigma = sensitivity sqrt(2 ln(1.25/delta)) / epsilon.
pub fn gaussian_sigma(l2_sensitivity: f64, epsilon: f64, delta: f64) -> f64 {
    l2_sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon
}

/// Epsilon spent by a Gaussian mechanism with the given noise level,
/// inverting `gaussian_sigma`.
pub fn gaussian_epsilon(l2_sensitivity: f64, sigma: f64, delta: f64) -> f64 {
    l2_sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / sigma
}

/// Scale of the Laplace mechanism: sensitivity / epsilon.
pub fn laplace_scale(l1_sensitivity: f64, epsilon: f64) -> f64 {
    l1_sensitivity / epsilon
}

/// Inverse-CDF Laplace draw; scale is assumed validated by the caller.
fn laplace_draw<R: rand::Rng>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn check_scale(key: &'static str, scale: f64) -> Result<()> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(CoreError::config(key, format!("noise scale must be positive and finite, got {scale}")));
    }
    Ok(())
}

/// One Laplace(0, scale) draw via inverse transform sampling.
pub fn laplace_sample<R: rand::Rng>(rng: &mut R, scale: f64) -> Result<f64> {
    check_scale("scale", scale)?;
    Ok(laplace_draw(rng, scale))
}

/// One N(0, sigma^2) draw.
pub fn gaussian_sample<R: rand::Rng>(rng: &mut R, sigma: f64) -> Result<f64> {
    check_scale("sigma", sigma)?;
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    Ok(sigma * z)
}

/// Adds iid N(0, sigma^2) noise to `out`.
pub fn add_gaussian_noise<R: rand::Rng>(rng: &mut R, sigma: f64, out: &mut [f64]) -> Result<()> {
    check_scale("sigma", sigma)?;
    for o in out.iter_mut() {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *o += sigma * z;
    }
    Ok(())
}

/// Index of the smallest score after adding iid Laplace(scale) noise to
/// each entry. With scale = 2 * score_sensitivity / epsilon this selection
/// is epsilon-differentially private. Ties take the lowest index. A zero
/// scale degrades to the exact argmin and consumes no randomness.
pub fn report_noisy_argmin<R: rand::Rng>(rng: &mut R, scores: &[f64], scale: f64) -> Result<usize> {
    if scores.is_empty() {
        return Err(CoreError::config("scores", "noisy argmin needs at least one candidate".to_string()));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(CoreError::config("scale", format!("noise scale must be nonnegative and finite, got {scale}")));
    }
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for (i, s) in scores.iter().enumerate() {
        let noisy = if scale == 0.0 { *s } else { s + laplace_draw(rng, scale) };
        if noisy < best_score {
            best_score = noisy;
            best = i;
        }
    }
    Ok(best)
}

// ============================================================================
// Ledger
// ============================================================================

/// One recorded noise event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    /// Index of the group the event charges against.
    pub group: usize,
}

/// Handle for a registered slice group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupId(usize);

impl GroupId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Half-open data slice owned by one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSlice {
    pub start: usize,
    pub end: usize,
}

/// Running account of privacy spend.
///
/// `record` is called before the corresponding mechanism fires, so a budget
/// overrun aborts a run before any extra information leaks. When a target
/// is set, each record checks the new total against it; the target is the
/// composed cost of the solver's planned schedule, so tripping the guard
/// means the execution diverged from the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PrivacyLedger {
    groups: Vec<GroupSlice>,
    entries: Vec<LedgerEntry>,
    target: Option<PrivacyBudget>,
    target_delta_prime: Option<f64>,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ledger with a budget guard. Totals checked against the target use
    /// `delta_prime` as the within-group composition slack.
    pub fn with_target(target: PrivacyBudget, delta_prime: f64) -> Result<Self> {
        check_delta_prime(delta_prime)?;
        Ok(PrivacyLedger {
            groups: Vec::new(),
            entries: Vec::new(),
            target: Some(target),
            target_delta_prime: Some(delta_prime),
        })
    }

    pub fn target(&self) -> Option<PrivacyBudget> {
        self.target
    }

    /// Registers a group owning the data slice [start, end). Slices of
    /// distinct groups must be disjoint; overlap is a hard error because
    /// the parallel-composition total would silently undercount.
    pub fn register_group(&mut self, start: usize, end: usize) -> Result<GroupId> {
        if start >= end {
            return Err(CoreError::config("group", format!("group slice [{start}, {end}) is empty")));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if start < g.end && g.start < end {
                return Err(CoreError::SliceOverlap {
                    group_a: i,
                    a_start: g.start,
                    a_end: g.end,
                    group_b: self.groups.len(),
                    b_start: start,
                    b_end: end,
                });
            }
        }
        self.groups.push(GroupSlice { start, end });
        Ok(GroupId(self.groups.len() - 1))
    }

    /// Records a noise event against `group`, then re-checks the target when
    /// one is set. The offending entry stays on the ledger so the audit
    /// trail shows what tripped the guard.
    pub fn record(&mut self, group: GroupId, mechanism: Mechanism, epsilon: f64, delta: f64) -> Result<()> {
        if group.0 >= self.groups.len() {
            return Err(CoreError::config("group", format!("unknown group {}", group.0)));
        }
        check_step(epsilon, delta)?;
        self.entries.push(LedgerEntry { mechanism, epsilon, delta, group: group.0 });
        if let (Some(target), Some(dp)) = (self.target, self.target_delta_prime) {
            let spent = self.total(dp)?;
            if spent.exceeds(&target, 1e-9) {
                return Err(CoreError::BudgetExhausted {
                    spent_eps: spent.epsilon,
                    spent_delta: spent.delta,
                    target_eps: target.epsilon,
                    target_delta: target.delta,
                });
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn groups(&self) -> &[GroupSlice] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Composed spend of one group: empty groups cost nothing, a single
    /// entry passes through unchanged, k >= 2 entries compose by the
    /// heterogeneous advanced composition bound with slack delta'.
    pub fn group_total(&self, group: GroupId, delta_prime: f64) -> Result<PrivacyBudget> {
        if group.0 >= self.groups.len() {
            return Err(CoreError::config("group", format!("unknown group {}", group.0)));
        }
        let terms: Vec<(f64, f64)> = self
            .entries
            .iter()
            .filter(|e| e.group == group.0)
            .map(|e| (e.epsilon, e.delta))
            .collect();
        match terms.len() {
            0 => Ok(PrivacyBudget::ZERO),
            1 => Ok(PrivacyBudget { epsilon: terms[0].0, delta: terms[0].1 }),
            _ => heterogeneous_composition(&terms, delta_prime),
        }
    }

    /// Total spend: componentwise maximum over groups, because groups own
    /// disjoint data slices.
    pub fn total(&self, delta_prime: f64) -> Result<PrivacyBudget> {
        check_delta_prime(delta_prime)?;
        let mut total = PrivacyBudget::ZERO;
        for i in 0..self.groups.len() {
            let g = self.group_total(GroupId(i), delta_prime)?;
            total.epsilon = total.epsilon.max(g.epsilon);
            total.delta = total.delta.max(g.delta);
        }
        Ok(total)
    }
}

// ============================================================================
// Tests
// ============================================================================
