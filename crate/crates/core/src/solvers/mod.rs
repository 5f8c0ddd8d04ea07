//! Private optimization routines.
//!
//! Five solvers share one plumbing layer: a shuffled slice allocator that
//! hands out disjoint data ranges, a noise RNG substream, a privacy ledger
//! with a planned-schedule budget guard, and a deterministic work counter
//! that doubles as the reported wall time. Every solver is a pure function
//! of (config, examples): reruns produce bit-identical outputs.

mod frank_wolfe;
mod pg_psmd;
mod phased_sgd;
mod sfw;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{lp_norm, ConstraintKind, ConstraintSet, LpExponent};
use crate::losses::{Example, LossModel};
use crate::privacy::{PrivacyBudget, PrivacyLedger};
use crate::rng::{substream, tag};

pub use frank_wolfe::{noisy_fw_noise_scale, NoisyFwSchedule};
pub use pg_psmd::{dp_strongly_convex_solve, p_bar, PgPsmdSchedule, ScSolveParams};
pub use phased_sgd::PhasedSgdSchedule;
pub use sfw::{
    noisy_sfw_sigma0, poly_sfw_round_scale, poly_sfw_trace, NoisySfwSchedule, PolySfwSchedule,
    PolySfwTrace,
};

// ============================================================================
// Identifiers and configuration
// ============================================================================

/// Solver identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PhasedSgd,
    NoisyFw,
    PolySfw,
    NoisySfw,
    PgPsmd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PhasedSgd => "phased_sgd",
            Algorithm::NoisyFw => "noisy_fw",
            Algorithm::PolySfw => "poly_sfw",
            Algorithm::NoisySfw => "noisy_sfw",
            Algorithm::PgPsmd => "pg_psmd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phased_sgd" => Ok(Algorithm::PhasedSgd),
            "noisy_fw" => Ok(Algorithm::NoisyFw),
            "poly_sfw" => Ok(Algorithm::PolySfw),
            "noisy_sfw" => Ok(Algorithm::NoisySfw),
            "pg_psmd" => Ok(Algorithm::PgPsmd),
            other => Err(CoreError::config("algorithm", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Optional knobs overriding schedule defaults. Unset fields fall back to
/// the formulas; set fields are echoed in the run's schedule summary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    /// Smoothing parameter of the oracle (where one is used).
    pub beta: Option<f64>,
    /// Oracle accuracy target.
    pub alpha: Option<f64>,
    /// Round count for the round-structured solvers.
    pub rounds: Option<u32>,
    /// Leading batch size for the variance-reduced solvers.
    pub batch: Option<usize>,
    /// Base step size for phased SGD.
    pub eta: Option<f64>,
    /// Effective dimension proxy for unconstrained phased SGD.
    pub theta: Option<f64>,
    /// Disables all noise and ledger accounting; the run is not private.
    pub noise_off: bool,
    /// Every batch is the whole dataset; slice disjointness is waived.
    /// Only meaningful together with `noise_off`.
    pub full_batches: bool,
    /// Keep every k-th macro iterate in the trace; `None` keeps none.
    pub trace_every: Option<usize>,
}

/// Everything a solver needs besides the data itself.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Ambient norm exponent; must match the constraint's norm.
    pub p: LpExponent,
    pub constraint: ConstraintSet,
    pub loss: LossModel,
    pub n: usize,
    pub d: usize,
    pub budget: PrivacyBudget,
    pub seed: u64,
    pub overrides: Overrides,
}

impl SolverConfig {
    fn validate(&self, examples: &[Example]) -> Result<()> {
        if self.d == 0 {
            return Err(CoreError::config("d", "dimension must be positive"));
        }
        if self.constraint.dim != self.d {
            return Err(CoreError::config(
                "constraint",
                format!("constraint dimension {} does not match d = {}", self.constraint.dim, self.d),
            ));
        }
        if !self.constraint.is_unconstrained() && self.p != self.constraint.norm_p {
            return Err(CoreError::config(
                "p",
                format!("ambient exponent {} does not match the constraint norm {}", self.p.value(), self.constraint.norm_p.value()),
            ));
        }
        if self.n < 2 {
            return Err(CoreError::config("n", format!("solvers need at least 2 examples, got {}", self.n)));
        }
        if examples.len() != self.n {
            return Err(CoreError::config("n", format!("config declares n = {}, dataset holds {}", self.n, examples.len())));
        }
        if let Some(ex) = examples.iter().find(|ex| ex.x.len() != self.d) {
            return Err(CoreError::config("d", format!("example has dim {}, config declares {}", ex.x.len(), self.d)));
        }
        if self.budget.delta <= 0.0 {
            return Err(CoreError::config("delta", "the schedules require delta > 0"));
        }
        if let Some(beta) = self.overrides.beta {
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(CoreError::config("beta", format!("override must be positive and finite, got {beta}")));
            }
        }
        if let Some(alpha) = self.overrides.alpha {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(CoreError::config("alpha", format!("override must be positive and finite, got {alpha}")));
            }
        }
        if let Some(rounds) = self.overrides.rounds {
            if rounds == 0 {
                return Err(CoreError::config("rounds", "override must be at least 1"));
            }
        }
        if let Some(batch) = self.overrides.batch {
            if batch == 0 {
                return Err(CoreError::config("batch", "override must be at least 1"));
            }
        }
        if let Some(eta) = self.overrides.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(CoreError::config("eta", format!("override must be positive and finite, got {eta}")));
            }
        }
        if let Some(theta) = self.overrides.theta {
            if !(theta > 0.0) || !theta.is_finite() {
                return Err(CoreError::config("theta", format!("override must be positive and finite, got {theta}")));
            }
        }
        if self.overrides.full_batches && !self.overrides.noise_off {
            return Err(CoreError::config(
                "full_batches",
                "full-dataset batches break slice disjointness; they are only allowed with noise_off",
            ));
        }
        Ok(())
    }
}

// ============================================================================
// Run results
// ============================================================================

/// One retained iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub point: Vec<f64>,
}

/// Resolved schedule values, echoed for audits and pinned by tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEcho {
    pub algorithm: Algorithm,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub rounds: Option<u32>,
    pub batch: Option<usize>,
    pub eta: Option<f64>,
    pub theta: Option<f64>,
    /// Algorithm-specific scalars (iteration counts, noise scales, planned
    /// budget) as name/value pairs.
    pub extras: Vec<(String, f64)>,
}

impl ScheduleEcho {
    fn new(algorithm: Algorithm) -> Self {
        ScheduleEcho {
            algorithm,
            beta: None,
            alpha: None,
            rounds: None,
            batch: None,
            eta: None,
            theta: None,
            extras: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, value: f64) {
        self.extras.push((name.to_string(), value));
    }
}

/// Result of one solver execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub output: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub ledger: PrivacyLedger,
    /// Composed privacy spend of the ledger (zero when noise is off).
    pub spent: PrivacyBudget,
    /// Deterministic work estimate: gradient evaluations * dimension * 1e-6.
    /// This stands in for measured time so reruns stay byte identical.
    pub wall_ms: f64,
    pub gradient_evals: u64,
    pub schedule: ScheduleEcho,
}

/// Runs the configured solver over the dataset.
pub fn solve(config: &SolverConfig, examples: &[Example]) -> Result<SolverRun> {
    config.validate(examples)?;
    match config.algorithm {
        Algorithm::PhasedSgd => phased_sgd::run(config, examples),
        Algorithm::NoisyFw => frank_wolfe::run(config, examples),
        Algorithm::PolySfw => sfw::run_poly(config, examples),
        Algorithm::NoisySfw => sfw::run_noisy(config, examples),
        Algorithm::PgPsmd => pg_psmd::run(config, examples),
    }
}

// ============================================================================
// Shared plumbing
// ============================================================================

/// Hands out disjoint slices of a master-shuffled index order. Group ranges
/// are reported in position space, so registered ledger slices are disjoint
/// exactly when the handed-out index sets are.
#[derive(Debug, Clone)]
pub struct SliceAllocator {
    order: Vec<usize>,
    cursor: usize,
}

impl SliceAllocator {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = substream(seed, &[tag::SHUFFLE]);
        order.shuffle(&mut rng);
        SliceAllocator { order, cursor: 0 }
    }

    /// Next k indices and their position range. Exceeding the dataset is a
    /// hard error: slices must stay disjoint and within [0, n).
    pub fn take(&mut self, k: usize) -> Result<(Range<usize>, &[usize])> {
        if k == 0 {
            return Err(CoreError::config("batch", "slices must be nonempty"));
        }
        let remaining = self.order.len() - self.cursor;
        if k > remaining {
            return Err(CoreError::DataExhausted {
                requested: k,
                remaining,
                total: self.order.len(),
            });
        }
        let start = self.cursor;
        self.cursor += k;
        Ok((start..self.cursor, &self.order[start..self.cursor]))
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }

    pub fn total(&self) -> usize {
        self.order.len()
    }
}

/// Gradient of psi(v) = ||v||_p^2 / 2 for p in (1, 2], written into `out`:
/// ||v||_p^(2-p) sign(v_j) |v_j|^(p-1), and 0 at v = 0.
pub(crate) fn grad_psi(v: &[f64], p: f64, out: &mut [f64]) {
    debug_assert!(p > 1.0);
    let exponent = LpExponent::new(p).expect("validated exponent");
    let norm = lp_norm(v, exponent);
    if norm == 0.0 || !norm.is_finite() {
        out.fill(0.0);
        return;
    }
    if p == 2.0 {
        out.copy_from_slice(v);
        return;
    }
    let scale = norm.powf(2.0 - p);
    for (o, &x) in out.iter_mut().zip(v) {
        *o = if x == 0.0 { 0.0 } else { scale * x.signum() * x.abs().powf(p - 1.0) };
    }
}

/// Gradient of the convex conjugate of psi: the same map with the dual
/// exponent q = p / (p - 1).
pub(crate) fn grad_psi_dual(z: &[f64], p: f64, out: &mut [f64]) {
    grad_psi(z, p / (p - 1.0), out)
}

/// Pulls `w` radially toward the ball center until feasible. For a ball in
/// the mirror map's own norm this is the exact Bregman projection (the
/// mirror point keeps its direction); for mismatched norms it is a feasible
/// surrogate. Unconstrained sets pass through; other kinds are rejected at
/// validation time.
pub(crate) fn pull_into_ball(constraint: &ConstraintSet, w: &mut [f64]) {
    if let ConstraintKind::LpBall { center, radius, p } = &constraint.kind {
        let mut diff: Vec<f64> = w.iter().zip(center).map(|(a, b)| a - b).collect();
        let norm = lp_norm(&diff, *p);
        if norm > *radius {
            let scale = radius / norm;
            for (wi, (c, dv)) in w.iter_mut().zip(center.iter().zip(diff.iter_mut())) {
                *wi = c + scale * *dv;
            }
        }
    }
}

/// w = (1 - eta) w + eta v.
pub(crate) fn mix_toward(w: &mut [f64], eta: f64, v: &[f64]) {
    for (wi, vi) in w.iter_mut().zip(v) {
        *wi = (1.0 - eta) * *wi + eta * vi;
    }
}

/// Mean loss gradient over the given example indices, written into `out`.
pub(crate) fn mean_gradient(
    loss: &LossModel,
    w: &[f64],
    examples: &[Example],
    idx: &[usize],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    out.fill(0.0);
    let inv = 1.0 / idx.len() as f64;
    for &i in idx {
        loss.subgradient_into(w, &examples[i], scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += inv * s;
        }
    }
}

/// Fresh ledger for a run: guarded by `planned` when noise is on, empty and
/// unguarded when noise is off (the run records nothing).
pub(crate) fn run_ledger(planned: PrivacyBudget, delta_prime: f64, noise_off: bool) -> Result<PrivacyLedger> {
    if noise_off {
        Ok(PrivacyLedger::new())
    } else {
        PrivacyLedger::with_target(planned, delta_prime)
    }
}

/// Composed spend of a finished run's ledger.
pub(crate) fn finish_spend(ledger: &PrivacyLedger, delta_prime: f64, noise_off: bool) -> Result<PrivacyBudget> {
    if noise_off {
        Ok(PrivacyBudget::ZERO)
    } else {
        ledger.total(delta_prime)
    }
}

pub(crate) fn wall_ms(gradient_evals: u64, d: usize) -> f64 {
    gradient_evals as f64 * d as f64 * 1e-6
}

/// Uniform pick over the collected iterate pool via the dedicated output
/// substream.
pub(crate) fn pick_output(seed: u64, pool: &mut Vec<Vec<f64>>) -> Vec<f64> {
    debug_assert!(!pool.is_empty());
    let mut rng = substream(seed, &[tag::OUTPUT_PICK]);
    let idx = rand::Rng::random_range(&mut rng, 0..pool.len());
    pool.swap_remove(idx)
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn allocator_hands_out_disjoint_cover() {
        let mut alloc = SliceAllocator::new(10, 3);
        let (r1, s1) = alloc.take(4).unwrap();
        let s1: Vec<usize> = s1.to_vec();
        assert_eq!(r1, 0..4);
        let (r2, s2) = alloc.take(6).unwrap();
        assert_eq!(r2, 4..10);
        let mut all: Vec<usize> = s1.iter().copied().chain(s2.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(matches!(alloc.take(1), Err(CoreError::DataExhausted { .. })));
    }

    #[test]
    fn allocator_shuffle_is_seed_deterministic() {
        let mut a = SliceAllocator::new(64, 9);
        let mut b = SliceAllocator::new(64, 9);
        assert_eq!(a.take(64).unwrap().1, b.take(64).unwrap().1);
        let mut c = SliceAllocator::new(64, 10);
        assert_ne!(a.order, c.take(64).unwrap().1);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for alg in [
            Algorithm::PhasedSgd,
            Algorithm::NoisyFw,
            Algorithm::PolySfw,
            Algorithm::NoisySfw,
            Algorithm::PgPsmd,
        ] {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn mirror_maps_invert_each_other() {
        let p = 1.4;
        let v = [0.7, -1.3, 0.0, 2.1];
        let mut z = [0.0; 4];
        let mut back = [0.0; 4];
        grad_psi(&v, p, &mut z);
        grad_psi_dual(&z, p, &mut back);
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn mirror_map_is_identity_at_p_two() {
        let v = [0.5, -2.0];
        let mut z = [0.0; 2];
        grad_psi(&v, 2.0, &mut z);
        assert_eq!(z, v);
    }

    #[test]
    fn pull_into_ball_respects_radius() {
        let w = ConstraintSet::lp_ball(vec![1.0, 0.0], 0.5, LpExponent::new(1.5).unwrap()).unwrap();
        let mut far = vec![3.0, 3.0];
        pull_into_ball(&w, &mut far);
        let diff = [far[0] - 1.0, far[1]];
        let norm = lp_norm(&diff, LpExponent::new(1.5).unwrap());
        assert!((norm - 0.5).abs() < 1e-12);
        let mut near = vec![1.1, 0.1];
        pull_into_ball(&w, &mut near);
        assert_eq!(near, vec![1.1, 0.1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn mirror_round_trips_random_points(
            v in proptest::collection::vec(-5.0f64..5.0, 1..7),
            p in 1.05f64..2.0,
        ) {
            let mut z = vec![0.0; v.len()];
            let mut back = vec![0.0; v.len()];
            grad_psi(&v, p, &mut z);
            grad_psi_dual(&z, p, &mut back);
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn allocator_never_repeats_indices(
            n in 2usize..200,
            seed in 0u64..50,
            chunks in proptest::collection::vec(1usize..20, 1..10),
        ) {
            let mut alloc = SliceAllocator::new(n, seed);
            let mut seen = vec![false; n];
            for k in chunks {
                match alloc.take(k) {
                    Ok((range, idx)) => {
                        prop_assert_eq!(range.len(), idx.len());
                        for &i in idx {
                            prop_assert!(!seen[i], "index {} handed out twice", i);
                            seen[i] = true;
                        }
                    }
                    Err(CoreError::DataExhausted { .. }) => break,
                    Err(other) => return Err(TestCaseError::fail(format!("{other}"))),
                }
            }
        }
    }
}
