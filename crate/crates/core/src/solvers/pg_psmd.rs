//! Proximally guided private mirror descent for weakly convex losses.
//!
//! The run is a short sequence of proximal rounds. Round r regularizes the
//! objective around the incoming iterate w_r, which turns it strongly
//! convex, and hands the subproblem to a private single-pass mirror
//! descent subsolver running on its own disjoint data slice. Because every
//! round touches fresh data, round budgets compose in parallel and the
//! whole run realizes the per-round (epsilon, delta). The output is drawn
//! uniformly from the round starting points w_1..w_R; the final solve's
//! result is paid for but never released.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{regularity_constants, ConstraintKind, ConstraintSet, RegularityVariant};
use crate::losses::Example;
use crate::privacy::{
    add_gaussian_noise, advanced_composition, gaussian_sigma, Mechanism, PrivacyBudget,
};
use crate::rng::{substream, tag};

use super::{
    finish_spend, grad_psi, grad_psi_dual, pick_output, pull_into_ball, run_ledger, wall_ms,
    ScheduleEcho, SliceAllocator, SolverConfig, SolverRun, TracePoint,
};

/// Mirror map exponent max(p, 1 + 1/ln d).
///
/// The squared lp norm loses strong convexity as p drops to 1; lifting the
/// exponent to 1 + 1/ln d keeps the modulus at the 1/ln d scale while
/// changing the norm by at most a constant factor.
pub fn p_bar(p: f64, d: usize) -> f64 {
    debug_assert!(d >= 2);
    p.max(1.0 + 1.0 / (d as f64).ln())
}

// ============================================================================
// Strongly convex subsolver
// ============================================================================

/// Resolved schedule of the private strongly convex subsolver.
///
/// The subsolver makes one pass over a slice of `steps` examples. Step t
/// queries one example, adds N(0, sigma^2) noise to every gradient
/// coordinate, and takes a mirror step with rate 1 / (modulus * t) in the
/// `p_bar` geometry. `step_epsilon` is the largest per-step cost whose
/// advanced composition over the pass stays within the round budget, so a
/// single ledger entry of the full round budget covers the whole pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScSolveParams {
    pub steps: usize,
    /// Strong convexity modulus of the objective w.r.t. the p_bar norm.
    pub modulus: f64,
    /// Mirror map exponent.
    pub p_bar: f64,
    pub step_epsilon: f64,
    pub step_delta: f64,
    /// Gaussian scale added to each queried gradient; zero disables noise.
    pub sigma: f64,
}

impl ScSolveParams {
    pub fn plan(
        steps: usize,
        modulus: f64,
        p_bar: f64,
        l2_sensitivity: f64,
        budget: PrivacyBudget,
    ) -> Result<Self> {
        if !(modulus > 0.0) || !modulus.is_finite() {
            return Err(CoreError::config(
                "beta",
                format!("the regularized subproblem must be strongly convex; modulus {modulus} is not positive"),
            ));
        }
        if steps == 0 {
            return Err(CoreError::config("n", "the subsolver needs at least one example"));
        }
        if !(l2_sensitivity > 0.0) || !l2_sensitivity.is_finite() {
            return Err(CoreError::config(
                "loss",
                format!("gradient sensitivity must be positive and finite, got {l2_sensitivity}"),
            ));
        }
        let step_delta = budget.delta / (2.0 * steps as f64);
        let delta_prime = budget.delta / 2.0;
        // The composed epsilon is continuous and increasing in the per-step
        // epsilon, vanishes at zero, and already overshoots at the target
        // itself (the sqrt(2 ln(1/delta')) factor exceeds 1). Bisect and
        // keep the lower end so the pass never exceeds the round budget.
        let mut lo = 0.0f64;
        let mut hi = budget.epsilon;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let composed = advanced_composition(mid, step_delta, steps as u64, delta_prime)?;
            if composed.epsilon <= budget.epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if !(lo > 0.0) {
            return Err(CoreError::config(
                "epsilon",
                format!("budget epsilon {} is too small to split across {steps} steps", budget.epsilon),
            ));
        }
        let sigma = gaussian_sigma(l2_sensitivity, lo, step_delta);
        if !sigma.is_finite() {
            return Err(CoreError::config("epsilon", format!("noise scale overflowed, got {sigma}")));
        }
        Ok(ScSolveParams {
            steps,
            modulus,
            p_bar,
            step_epsilon: lo,
            step_delta,
            sigma,
        })
    }
}

/// Noisy single-pass stochastic mirror descent for a strongly convex
/// objective over a ball.
///
/// `gradient(t, w, out)` writes a subgradient of the objective at `w`
/// using the t-th slice example. The returned point is the running
/// t-weighted average 2t / (m (m + 1)) of the projected iterates, which
/// concentrates faster than the last iterate under strong convexity.
pub fn dp_strongly_convex_solve<F, R>(
    params: &ScSolveParams,
    constraint: &ConstraintSet,
    start: &[f64],
    mut gradient: F,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64], &mut [f64]),
    R: Rng,
{
    let d = start.len();
    let mut w = start.to_vec();
    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let m = params.steps as f64;
    let weight_scale = 2.0 / (m * (m + 1.0));
    for t in 1..=params.steps {
        let eta = 1.0 / (params.modulus * t as f64);
        gradient(t - 1, &w, &mut g);
        if params.sigma > 0.0 {
            add_gaussian_noise(rng, params.sigma, &mut g)?;
        }
        grad_psi(&w, params.p_bar, &mut z);
        for j in 0..d {
            z[j] -= eta * g[j];
        }
        grad_psi_dual(&z, params.p_bar, &mut w);
        pull_into_ball(constraint, &mut w);
        let weight = weight_scale * t as f64;
        for j in 0..d {
            avg[j] += weight * w[j];
        }
    }
    // A convex combination of feasible points; the pull only trims ulps.
    pull_into_ball(constraint, &mut avg);
    Ok(avg)
}

// ============================================================================
// Proximal rounds schedule
// ============================================================================

/// Resolved proximal rounds schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgPsmdSchedule {
    /// Number of proximal rounds R.
    pub rounds: u32,
    /// Examples handed to each round, n / R.
    pub slice: usize,
    /// Mirror map exponent of the regularizer norm.
    pub p_bar: f64,
    pub kappa: f64,
    pub kappa_tilde: f64,
    /// Weak convexity modulus of the loss.
    pub rho: f64,
    /// Proximal regularization weight, 2 rho kappa by default.
    pub beta: f64,
    /// Strong convexity modulus beta / kappa - rho of each subproblem.
    pub lambda: f64,
    /// Per-step schedule shared by every round's subsolver.
    pub params: ScSolveParams,
}

impl PgPsmdSchedule {
    pub fn plan(config: &SolverConfig) -> Result<Self> {
        let rho = match config.loss.rho {
            Some(r) if r > 0.0 => r,
            _ => {
                return Err(CoreError::config(
                    "loss",
                    "pg_psmd regularizes a weakly convex loss; this family declares no weak convexity modulus",
                ))
            }
        };
        if !matches!(config.constraint.kind, ConstraintKind::LpBall { .. }) {
            return Err(CoreError::config(
                "constraint",
                "pg_psmd mirrors within a ball; polytopes and unconstrained sets are unsupported",
            ));
        }
        let d = config.d;
        let reg = regularity_constants(config.p, d, RegularityVariant::WeaklyConvex)?;
        let kappa = reg.kappa;
        let kappa_tilde = reg.kappa_tilde;
        let pv = config.p.value();
        let mirror_p = p_bar(pv, d);
        let l0 = config.loss.l0;
        let diameter = config.constraint.diameter;
        if (config.n as f64) * (d as f64) < rho * diameter / l0 {
            return Err(CoreError::config(
                "n",
                format!(
                    "the round schedule needs n d >= rho D / L0 = {:.3}, got {}",
                    rho * diameter / l0,
                    config.n * d
                ),
            ));
        }
        let beta = config.overrides.beta.unwrap_or(2.0 * rho * kappa);
        let lambda = beta / kappa - rho;
        if !(lambda > 0.0) {
            return Err(CoreError::config(
                "beta",
                format!(
                    "regularization beta = {beta} leaves the subproblem modulus beta / kappa - rho = {lambda}; \
                     it must exceed rho * kappa = {}",
                    rho * kappa
                ),
            ));
        }
        let rounds = match config.overrides.rounds {
            Some(r) => {
                if r as usize > config.n {
                    return Err(CoreError::config(
                        "rounds",
                        format!("{r} rounds cannot each get an example from n = {}", config.n),
                    ));
                }
                r
            }
            None => {
                let nf = config.n as f64;
                let ln_inv_delta = (1.0 / config.budget.delta).ln();
                let sample_term = (nf * diameter * rho / (kappa * l0)).sqrt();
                let privacy_term = (diameter * (nf * config.budget.epsilon).powi(2) * rho
                    / (l0 * d as f64 * ln_inv_delta))
                    .cbrt()
                    / (kappa_tilde * kappa * kappa).cbrt();
                let r = sample_term.min(privacy_term).floor();
                if r < 1.0 {
                    return Err(CoreError::config(
                        "n",
                        format!("the round count floors to zero at n = {}; more data is needed", config.n),
                    ));
                }
                r.min(nf) as u32
            }
        };
        let slice = config.n / rounds as usize;
        // One example swap moves one step's gradient by at most twice the
        // loss Lipschitz bound, measured in l2 for the Gaussian mechanism.
        let l2_sensitivity = 2.0 * l0 * (d as f64).powf(1.0 / pv - 0.5);
        let params = ScSolveParams::plan(slice, lambda, mirror_p, l2_sensitivity, config.budget)?;
        Ok(PgPsmdSchedule {
            rounds,
            slice,
            p_bar: mirror_p,
            kappa,
            kappa_tilde,
            rho,
            beta,
            lambda,
            params,
        })
    }
}

pub(super) fn run(config: &SolverConfig, examples: &[Example]) -> Result<SolverRun> {
    let sched = PgPsmdSchedule::plan(config)?;
    let noise_off = config.overrides.noise_off;
    let d = config.d;

    let mut allocator = SliceAllocator::new(config.n, config.seed);
    let mut noise_rng = substream(config.seed, &[tag::NOISE]);
    // Rounds run on disjoint slices, so round costs compose in parallel
    // and the planned total is the per-round budget itself.
    let mut ledger = run_ledger(config.budget, config.budget.delta, noise_off)?;

    let mut params = sched.params.clone();
    if noise_off {
        params.sigma = 0.0;
    }

    let mut w = config.constraint.initial_point();
    let mut pool: Vec<Vec<f64>> = Vec::new();
    let mut trace = Vec::new();
    let mut evals = 0u64;
    let mut reg_diff = vec![0.0; d];
    let mut reg_grad = vec![0.0; d];

    for r in 0..sched.rounds as usize {
        // The incoming iterate joins the output pool before the round
        // moves past it, so the last solve's result is never released.
        pool.push(w.clone());
        let (range, idx) = allocator.take(sched.slice)?;
        if !noise_off {
            let group = ledger.register_group(range.start, range.end)?;
            // Recorded before the pass fires; the bisected per-step cost
            // composes to exactly this total over the slice.
            ledger.record(group, Mechanism::Gaussian, config.budget.epsilon, config.budget.delta)?;
        }
        let center = w.clone();
        w = dp_strongly_convex_solve(
            &params,
            &config.constraint,
            &center,
            |t, point, out| {
                config.loss.subgradient_into(point, &examples[idx[t]], out);
                for j in 0..d {
                    reg_diff[j] = point[j] - center[j];
                }
                grad_psi(&reg_diff, sched.p_bar, &mut reg_grad);
                for j in 0..d {
                    out[j] += sched.beta * reg_grad[j];
                }
            },
            &mut noise_rng,
        )?;
        evals += sched.slice as u64;
        if let Some(every) = config.overrides.trace_every {
            if every > 0 && (r + 1) % every == 0 {
                trace.push(TracePoint { step: r + 1, point: w.clone() });
            }
        }
    }

    let output = pick_output(config.seed, &mut pool);
    let spent = finish_spend(&ledger, config.budget.delta, noise_off)?;

    let mut echo = ScheduleEcho::new(config.algorithm);
    echo.beta = Some(sched.beta);
    echo.rounds = Some(sched.rounds);
    echo.push("slice", sched.slice as f64);
    echo.push("p_bar", sched.p_bar);
    echo.push("kappa", sched.kappa);
    echo.push("kappa_tilde", sched.kappa_tilde);
    echo.push("rho", sched.rho);
    echo.push("lambda", sched.lambda);
    echo.push("step_epsilon", sched.params.step_epsilon);
    echo.push("step_sigma", sched.params.sigma);
    echo.push("planned_epsilon", config.budget.epsilon);
    echo.push("planned_delta", config.budget.delta);

    Ok(SolverRun {
        output,
        trace,
        ledger,
        spent,
        wall_ms: wall_ms(evals, d),
        gradient_evals: evals,
        schedule: echo,
    })
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConstraintSet, LpExponent};
    use crate::losses::{GllSpec, LossModel};
    use crate::solvers::{solve, Algorithm, Overrides};
    use crate::{FeatureLaw, TaskFamily, TaskSpec};

    fn ball_config(n: usize, d: usize) -> SolverConfig {
        SolverConfig {
            algorithm: Algorithm::PgPsmd,
            p: LpExponent::two(),
            constraint: ConstraintSet::lp_ball(vec![0.0; d], 1.0, LpExponent::two()).unwrap(),
            loss: LossModel::weakly_convex(1.0, 1.0),
            n,
            d,
            budget: PrivacyBudget::new(1.0, 1e-5).unwrap(),
            seed: 11,
            overrides: Overrides::default(),
        }
    }

    // rho = 2 fb^2 = 1, L0 = rho * w_bound = 1.
    fn l1_config(n: usize, d: usize) -> SolverConfig {
        SolverConfig {
            algorithm: Algorithm::PgPsmd,
            p: LpExponent::one(),
            constraint: ConstraintSet::lp_ball(vec![0.0; d], 1.0, LpExponent::one()).unwrap(),
            loss: LossModel::weakly_convex(std::f64::consts::FRAC_1_SQRT_2, 1.0),
            n,
            d,
            budget: PrivacyBudget::new(1.0, 1e-5).unwrap(),
            seed: 11,
            overrides: Overrides::default(),
        }
    }

    fn retrieval_examples(n: usize, d: usize, p: LpExponent, seed: u64) -> Vec<Example> {
        let spec = TaskSpec::new(
            TaskFamily::PhaseRetrieval,
            d,
            p,
            FeatureLaw::DualSphere,
            1.0,
            0.1,
            None,
            seed,
        )
        .unwrap();
        (0..n as u64).map(|i| spec.train_example(i)).collect()
    }

    #[test]
    fn mirror_exponent_matches_hand_computation() {
        // p = 1, d = 100: 1 + 1/ln 100.
        let got = p_bar(1.0, 100);
        let pin = 1.217147;
        assert!(((got - pin) / pin).abs() < 1e-4, "p_bar {got} does not match pin {pin}");
        assert_eq!(p_bar(2.0, 100), 2.0);
    }

    #[test]
    fn regularization_matches_hand_computation() {
        // rho = 1, p = 1, d = 100: kappa = ln 100, beta = 2 rho kappa.
        let sched = PgPsmdSchedule::plan(&l1_config(1024, 100)).unwrap();
        let kappa_pin = 4.6052;
        let beta_pin = 9.2103;
        assert!(((sched.kappa - kappa_pin) / kappa_pin).abs() < 1e-4, "kappa {}", sched.kappa);
        assert!(((sched.beta - beta_pin) / beta_pin).abs() < 1e-4, "beta {}", sched.beta);
        assert!(((sched.p_bar - 1.217147) / 1.217147).abs() < 1e-4, "p_bar {}", sched.p_bar);
        // beta / kappa - rho lands back on rho.
        assert!((sched.lambda - sched.rho).abs() < 1e-12, "lambda {}", sched.lambda);
    }

    #[test]
    fn round_count_follows_the_theorem() {
        // n = 1024, D = 2, rho = L0 = 1, kappa = ln 100: the sample term is
        // sqrt(2048 / ln 100) ~ 21.1 and the privacy term ~ 2.48; R = 2.
        let sched = PgPsmdSchedule::plan(&l1_config(1024, 100)).unwrap();
        assert_eq!(sched.rounds, 2);
        assert_eq!(sched.slice, 512);

        // n = 256, d = 10, rho = L0 = D = 2, kappa = kappa_tilde = 1: the
        // privacy term (2 * 256^2 * 2 / (2 * 10 * ln 1e5))^(1/3) ~ 10.44.
        let sched = PgPsmdSchedule::plan(&ball_config(256, 10)).unwrap();
        assert_eq!(sched.rounds, 10);
        assert_eq!(sched.slice, 25);

        let err = PgPsmdSchedule::plan(&l1_config(16, 100)).unwrap_err();
        assert!(matches!(err, CoreError::Config { ref key, .. } if key == "n"), "{err}");

        let mut config = ball_config(256, 10);
        config.overrides.rounds = Some(300);
        let err = PgPsmdSchedule::plan(&config).unwrap_err();
        assert!(matches!(err, CoreError::Config { ref key, .. } if key == "rounds"), "{err}");
    }

    #[test]
    fn data_requirement_is_enforced() {
        // w_bound = 1e-6 drops L0 to 1e-6, so rho D / L0 = 2e6 > n d.
        let mut config = l1_config(1024, 100);
        config.loss = LossModel::weakly_convex(std::f64::consts::FRAC_1_SQRT_2, 1e-6);
        let err = PgPsmdSchedule::plan(&config).unwrap_err();
        assert!(matches!(err, CoreError::Config { ref key, .. } if key == "n"), "{err}");
    }

    #[test]
    fn rejects_unsupported_losses_and_constraints() {
        let mut config = ball_config(256, 10);
        config.loss = LossModel::gll(GllSpec::absolute(1.0).unwrap());
        let err = PgPsmdSchedule::plan(&config).unwrap_err();
        assert!(matches!(err, CoreError::Config { ref key, .. } if key == "loss"), "{err}");

        let mut config = l1_config(1024, 10);
        config.constraint = ConstraintSet::l1_cross_polytope(10, 1.0).unwrap();
        let err = PgPsmdSchedule::plan(&config).unwrap_err();
        assert!(matches!(err, CoreError::Config { ref key, .. } if key == "constraint"), "{err}");

        let mut config = ball_config(256, 10);
        config.constraint = ConstraintSet::unconstrained(10).unwrap();
        let err = PgPsmdSchedule::plan(&config).unwrap_err();
        assert!(matches!(err, CoreError::Config { ref key, .. } if key == "constraint"), "{err}");
    }

    #[test]
    fn beta_override_controls_strong_convexity() {
        // rho = 2, kappa = 1: any beta at or below rho kappa = 2 leaves the
        // subproblem flat.
        let mut config = ball_config(256, 10);
        config.overrides.beta = Some(1.0);
        let err = PgPsmdSchedule::plan(&config).unwrap_err();
        assert!(matches!(err, CoreError::Config { ref key, .. } if key == "beta"), "{err}");

        config.overrides.beta = Some(8.0);
        let sched = PgPsmdSchedule::plan(&config).unwrap();
        assert!((sched.lambda - 6.0).abs() < 1e-12, "lambda {}", sched.lambda);
    }

    #[test]
    fn step_epsilon_realizes_the_round_budget() {
        let config = ball_config(256, 10);
        let sched = PgPsmdSchedule::plan(&config).unwrap();
        let p = &sched.params;
        let composed = advanced_composition(
            p.step_epsilon,
            p.step_delta,
            p.steps as u64,
            config.budget.delta / 2.0,
        )
        .unwrap();
        assert!(composed.epsilon <= config.budget.epsilon, "overshoots: {}", composed.epsilon);
        assert!(
            composed.epsilon > config.budget.epsilon * (1.0 - 1e-6),
            "leaves budget unused: {}",
            composed.epsilon
        );
        let delta_err = (composed.delta - config.budget.delta).abs() / config.budget.delta;
        assert!(delta_err < 1e-12, "delta {}", composed.delta);
    }

    #[test]
    fn subsolver_tracks_a_quadratic_minimizer() {
        // Gradient lambda (w - w*) with a nearly unconstrained budget: the
        // weighted average must land within 2.5% of the diameter of w*.
        let d = 4;
        let lambda = 5.0;
        let target = vec![0.3, -0.2, 0.1, 0.05];
        let constraint = ConstraintSet::lp_ball(vec![0.0; d], 1.0, LpExponent::two()).unwrap();
        let budget = PrivacyBudget::new(1e6, 1e-5).unwrap();
        let params = ScSolveParams::plan(10_000, lambda, 2.0, 1.0, budget).unwrap();
        let mut rng = substream(5, &[tag::NOISE]);
        let out = dp_strongly_convex_solve(
            &params,
            &constraint,
            &vec![0.0; d],
            |_, w, g| {
                for j in 0..d {
                    g[j] = lambda * (w[j] - target[j]);
                }
            },
            &mut rng,
        )
        .unwrap();
        let dist: f64 = out
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist <= 0.05 * constraint.diameter, "distance {dist} from the minimizer");
    }

    #[test]
    fn subsolver_without_noise_finds_the_exact_minimizer() {
        // With sigma = 0 and rate 1/(lambda t), the first step lands on the
        // minimizer exactly and every later gradient vanishes.
        let d = 3;
        let target = vec![0.2, -0.4, 0.1];
        let constraint = ConstraintSet::lp_ball(vec![0.0; d], 1.0, LpExponent::two()).unwrap();
        let params = ScSolveParams {
            steps: 200,
            modulus: 1.0,
            p_bar: 2.0,
            step_epsilon: 1.0,
            step_delta: 1e-7,
            sigma: 0.0,
        };
        let mut rng = substream(5, &[tag::NOISE]);
        let out = dp_strongly_convex_solve(
            &params,
            &constraint,
            &vec![0.0; d],
            |_, w, g| {
                for j in 0..d {
                    g[j] = w[j] - target[j];
                }
            },
            &mut rng,
        )
        .unwrap();
        for (a, b) in out.iter().zip(&target) {
            assert!((a - b).abs() < 1e-12, "coordinate {a} vs {b}");
        }
    }

    #[test]
    fn ledger_pays_each_round_once() {
        let config = ball_config(256, 10);
        let examples = retrieval_examples(256, 10, LpExponent::two(), 21);
        let run = solve(&config, &examples).unwrap();
        assert_eq!(run.schedule.rounds, Some(10));
        assert_eq!(run.ledger.groups().len(), 10);
        assert_eq!(run.ledger.entries().len(), 10);
        for entry in run.ledger.entries() {
            assert_eq!(entry.mechanism, Mechanism::Gaussian);
            assert_eq!(entry.epsilon, config.budget.epsilon);
            assert_eq!(entry.delta, config.budget.delta);
        }
        // Disjoint rounds compose in parallel: the spend is the budget.
        assert_eq!(run.spent, config.budget);
        assert_eq!(run.gradient_evals, 250);
    }

    #[test]
    fn output_comes_from_the_visited_rounds() {
        let mut config = ball_config(256, 10);
        config.overrides.trace_every = Some(1);
        let examples = retrieval_examples(256, 10, LpExponent::two(), 22);
        let run = solve(&config, &examples).unwrap();
        let rounds = run.schedule.rounds.unwrap() as usize;
        assert_eq!(run.trace.len(), rounds);
        // Eligible points: the initial iterate and all but the last round's
        // result.
        let mut pool = vec![config.constraint.initial_point()];
        for point in &run.trace[..rounds - 1] {
            pool.push(point.point.clone());
        }
        assert!(pool.contains(&run.output), "output is not a visited round start");
        assert!(config.constraint.contains(&run.output, 1e-9));
    }

    #[test]
    fn noise_off_spends_nothing() {
        let mut config = ball_config(256, 10);
        config.overrides.noise_off = true;
        let examples = retrieval_examples(256, 10, LpExponent::two(), 23);
        let run = solve(&config, &examples).unwrap();
        assert_eq!(run.spent, PrivacyBudget::ZERO);
        assert!(run.ledger.entries().is_empty());
        assert!(config.constraint.contains(&run.output, 1e-9));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let config = ball_config(128, 6);
        let examples = retrieval_examples(128, 6, LpExponent::two(), 31);
        assert_eq!(solve(&config, &examples).unwrap(), solve(&config, &examples).unwrap());

        let mut other = config.clone();
        other.seed = 12;
        assert_ne!(solve(&config, &examples).unwrap().output, solve(&other, &examples).unwrap().output);
    }
}
