//! The invariant suite behind `dpopt check`.
//!
//! Every check is an ordinary function returning `Ok(())` or a failure
//! message, so the same code runs in the pass/fail table (at quick sizes)
//! and in integration tests (at full sizes). Checks are deterministic:
//! randomized ones draw from fixed substreams.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use dpopt_core::data::{FeatureLaw, TaskFamily, TaskSpec};
use dpopt_core::error::CoreError;
use dpopt_core::evaluation::{fit_rate, prox_point};
use dpopt_core::geometry::{lp_norm, regularity_constants, ConstraintSet, LpExponent, RegularityVariant};
use dpopt_core::losses::{
    bisection_iteration_count, bisection_oracle, bisection_prox, prox_scalar, Example, GllSpec, LossModel,
};
use dpopt_core::privacy::{
    advanced_composition, gaussian_sample, laplace_sample, Mechanism, PrivacyBudget, PrivacyLedger,
};
use dpopt_core::rng::substream;
use dpopt_core::solvers::{
    noisy_fw_noise_scale, noisy_sfw_sigma0, p_bar, poly_sfw_round_scale, poly_sfw_trace, solve, Algorithm, Overrides,
    PhasedSgdSchedule, SolverConfig,
};

const ALL_ALGORITHMS: [Algorithm; 5] = [
    Algorithm::PhasedSgd,
    Algorithm::NoisyFw,
    Algorithm::PolySfw,
    Algorithm::NoisySfw,
    Algorithm::PgPsmd,
];

type CheckResult = Result<(), String>;

/// Outcome of one named check.
pub struct CheckOutcome {
    pub name: &'static str,
    pub detail: CheckResult,
}

/// Runs the registry, optionally filtered by a name substring. The
/// `inject_schedule_error` hook corrupts one computed noise constant so the
/// pin comparison itself can be smoke-tested.
pub fn run_checks(filter: Option<&str>, inject_schedule_error: bool) -> Vec<CheckOutcome> {
    let sigma_scale = if inject_schedule_error { 1.5 } else { 1.0 };
    let checks: Vec<(&'static str, Box<dyn Fn() -> CheckResult>)> = vec![
        ("oracle_accuracy", Box::new(|| oracle_accuracy(500, 61))),
        ("schedule_pins", Box::new(move || schedule_pins(sigma_scale))),
        ("composition_pins", Box::new(composition_pins)),
        ("ledger_scenarios", Box::new(ledger_scenarios)),
        ("budget_guard", Box::new(budget_guard)),
        ("sampler_distributions", Box::new(|| sampler_distributions(20_000))),
        ("slice_disjointness", Box::new(|| slice_disjointness(20, 2024))),
        ("noiseless_degeneration", Box::new(|| noiseless_degeneration(10, 256))),
        ("sensitivity_audit", Box::new(|| sensitivity_audit(25, 55))),
        ("finite_difference", Box::new(|| finite_difference(200, 1e-5, 33))),
        ("output_feasibility", Box::new(|| output_feasibility(5))),
        ("solver_determinism", Box::new(|| solver_determinism(11))),
        ("rate_fit", Box::new(rate_fit_sanity)),
        ("prox_quadratic", Box::new(prox_quadratic)),
    ];
    checks
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, check)| CheckOutcome { name, detail: check() })
        .collect()
}

fn rel_err(got: f64, pin: f64) -> f64 {
    ((got - pin) / pin).abs()
}

// ============================================================================
// Oracle accuracy
// ============================================================================

/// Random (w, example, beta, alpha) cases for the absolute and hinge links:
/// the bisection gradient must sit within alpha of the closed-form envelope
/// gradient in the dual norm, and the scalar prox must be alpha^2/(2 beta R^2)
/// suboptimal at worst.
pub fn oracle_accuracy(cases: usize, seed: u64) -> CheckResult {
    let d = 8;
    let specs = [GllSpec::absolute(1.0), GllSpec::hinge(1.0)];
    let mut rng = substream(seed, &[40]);
    for case in 0..cases {
        let spec = match specs[case % 2].as_ref() {
            Ok(s) => s,
            Err(e) => return Err(format!("spec construction failed: {e}")),
        };
        let hinge = case % 2 == 1;
        let w: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let z: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        let norm = lp_norm(&z, LpExponent::two());
        let x: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let y = if hinge {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        } else {
            3.0 * (rng.random::<f64>() - 0.5)
        };
        let ex = Example { x, y };
        let beta = 10f64.powf(3.0 * rng.random::<f64>());
        let alpha = 10f64.powf(-4.0 + 3.0 * rng.random::<f64>());

        let g = bisection_oracle(&w, &ex, spec, beta, alpha).map_err(|e| format!("case {case}: {e}"))?;
        let m: f64 = w.iter().zip(&ex.x).map(|(a, b)| a * b).sum();
        let u_star = prox_scalar(&spec.link, ex.y, m, beta);
        let exact: Vec<f64> = ex.x.iter().map(|xi| beta * (m - u_star) * xi).collect();
        let diff: Vec<f64> = g.iter().zip(&exact).map(|(a, b)| a - b).collect();
        let err = lp_norm(&diff, LpExponent::two());
        if err > alpha * (1.0 + 1e-9) {
            return Err(format!("case {case}: dual-norm error {err} exceeds alpha = {alpha}"));
        }

        let u_bis = bisection_prox(spec, beta, alpha, m, ex.y).map_err(|e| format!("case {case}: {e}"))?;
        let objective = |u: f64| spec.link.value(u, ex.y) + 0.5 * beta * (u - m) * (u - m);
        let subopt = objective(u_bis) - objective(u_star);
        let bound = alpha * alpha / (2.0 * beta * spec.r * spec.r);
        if subopt > bound * (1.0 + 1e-9) + 1e-15 {
            return Err(format!("case {case}: suboptimality {subopt} exceeds {bound}"));
        }
    }
    Ok(())
}

// ============================================================================
// Schedule and composition pins
// ============================================================================

/// Recomputes the hand-derived schedule constants through the public
/// planners and compares at 1e-4 relative. `sigma_scale` multiplies the
/// computed leading noise scale; anything other than 1.0 must fail.
pub fn schedule_pins(sigma_scale: f64) -> CheckResult {
    let mut failures = Vec::new();

    let config = SolverConfig {
        algorithm: Algorithm::PhasedSgd,
        p: LpExponent::two(),
        constraint: ConstraintSet::lp_ball(vec![0.0; 4], 0.5, LpExponent::two()).map_err(|e| e.to_string())?,
        loss: LossModel::gll(GllSpec::absolute(1.0).map_err(|e| e.to_string())?),
        n: 1024,
        d: 4,
        budget: PrivacyBudget::new(1.0, 1e-5).map_err(|e| e.to_string())?,
        seed: 0,
        overrides: Overrides::default(),
    };
    match PhasedSgdSchedule::plan(&config) {
        Ok(sched) => {
            if rel_err(sched.eta, 0.010417) > 1e-4 {
                failures.push(format!("eta {} vs pin 0.010417", sched.eta));
            }
        }
        Err(e) => failures.push(format!("phased schedule failed to plan: {e}")),
    }

    let steps = bisection_iteration_count(1.0, 1.0, 0.5);
    if steps != 6 {
        failures.push(format!("bisection count {steps} vs pin 6"));
    }

    let s = noisy_fw_noise_scale(1.0, 1.0, 1.0, 100, 1000, 1.0, 1e-5);
    if rel_err(s, 0.287912) > 1e-4 {
        failures.push(format!("selection scale {s} vs pin 0.287912"));
    }

    let s1 = poly_sfw_round_scale(1.0, 1.0, 2.0, 1, 100, 1.0, 1e-5);
    if rel_err(s1, 0.814337) > 1e-4 {
        failures.push(format!("round scale {s1} vs pin 0.814337"));
    }

    let sigma0 = sigma_scale * noisy_sfw_sigma0(1.0, 5, 2.0, 100, 1.0, (-1.0f64).exp());
    if rel_err(sigma0, 0.04) > 1e-4 {
        failures.push(format!("sigma0 {sigma0} vs pin 0.04"));
    }

    let exponent = p_bar(1.0, 100);
    if rel_err(exponent, 1.217147) > 1e-4 {
        failures.push(format!("p_bar {exponent} vs pin 1.217147"));
    }

    match regularity_constants(LpExponent::one(), 100, RegularityVariant::WeaklyConvex) {
        Ok(reg) => {
            let beta = 2.0 * reg.kappa;
            if rel_err(beta, 9.2103) > 1e-4 {
                failures.push(format!("beta {beta} vs pin 9.2103"));
            }
        }
        Err(e) => failures.push(format!("regularity constants failed: {e}")),
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join("; "))
    }
}

/// The advanced composition closed form at two pinned inputs.
pub fn composition_pins() -> CheckResult {
    let one = advanced_composition(0.1, 1e-6, 100, 1e-6).map_err(|e| e.to_string())?;
    if rel_err(one.epsilon, 6.308231) > 1e-4 || rel_err(one.delta, 1.01e-4) > 1e-4 {
        return Err(format!("({}, {}) vs pin (6.308231, 1.01e-4)", one.epsilon, one.delta));
    }
    let two = advanced_composition(0.5, 0.0, 1, 0.01).map_err(|e| e.to_string())?;
    if rel_err(two.epsilon, 1.841788) > 1e-4 {
        return Err(format!("{} vs pin 1.841788", two.epsilon));
    }
    Ok(())
}

// ============================================================================
// Ledger arithmetic
// ============================================================================

/// Three hand-computed composition scenarios, matched exactly (same
/// floating-point operations, no tolerance).
pub fn ledger_scenarios() -> CheckResult {
    // One group, three Gaussian releases of (0.1, 1e-6), slack 1e-6.
    let mut ledger = PrivacyLedger::new();
    let g = ledger.register_group(0, 100).map_err(|e| e.to_string())?;
    for _ in 0..3 {
        ledger.record(g, Mechanism::Gaussian, 0.1, 1e-6).map_err(|e| e.to_string())?;
    }
    let total = ledger.total(1e-6).map_err(|e| e.to_string())?;
    let sq = 0.1 * 0.1 + 0.1 * 0.1 + 0.1 * 0.1;
    let drift = 0.1 * 0.1f64.exp_m1();
    let eps_hand = (2.0 * (1.0 / 1e-6f64).ln() * sq).sqrt() + (drift + drift + drift);
    let delta_hand = (1e-6 + 1e-6 + 1e-6) + 1e-6;
    if total.epsilon != eps_hand || total.delta != delta_hand {
        return Err(format!("scenario 1: ({}, {}) vs hand ({eps_hand}, {delta_hand})", total.epsilon, total.delta));
    }

    // Two disjoint groups: parallel composition takes the componentwise max.
    let mut ledger = PrivacyLedger::new();
    let a = ledger.register_group(0, 50).map_err(|e| e.to_string())?;
    let b = ledger.register_group(50, 100).map_err(|e| e.to_string())?;
    ledger.record(a, Mechanism::Gaussian, 0.4, 1e-6).map_err(|e| e.to_string())?;
    ledger.record(b, Mechanism::Laplace, 0.9, 2e-7).map_err(|e| e.to_string())?;
    let total = ledger.total(1e-6).map_err(|e| e.to_string())?;
    if total.epsilon != 0.9 || total.delta != 1e-6 {
        return Err(format!("scenario 2: ({}, {}) vs hand (0.9, 1e-6)", total.epsilon, total.delta));
    }

    // One group, heterogeneous entries, slack 1e-5.
    let mut ledger = PrivacyLedger::new();
    let g = ledger.register_group(0, 10).map_err(|e| e.to_string())?;
    ledger.record(g, Mechanism::Gaussian, 0.2, 1e-7).map_err(|e| e.to_string())?;
    ledger.record(g, Mechanism::Laplace, 0.3, 0.0).map_err(|e| e.to_string())?;
    let total = ledger.total(1e-5).map_err(|e| e.to_string())?;
    let quad = (2.0 * (1.0 / 1e-5f64).ln() * (0.2 * 0.2 + 0.3 * 0.3)).sqrt();
    let linear = 0.2 * 0.2f64.exp_m1() + 0.3 * 0.3f64.exp_m1();
    let eps_hand = quad + linear;
    let delta_hand = (1e-7 + 0.0) + 1e-5;
    if total.epsilon != eps_hand || total.delta != delta_hand {
        return Err(format!("scenario 3: ({}, {}) vs hand ({eps_hand}, {delta_hand})", total.epsilon, total.delta));
    }
    Ok(())
}

/// A record that would push the composed spend past the target must be
/// refused with the budget-exhausted error.
pub fn budget_guard() -> CheckResult {
    let target = PrivacyBudget::new(0.5, 1e-6).map_err(|e| e.to_string())?;
    let mut ledger = PrivacyLedger::with_target(target, 1e-7).map_err(|e| e.to_string())?;
    let g = ledger.register_group(0, 10).map_err(|e| e.to_string())?;
    ledger.record(g, Mechanism::Gaussian, 0.4, 1e-7).map_err(|e| e.to_string())?;
    match ledger.record(g, Mechanism::Gaussian, 0.4, 1e-7) {
        Err(CoreError::BudgetExhausted { .. }) => Ok(()),
        Err(other) => Err(format!("expected budget exhaustion, got: {other}")),
        Ok(()) => Err("the guard accepted an overspending record".to_string()),
    }
}

// ============================================================================
// Sampler distributions
// ============================================================================

fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let m = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        worst = worst.max((f - i as f64 / m).abs()).max((f - (i as f64 + 1.0) / m).abs());
    }
    worst
}

fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// Kolmogorov-Smirnov critical value at significance `level` for `draws`
/// samples, from the distribution-free tail bound.
pub fn ks_critical(draws: usize, level: f64) -> f64 {
    ((2.0 / level).ln() / (2.0 * draws as f64)).sqrt()
}

/// KS goodness-of-fit for the Laplace and Gaussian samplers at the 0.1%
/// significance level.
pub fn sampler_distributions(draws: usize) -> CheckResult {
    let critical = ks_critical(draws, 0.001);

    let mut rng = substream(7, &[101]);
    let mut lap: Vec<f64> = (0..draws)
        .map(|_| laplace_sample(&mut rng, 1.7))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    lap.sort_by(f64::total_cmp);
    let ks_lap = ks_statistic(&lap, |x| laplace_cdf(x, 1.7));
    if ks_lap > critical {
        return Err(format!("laplace KS {ks_lap} exceeds critical {critical} on {draws} draws"));
    }

    let mut rng = substream(7, &[102]);
    let mut gau: Vec<f64> = (0..draws)
        .map(|_| gaussian_sample(&mut rng, 0.8))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    gau.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 0.8).map_err(|e| e.to_string())?;
    let ks_gau = ks_statistic(&gau, |x| normal.cdf(x));
    if ks_gau > critical {
        return Err(format!("gaussian KS {ks_gau} exceeds critical {critical} on {draws} draws"));
    }
    Ok(())
}

// ============================================================================
// Solver probes
// ============================================================================

fn probe_examples(family: TaskFamily, law: FeatureLaw, n: usize, d: usize, p: LpExponent, seed: u64) -> Vec<Example> {
    let spec = TaskSpec::new(family, d, p, law, 1.0, 0.1, None, seed).expect("probe task");
    (0..n as u64).map(|i| spec.train_example(i)).collect()
}

fn probe_config(algorithm: Algorithm, n: usize, d: usize, seed: u64) -> (SolverConfig, Vec<Example>) {
    let budget = PrivacyBudget::new(1.0, 1e-5).expect("probe budget");
    let (p, constraint, loss, family, law) = match algorithm {
        Algorithm::PhasedSgd => (
            LpExponent::two(),
            ConstraintSet::lp_ball(vec![0.0; d], 1.0, LpExponent::two()).expect("ball"),
            LossModel::gll(GllSpec::absolute(1.0).expect("spec")),
            TaskFamily::AbsoluteGll,
            FeatureLaw::DualSphere,
        ),
        Algorithm::NoisyFw => (
            LpExponent::one(),
            ConstraintSet::l1_cross_polytope(d, 1.0).expect("polytope"),
            LossModel::gll(GllSpec::absolute(1.0).expect("spec")),
            TaskFamily::AbsoluteGll,
            FeatureLaw::Cube,
        ),
        Algorithm::PolySfw => (
            LpExponent::one(),
            ConstraintSet::l1_cross_polytope(d, 1.0).expect("polytope"),
            LossModel::smooth_nonconvex(1.0),
            TaskFamily::SmoothNonconvex,
            FeatureLaw::DualSphere,
        ),
        Algorithm::NoisySfw => (
            LpExponent::two(),
            ConstraintSet::lp_ball(vec![0.0; d], 1.0, LpExponent::two()).expect("ball"),
            LossModel::smooth_nonconvex(1.0),
            TaskFamily::SmoothNonconvex,
            FeatureLaw::DualSphere,
        ),
        Algorithm::PgPsmd => (
            LpExponent::two(),
            ConstraintSet::lp_ball(vec![0.0; d], 1.0, LpExponent::two()).expect("ball"),
            LossModel::weakly_convex(1.0, 1.0),
            TaskFamily::PhaseRetrieval,
            FeatureLaw::DualSphere,
        ),
    };
    let overrides = if matches!(algorithm, Algorithm::PolySfw | Algorithm::NoisySfw) {
        Overrides { rounds: Some(3), batch: Some(n / 9), ..Overrides::default() }
    } else {
        Overrides::default()
    };
    let examples = probe_examples(family, law, n, d, p, seed);
    let config = SolverConfig { algorithm, p, constraint, loss, n, d, budget, seed, overrides };
    (config, examples)
}

/// Randomized configurations: registered slice groups must never overlap,
/// and the composed spend must respect the planner's declared target.
/// Planner rejections (config errors) are tolerated up to 40% of cases.
pub fn slice_disjointness(count: usize, seed: u64) -> CheckResult {
    let mut rng = substream(seed, &[90]);
    let mut successes = 0usize;
    for case in 0..count {
        let algorithm = ALL_ALGORITHMS[case % ALL_ALGORITHMS.len()];
        let d = rng.random_range(2..9usize);
        let n = rng.random_range(64..1025usize);
        let probe_seed = rng.random::<u64>();
        let (mut config, examples) = probe_config(algorithm, n, d, probe_seed);
        config.budget = PrivacyBudget::new(rng.random_range(0.5..3.0), 10f64.powf(-rng.random_range(4.0..6.0)))
            .map_err(|e| e.to_string())?;
        if matches!(algorithm, Algorithm::PolySfw | Algorithm::NoisySfw) {
            let rounds = rng.random_range(1..4u32);
            let batch = (n / (rounds as usize * rounds as usize).max(1)).min(n / 2).max(1 << rounds);
            config.overrides.rounds = Some(rounds);
            config.overrides.batch = Some(batch);
        }
        match solve(&config, &examples) {
            Ok(run) => {
                successes += 1;
                let mut ranges: Vec<(usize, usize)> = run.ledger.groups().iter().map(|g| (g.start, g.end)).collect();
                ranges.sort_unstable();
                for pair in ranges.windows(2) {
                    if pair[0].1 > pair[1].0 {
                        return Err(format!("case {case} ({algorithm}): overlapping slices {pair:?}"));
                    }
                }
                if let Some(target) = run.ledger.target() {
                    if run.spent.exceeds(&target, 1e-9) {
                        return Err(format!(
                            "case {case} ({algorithm}): spent ({}, {}) exceeds target ({}, {})",
                            run.spent.epsilon, run.spent.delta, target.epsilon, target.delta
                        ));
                    }
                }
            }
            Err(CoreError::Config { .. }) => {}
            Err(other) => return Err(format!("case {case} ({algorithm}): non-config error: {other}")),
        }
    }
    let needed = (count * 3) / 5;
    if successes < needed {
        return Err(format!("only {successes} of {count} configs ran; the probe generator is too strict"));
    }
    Ok(())
}

/// With noise off and full-dataset batches, the recursive conditional
/// gradient estimator must reproduce the exact empirical gradient at every
/// iterate to 1e-10 in the dual norm.
pub fn noiseless_degeneration(d: usize, n: usize) -> CheckResult {
    let (mut config, examples) = probe_config(Algorithm::PolySfw, n, d, 42);
    config.overrides = Overrides {
        rounds: Some(4),
        batch: Some((n / 16).max(1)),
        noise_off: true,
        full_batches: true,
        ..Overrides::default()
    };
    let trace = poly_sfw_trace(&config, &examples, None).map_err(|e| e.to_string())?;
    if trace.estimates.len() != 15 {
        return Err(format!("expected 15 iterations over 4 rounds, saw {}", trace.estimates.len()));
    }
    let mut exact = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for (i, (w, estimate)) in trace.iterates.iter().zip(&trace.estimates).enumerate() {
        exact.fill(0.0);
        for ex in &examples {
            config.loss.subgradient_into(w, ex, &mut grad);
            for (e, g) in exact.iter_mut().zip(&grad) {
                *e += g;
            }
        }
        for e in exact.iter_mut() {
            *e /= n as f64;
        }
        let diff: Vec<f64> = exact.iter().zip(estimate).map(|(a, b)| a - b).collect();
        let err = lp_norm(&diff, LpExponent::infinity());
        if err > 1e-10 {
            return Err(format!("iteration {i}: estimate deviates by {err} in the dual norm"));
        }
    }
    Ok(())
}

/// Neighboring-dataset replays: swapping one example while forcing the same
/// vertex selections must perturb every recursive estimate by at most
/// (L0 + L1 D) 2^(r/2) / b in the dual norm.
pub fn sensitivity_audit(pairs: usize, seed: u64) -> CheckResult {
    let d = 5;
    let n = 128;
    let batch = 32;
    let (mut config, base) = probe_config(Algorithm::PolySfw, n, d, 77);
    config.overrides = Overrides { rounds: Some(2), batch: Some(batch), noise_off: true, ..Overrides::default() };
    let reference = poly_sfw_trace(&config, &base, None).map_err(|e| e.to_string())?;
    let forced = reference.selections.clone();

    let l0 = config.loss.l0;
    let l1 = config.loss.l1.expect("smooth probe family");
    let diameter = config.constraint.diameter;
    let fresh_spec = TaskSpec::new(
        TaskFamily::SmoothNonconvex,
        d,
        LpExponent::one(),
        FeatureLaw::DualSphere,
        1.0,
        0.1,
        None,
        978,
    )
    .map_err(|e| e.to_string())?;

    let mut rng = substream(seed, &[7]);
    let mut checked = 0usize;
    for pair in 0..pairs as u64 {
        let mut neighbor = base.clone();
        let swap = rng.random_range(0..n);
        neighbor[swap] = fresh_spec.eval_example(3, pair);

        let a = poly_sfw_trace(&config, &base, Some(&forced)).map_err(|e| e.to_string())?;
        let b = poly_sfw_trace(&config, &neighbor, Some(&forced)).map_err(|e| e.to_string())?;
        for i in 0..a.estimates.len() {
            let r = a.rounds[i];
            let bound = (l0 + l1 * diameter) * 2f64.powf(r as f64 / 2.0) / batch as f64;
            let diff: Vec<f64> = a.estimates[i].iter().zip(&b.estimates[i]).map(|(x, y)| x - y).collect();
            let dev = lp_norm(&diff, LpExponent::infinity());
            if dev > bound {
                return Err(format!("pair {pair}, iteration {i} (round {r}): perturbation {dev} exceeds {bound}"));
            }
            checked += 1;
        }
    }
    if checked != pairs * 3 {
        return Err(format!("expected {} comparisons, made {checked}", pairs * 3));
    }
    Ok(())
}

// ============================================================================
// Gradient and estimator sanity
// ============================================================================

/// Analytic gradients of the two smooth families against central
/// differences at `tol` relative accuracy (floored at 1 in the denominator).
pub fn finite_difference(points: usize, tol: f64, seed: u64) -> CheckResult {
    let d = 12;
    let families = [TaskFamily::SmoothNonconvex, TaskFamily::LogisticGll];
    let mut rng = substream(seed, &[71]);
    let mut analytic = vec![0.0; d];
    for point in 0..points {
        let family = families[point % 2];
        let task = TaskSpec::new(family, d, LpExponent::two(), FeatureLaw::DualSphere, 1.0, 0.0, None, seed)
            .map_err(|e| e.to_string())?;
        let loss = task.loss_model(1.0);
        let ex = task.eval_example(9, point as u64);
        let w: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        loss.subgradient_into(&w, &ex, &mut analytic);
        for j in 0..d {
            let h = 1e-5 * (1.0 + w[j].abs());
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let numeric = (loss.value(&wp, &ex) - loss.value(&wm, &ex)) / (2.0 * h);
            let denom = analytic[j].abs().max(1.0);
            if (analytic[j] - numeric).abs() > tol * denom {
                return Err(format!(
                    "point {point} ({}), coordinate {j}: analytic {} vs numeric {numeric}",
                    loss.name(),
                    analytic[j]
                ));
            }
        }
    }
    Ok(())
}

/// Every solver's output must lie in its feasible set; the polyhedral
/// solver promises exact l1 feasibility.
pub fn output_feasibility(seed: u64) -> CheckResult {
    for algorithm in ALL_ALGORITHMS {
        let (config, examples) = probe_config(algorithm, 288, 6, seed);
        let run = solve(&config, &examples).map_err(|e| format!("{algorithm}: {e}"))?;
        if !config.constraint.contains(&run.output, 1e-9) {
            return Err(format!("{algorithm}: output escaped the feasible set"));
        }
        if algorithm == Algorithm::PolySfw && lp_norm(&run.output, LpExponent::one()) > 1.0 {
            return Err(format!("{algorithm}: output exceeded the l1 radius"));
        }
    }
    Ok(())
}

/// Identical (config, seed, data) must reproduce identical runs; a changed
/// seed must move the output.
pub fn solver_determinism(seed: u64) -> CheckResult {
    for algorithm in ALL_ALGORITHMS {
        let (config, examples) = probe_config(algorithm, 288, 6, seed);
        let first = solve(&config, &examples).map_err(|e| format!("{algorithm}: {e}"))?;
        let second = solve(&config, &examples).map_err(|e| format!("{algorithm}: {e}"))?;
        if first != second {
            return Err(format!("{algorithm}: diverged between identical runs"));
        }
        let (reseeded, fresh) = probe_config(algorithm, 288, 6, seed + 1);
        let third = solve(&reseeded, &fresh).map_err(|e| format!("{algorithm}: {e}"))?;
        if first.output == third.output {
            return Err(format!("{algorithm}: ignored the seed"));
        }
    }
    Ok(())
}

/// The log-log fitter recovers an exact power law and rejects degenerate
/// inputs.
pub fn rate_fit_sanity() -> CheckResult {
    let ns = [100usize, 1000, 10_000, 100_000];
    let values: Vec<f64> = ns.iter().map(|&n| 2.0 * (n as f64).powf(-0.5)).collect();
    let fit = fit_rate(&ns, &values).map_err(|e| e.to_string())?;
    if (fit.slope + 0.5).abs() > 1e-12 {
        return Err(format!("slope {} vs -0.5", fit.slope));
    }
    if fit_rate(&[10, 20], &[1.0, 0.5]).is_ok() {
        return Err("a two-point fit was accepted".to_string());
    }
    Ok(())
}

/// The prox oracle solves a quadratic with a known closed-form answer.
pub fn prox_quadratic() -> CheckResult {
    let constraint = ConstraintSet::lp_ball(vec![0.0; 3], 10.0, LpExponent::two()).map_err(|e| e.to_string())?;
    let w = vec![1.0, 0.0, 0.0];
    let start = vec![0.0; 3];
    let (point, _, decrease) = prox_point(
        |v, out| out.copy_from_slice(v),
        |v| 0.5 * v.iter().map(|x| x * x).sum::<f64>(),
        &constraint,
        &w,
        &start,
        1.0,
        2.0,
        1.0,
        500,
    )
    .map_err(|e| e.to_string())?;
    let target = [0.5, 0.0, 0.0];
    for (p, t) in point.iter().zip(&target) {
        if (p - t).abs() > 1e-9 {
            return Err(format!("prox point {point:?} vs [0.5, 0, 0]"));
        }
    }
    if decrease.abs() > 1e-10 {
        return Err(format!("oracle stopped with decrease {decrease}"));
    }
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_quick_registry_is_clean() {
        let outcomes = run_checks(None, false);
        assert_eq!(outcomes.len(), 14);
        for outcome in &outcomes {
            assert!(outcome.detail.is_ok(), "{}: {:?}", outcome.name, outcome.detail);
        }
    }

    #[test]
    fn injection_trips_exactly_the_pin_check() {
        let outcomes = run_checks(None, true);
        for outcome in &outcomes {
            if outcome.name == "schedule_pins" {
                let msg = outcome.detail.as_ref().unwrap_err();
                assert!(msg.contains("sigma0"), "{msg}");
            } else {
                assert!(outcome.detail.is_ok(), "{} failed under injection", outcome.name);
            }
        }
    }

    #[test]
    fn filters_select_by_substring() {
        let outcomes = run_checks(Some("oracle"), false);
        assert_eq!(outcomes.len(), 1);
        assert_eq!(outcomes[0].name, "oracle_accuracy");
        let outcomes = run_checks(Some("pins"), false);
        assert_eq!(outcomes.len(), 2);
    }

    #[test]
    fn the_critical_value_matches_the_published_table() {
        // 0.1% level on 1e5 draws.
        let c = ks_critical(100_000, 0.001);
        assert!((c - 0.0061648).abs() < 1e-7, "{c}");
    }
}
