//! Statistical and accounting properties that cut across modules: noise
//! samplers against their reference distributions, and ledger totals against
//! arithmetic done by hand.

use statrs::distribution::{ContinuousCDF, Normal};

use dpopt_core::privacy::{gaussian_sample, laplace_sample, Mechanism, PrivacyBudget, PrivacyLedger};
use dpopt_core::rng::substream;

/// Kolmogorov-Smirnov statistic of draws against a reference CDF.
fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = draws.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, x) in draws.iter().enumerate() {
        let f = cdf(*x);
        worst = worst.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    worst
}

/// Critical value at the 0.1% level for 1e5 draws:
/// sqrt(ln(2/0.001) / 2) / sqrt(n).
const KS_CRITICAL: f64 = 0.0061648;
const DRAWS: usize = 100_000;

#[test]
fn laplace_sampler_matches_its_distribution() {
    let mut rng = substream(314, &[1]);
    let scale = 1.7;
    let draws: Vec<f64> = (0..DRAWS).map(|_| laplace_sample(&mut rng, scale).unwrap()).collect();
    let cdf = |x: f64| {
        if x < 0.0 {
            0.5 * (x / scale).exp()
        } else {
            1.0 - 0.5 * (-x / scale).exp()
        }
    };
    let d = ks_statistic(draws, cdf);
    assert!(d < KS_CRITICAL, "Laplace KS statistic {d} exceeds {KS_CRITICAL}");
}

#[test]
fn gaussian_sampler_matches_its_distribution() {
    let mut rng = substream(314, &[2]);
    let sigma = 0.8;
    let draws: Vec<f64> = (0..DRAWS).map(|_| gaussian_sample(&mut rng, sigma).unwrap()).collect();
    let normal = Normal::new(0.0, sigma).unwrap();
    let d = ks_statistic(draws, |x| normal.cdf(x));
    assert!(d < KS_CRITICAL, "Gaussian KS statistic {d} exceeds {KS_CRITICAL}");
}

// ============================================================================
// Hand-computed composition scenarios
// ============================================================================

#[test]
fn ledger_matches_three_hand_computed_scenarios() {
    // Scenario 1: one group, three identical Gaussian steps at
    // (0.1, 1e-6), composed with delta' = 1e-6. By hand:
    // eps = sqrt(2 ln(1/delta') * 3 * 0.1^2) + 3 * 0.1 (e^0.1 - 1),
    // delta = 3e-6 + 1e-6.
    let mut ledger = PrivacyLedger::new();
    let g = ledger.register_group(0, 30).unwrap();
    for _ in 0..3 {
        ledger.record(g, Mechanism::Gaussian, 0.1, 1e-6).unwrap();
    }
    let total = ledger.total(1e-6).unwrap();
    let sq = 0.1 * 0.1 + 0.1 * 0.1 + 0.1 * 0.1;
    let drift = 0.1 * 0.1f64.exp_m1();
    let eps_hand = (2.0 * (1.0 / 1e-6f64).ln() * sq).sqrt() + (drift + drift + drift);
    let delta_hand = (1e-6 + 1e-6 + 1e-6) + 1e-6;
    assert_eq!(total.epsilon, eps_hand);
    assert_eq!(total.delta, delta_hand);

    // Scenario 2: two disjoint groups with a single entry each; parallel
    // composition takes the componentwise maximum, and singleton groups
    // compose to themselves with no delta' surcharge.
    let mut ledger = PrivacyLedger::new();
    let a = ledger.register_group(0, 50).unwrap();
    let b = ledger.register_group(50, 100).unwrap();
    ledger.record(a, Mechanism::Gaussian, 0.4, 1e-6).unwrap();
    ledger.record(b, Mechanism::Laplace, 0.9, 2e-7).unwrap();
    let total = ledger.total(1e-6).unwrap();
    assert_eq!(total.epsilon, 0.9);
    assert_eq!(total.delta, 1e-6);

    // Scenario 3: a group with two unequal entries falls back to summing
    // the pairwise advanced-composition terms: eps = sum_i eps_i (e^{eps_i}
    // - 1) + sqrt(2 ln(1/delta') sum_i eps_i^2), delta = sum delta_i +
    // delta'.
    let mut ledger = PrivacyLedger::new();
    let g = ledger.register_group(0, 10).unwrap();
    ledger.record(g, Mechanism::Gaussian, 0.2, 1e-7).unwrap();
    ledger.record(g, Mechanism::Laplace, 0.3, 0.0).unwrap();
    let total = ledger.total(1e-5).unwrap();
    let quad = (2.0 * (1.0 / 1e-5f64).ln() * (0.2 * 0.2 + 0.3 * 0.3)).sqrt();
    let linear = 0.2 * 0.2f64.exp_m1() + 0.3 * 0.3f64.exp_m1();
    assert_eq!(total.epsilon, quad + linear);
    assert_eq!(total.delta, (1e-7 + 0.0) + 1e-5);
}

#[test]
fn budget_guard_blocks_the_overspending_record() {
    let target = PrivacyBudget::new(0.5, 1e-6).unwrap();
    let mut ledger = PrivacyLedger::with_target(target, 1e-7).unwrap();
    let g = ledger.register_group(0, 10).unwrap();
    ledger.record(g, Mechanism::Gaussian, 0.4, 1e-7).unwrap();
    let err = ledger.record(g, Mechanism::Gaussian, 0.4, 1e-7).unwrap_err();
    assert!(matches!(err, dpopt_core::CoreError::BudgetExhausted { .. }), "{err}");
}
