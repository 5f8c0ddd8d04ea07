//! Phased SGD over a smoothed generalized linear loss.
//!
//! The run is split into geometrically shrinking phases on disjoint data
//! slices. Each phase performs projected SGD with the bisection oracle,
//! averages its iterates, perturbs the average with Gaussian noise, and
//! hands the result to the next phase as its starting point. Because every
//! phase touches its own slice, phase budgets compose in parallel and the
//! whole run realizes the declared (epsilon, delta).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::losses::bisection_oracle_into;
use crate::privacy::{add_gaussian_noise, Mechanism};
use crate::rng::{substream, tag};

use super::{
    finish_spend, run_ledger, wall_ms, ScheduleEcho, SliceAllocator, SolverConfig, SolverRun,
    TracePoint,
};
use crate::geometry::ConstraintKind;
use crate::losses::Example;

/// Resolved phased SGD schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasedSgdSchedule {
    /// Largest power of two at most n; every formula uses this count.
    pub n_eff: usize,
    /// Number of phases, log2(n_eff).
    pub phases: u32,
    /// Budget split rho = epsilon / (2 sqrt(ln(1/delta))).
    pub rho: f64,
    /// Base step size; phase k uses eta / 4^k.
    pub eta: f64,
    /// Oracle smoothing parameter.
    pub beta: f64,
    /// Oracle accuracy target.
    pub alpha: f64,
    /// Steps per phase: n_eff / 2^k for k = 1..phases.
    pub phase_lengths: Vec<usize>,
    pub phase_etas: Vec<f64>,
    /// Gaussian scale released after phase k: 4 L0 R eta_k / rho.
    pub phase_sigmas: Vec<f64>,
}

impl PhasedSgdSchedule {
    pub fn plan(config: &SolverConfig) -> Result<Self> {
        let gll = config
            .loss
            .as_gll()
            .ok_or_else(|| CoreError::config("loss", "phased_sgd needs a generalized linear loss"))?;
        let constrained = !config.constraint.is_unconstrained();
        if constrained {
            match &config.constraint.kind {
                ConstraintKind::LpBall { p, .. } if p.value() == 2.0 => {}
                _ => {
                    return Err(CoreError::config(
                        "constraint",
                        "phased_sgd projects each step; use an l2 ball or an unconstrained set",
                    ))
                }
            }
        }
        let eps = config.budget.epsilon;
        let delta = config.budget.delta;
        let ln_inv_delta = (1.0 / delta).ln();
        if eps > ln_inv_delta.sqrt() {
            return Err(CoreError::config(
                "epsilon",
                format!("phased_sgd requires epsilon <= sqrt(ln(1/delta)) = {:.4}, got {eps}", ln_inv_delta.sqrt()),
            ));
        }
        let l0 = gll.l0;
        let r = gll.r;
        let phases = (config.n as f64).log2().floor() as u32;
        let n_eff = 1usize << phases;
        let nf = n_eff as f64;
        let rho = eps / (2.0 * ln_inv_delta.sqrt());
        let (eta, beta) = if constrained {
            let diam = config.constraint.diameter;
            let eta = config
                .overrides
                .eta
                .unwrap_or_else(|| diam / (3.0 * l0 * r) * (rho / (config.d as f64).sqrt()).min(1.0 / nf.sqrt()));
            let beta = config.overrides.beta.unwrap_or_else(|| nf.sqrt() * l0 / (r * diam));
            (eta, beta)
        } else {
            let theta = config.overrides.theta.unwrap_or(nf);
            let eta = config
                .overrides
                .eta
                .unwrap_or_else(|| 1.0 / (3.0 * l0 * r) * (rho / theta.sqrt()).min(1.0 / nf.sqrt()));
            let beta = config.overrides.beta.unwrap_or_else(|| nf.sqrt() * l0 / r);
            (eta, beta)
        };
        let alpha = config.overrides.alpha.unwrap_or_else(|| l0 * r / (nf * nf.ln()));
        if !(alpha > 0.0) || alpha >= 4.0 * l0 * r {
            return Err(CoreError::config(
                "alpha",
                format!("oracle accuracy must lie in (0, 4 L0 R), got {alpha}"),
            ));
        }
        let mut phase_lengths = Vec::with_capacity(phases as usize);
        let mut phase_etas = Vec::with_capacity(phases as usize);
        let mut phase_sigmas = Vec::with_capacity(phases as usize);
        for k in 1..=phases {
            phase_lengths.push(n_eff >> k);
            let eta_k = eta / 4.0f64.powi(k as i32);
            phase_etas.push(eta_k);
            phase_sigmas.push(4.0 * l0 * r * eta_k / rho);
        }
        Ok(PhasedSgdSchedule {
            n_eff,
            phases,
            rho,
            eta,
            beta,
            alpha,
            phase_lengths,
            phase_etas,
            phase_sigmas,
        })
    }
}

pub(super) fn run(config: &SolverConfig, examples: &[Example]) -> Result<SolverRun> {
    let sched = PhasedSgdSchedule::plan(config)?;
    let gll = config.loss.as_gll().expect("validated by plan");
    let constrained = !config.constraint.is_unconstrained();
    let noise_off = config.overrides.noise_off;
    let d = config.d;

    let mut allocator = SliceAllocator::new(config.n, config.seed);
    let mut noise_rng = substream(config.seed, &[tag::NOISE]);
    // Each phase runs on its own slice, so phase costs compose in parallel
    // and the planned total is the nominal budget itself.
    let mut ledger = run_ledger(config.budget, config.budget.delta, noise_off)?;

    let mut w = config.constraint.initial_point();
    let mut grad = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let mut evals = 0u64;
    let mut trace = Vec::new();

    for k in 0..sched.phases as usize {
        let steps = sched.phase_lengths[k];
        let eta_k = sched.phase_etas[k];
        let sigma_k = sched.phase_sigmas[k];
        let (range, idx) = allocator.take(steps)?;
        if !noise_off {
            let group = ledger.register_group(range.start, range.end)?;
            // Recorded before the phase's mechanisms fire; the phase as a
            // whole realizes the declared budget.
            ledger.record(group, Mechanism::Gaussian, config.budget.epsilon, config.budget.delta)?;
        }
        avg.fill(0.0);
        let inv = 1.0 / steps as f64;
        for &i in idx {
            bisection_oracle_into(&w, &examples[i], gll, sched.beta, sched.alpha, &mut grad)?;
            evals += 1;
            for j in 0..d {
                w[j] -= eta_k * grad[j];
            }
            if constrained {
                w = config.constraint.project(&w)?;
            }
            for j in 0..d {
                avg[j] += inv * w[j];
            }
        }
        w.copy_from_slice(&avg);
        if !noise_off {
            add_gaussian_noise(&mut noise_rng, sigma_k, &mut w)?;
        }
        // The noisy average may leave the feasible set; projecting it back
        // is post-processing and keeps every released point feasible.
        if constrained {
            w = config.constraint.project(&w)?;
        }
        if let Some(every) = config.overrides.trace_every {
            if every > 0 && (k + 1) % every == 0 {
                trace.push(TracePoint { step: k + 1, point: w.clone() });
            }
        }
    }

    let spent = finish_spend(&ledger, config.budget.delta, noise_off)?;
    let mut echo = ScheduleEcho::new(config.algorithm);
    echo.beta = Some(sched.beta);
    echo.alpha = Some(sched.alpha);
    echo.eta = Some(sched.eta);
    echo.theta = config.overrides.theta;
    echo.push("n_eff", sched.n_eff as f64);
    echo.push("phases", sched.phases as f64);
    echo.push("rho", sched.rho);
    echo.push("planned_epsilon", config.budget.epsilon);
    echo.push("planned_delta", config.budget.delta);

    Ok(SolverRun {
        output: w,
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
    use crate::privacy::PrivacyBudget;
    use crate::solvers::{solve, Algorithm, Overrides};
    use crate::{FeatureLaw, TaskFamily, TaskSpec};

    fn ball_config(n: usize, d: usize, radius: f64) -> SolverConfig {
        SolverConfig {
            algorithm: Algorithm::PhasedSgd,
            p: LpExponent::two(),
            constraint: ConstraintSet::lp_ball(vec![0.0; d], radius, LpExponent::two()).unwrap(),
            loss: LossModel::gll(GllSpec::absolute(1.0).unwrap()),
            n,
            d,
            budget: PrivacyBudget::new(1.0, 1e-5).unwrap(),
            seed: 7,
            overrides: Overrides::default(),
        }
    }

    #[test]
    fn step_size_matches_hand_computation() {
        // L0 = R = D = 1, eps = 1, delta = 1e-5, d = 4, n = 1024:
        // rho = 1 / (2 sqrt(ln 1e5)), eta = (1/3) min(rho/2, 1/32) = 1/96.
        let config = ball_config(1024, 4, 0.5);
        let sched = PhasedSgdSchedule::plan(&config).unwrap();
        let pin = 0.010417;
        assert!(
            ((sched.eta - pin) / pin).abs() < 1e-4,
            "eta {} does not match pin {pin}",
            sched.eta
        );
        assert_eq!(sched.phases, 10);
        assert_eq!(sched.n_eff, 1024);
    }

    #[test]
    fn phase_schedule_shape_for_small_n() {
        let config = ball_config(8, 2, 0.5);
        let sched = PhasedSgdSchedule::plan(&config).unwrap();
        assert_eq!(sched.phases, 3);
        assert_eq!(sched.phase_lengths, vec![4, 2, 1]);
        let base = sched.eta;
        let want = [base / 4.0, base / 16.0, base / 64.0];
        for (got, want) in sched.phase_etas.iter().zip(&want) {
            assert!((got - want).abs() < 1e-15);
        }
        // Phase lengths cover n_eff - 1 samples.
        assert_eq!(sched.phase_lengths.iter().sum::<usize>(), 7);
    }

    #[test]
    fn non_power_of_two_rounds_down() {
        let config = ball_config(1000, 4, 0.5);
        let sched = PhasedSgdSchedule::plan(&config).unwrap();
        assert_eq!(sched.n_eff, 512);
        assert_eq!(sched.phases, 9);
    }

    #[test]
    fn budget_precondition_enforced() {
        let mut config = ball_config(64, 2, 1.0);
        // sqrt(ln 1e5) ~ 3.39; epsilon above it must be rejected.
        config.budget = PrivacyBudget::new(4.0, 1e-5).unwrap();
        assert!(matches!(PhasedSgdSchedule::plan(&config), Err(CoreError::Config { .. })));
    }

    #[test]
    fn rejects_non_gll_losses_and_bad_constraints() {
        let mut config = ball_config(64, 2, 1.0);
        config.loss = LossModel::smooth_nonconvex(1.0);
        assert!(PhasedSgdSchedule::plan(&config).is_err());

        let mut config = ball_config(64, 2, 1.0);
        config.p = LpExponent::one();
        config.constraint = ConstraintSet::l1_cross_polytope(2, 1.0).unwrap();
        assert!(PhasedSgdSchedule::plan(&config).is_err());
    }

    #[test]
    fn zero_features_leave_initial_point() {
        let mut config = ball_config(8, 3, 1.0);
        config.overrides.noise_off = true;
        let examples: Vec<Example> = (0..8).map(|_| Example { x: vec![0.0; 3], y: 1.0 }).collect();
        let run = solve(&config, &examples).unwrap();
        // Zero features give zero oracle gradients, so every iterate stays
        // at the starting point.
        assert_eq!(run.output, config.constraint.initial_point());
        assert_eq!(run.spent, PrivacyBudget::ZERO);
        assert!(run.ledger.entries().is_empty());
    }

    #[test]
    fn ledger_realizes_nominal_budget() {
        let spec = TaskSpec::new(
            TaskFamily::AbsoluteGll,
            3,
            LpExponent::two(),
            FeatureLaw::DualSphere,
            1.0,
            0.1,
            None,
            11,
        )
        .unwrap();
        let examples: Vec<Example> = (0..64).map(|i| spec.train_example(i)).collect();
        let config = ball_config(64, 3, 1.0);
        let run = solve(&config, &examples).unwrap();
        assert_eq!(run.ledger.group_count(), 6);
        assert_eq!(run.ledger.entries().len(), 6);
        assert!((run.spent.epsilon - 1.0).abs() < 1e-12);
        assert!((run.spent.delta - 1e-5).abs() < 1e-18);
        // Output respects the constraint.
        assert!(config.constraint.contains(&run.output, 1e-9));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let spec = TaskSpec::new(
            TaskFamily::HingeGll,
            4,
            LpExponent::two(),
            FeatureLaw::DualSphere,
            2.0,
            0.0,
            None,
            5,
        )
        .unwrap();
        let examples: Vec<Example> = (0..32).map(|i| spec.train_example(i)).collect();
        let mut config = ball_config(32, 4, 1.5);
        config.loss = LossModel::gll(GllSpec::hinge(2.0).unwrap());
        let a = solve(&config, &examples).unwrap();
        let b = solve(&config, &examples).unwrap();
        assert_eq!(a, b);
        config.seed = 6;
        let c = solve(&config, &examples).unwrap();
        assert_ne!(a.output, c.output);
    }
}
