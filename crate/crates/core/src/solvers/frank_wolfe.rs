//! Noisy Frank-Wolfe over a polytope with a smoothed linear-loss oracle.
//!
//! Each step averages the oracle gradient over the whole dataset, scores
//! every vertex by its inner product with that average, and picks a vertex
//! through report-noisy-min with Laplace perturbations. The iterate moves
//! along the segment toward the winner. Selections compose under the
//! advanced bound; the noise scale is calibrated so the composed cost over
//! all steps lands on the declared budget.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::losses::bisection_oracle_into;
use crate::privacy::{advanced_composition, report_noisy_argmin, Mechanism, PrivacyBudget};
use crate::rng::{substream, tag};

use super::{finish_spend, mix_toward, run_ledger, wall_ms, ScheduleEcho, SolverConfig, SolverRun, TracePoint};
use crate::losses::Example;

/// Laplace scale protecting one vertex selection:
/// 3 L0 R D sqrt(8 T ln(1/delta)) / (n epsilon).
///
/// The score of a vertex moves by at most 3 L0 R D / n when one example
/// changes (2 L0 R from the envelope gradient, L0 R of oracle slack), so
/// this scale makes each selection cost epsilon / sqrt(2 T ln(1/delta)).
pub fn noisy_fw_noise_scale(
    l0: f64,
    r: f64,
    diameter: f64,
    steps: usize,
    n: usize,
    epsilon: f64,
    delta: f64,
) -> f64 {
    3.0 * l0 * r * diameter * (8.0 * steps as f64 * (1.0 / delta).ln()).sqrt() / (n as f64 * epsilon)
}

/// Resolved noisy Frank-Wolfe schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyFwSchedule {
    pub steps: usize,
    /// Laplace scale applied to every vertex score.
    pub scale: f64,
    /// Selection cost entered in the ledger per step.
    pub step_epsilon: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Composed cost of all steps; slightly above nominal epsilon because
    /// the advanced bound carries a small drift term.
    pub planned: PrivacyBudget,
}

impl NoisyFwSchedule {
    pub fn plan(config: &SolverConfig) -> Result<Self> {
        let gll = config
            .loss
            .as_gll()
            .ok_or_else(|| CoreError::config("loss", "noisy_fw needs a generalized linear loss"))?;
        let vertices = config.constraint.vertices().ok_or_else(|| {
            CoreError::config("constraint", "noisy_fw selects vertices; the feasible set must be a polytope")
        })?;
        let j = vertices.len();
        if j < 2 {
            return Err(CoreError::config("constraint", format!("vertex selection needs at least 2 vertices, got {j}")));
        }
        let n = config.n as f64;
        let eps = config.budget.epsilon;
        let delta = config.budget.delta;
        let ln_inv_delta = (1.0 / delta).ln();
        let l0 = gll.l0;
        let r = gll.r;
        let diam = config.constraint.diameter;
        let steps = match config.overrides.rounds {
            Some(t) => t as usize,
            None => (n * eps / ((j as f64).ln() * n.ln() * ln_inv_delta.sqrt())).floor() as usize,
        };
        if steps == 0 {
            return Err(CoreError::config(
                "n",
                format!("n epsilon = {} is too small for even one selection step", n * eps),
            ));
        }
        let scale = noisy_fw_noise_scale(l0, r, diam, steps, config.n, eps, delta);
        let step_epsilon = eps / (2.0 * steps as f64 * ln_inv_delta).sqrt();
        let beta = config.overrides.beta.unwrap_or_else(|| {
            l0 * (n * eps).sqrt() / (r * diam * ln_inv_delta.powf(0.25) * ((j as f64).ln() * n.ln()).sqrt())
        });
        let alpha = config.overrides.alpha.unwrap_or_else(|| l0 * r / (n * n.ln()));
        if !(alpha > 0.0) || alpha >= 4.0 * l0 * r {
            return Err(CoreError::config(
                "alpha",
                format!("oracle accuracy must lie in (0, 4 L0 R), got {alpha}"),
            ));
        }
        let planned = advanced_composition(step_epsilon, 0.0, steps as u64, delta)?;
        Ok(NoisyFwSchedule { steps, scale, step_epsilon, beta, alpha, planned })
    }
}

pub(super) fn run(config: &SolverConfig, examples: &[Example]) -> Result<SolverRun> {
    let sched = NoisyFwSchedule::plan(config)?;
    let gll = config.loss.as_gll().expect("validated by plan");
    let vertices = config.constraint.vertices().expect("validated by plan").to_vec();
    let noise_off = config.overrides.noise_off;
    let d = config.d;

    let mut noise_rng = substream(config.seed, &[tag::NOISE]);
    let mut ledger = run_ledger(sched.planned, config.budget.delta, noise_off)?;
    let group = if noise_off { None } else { Some(ledger.register_group(0, config.n)?) };

    let mut w = config.constraint.initial_point();
    let mut output = w.clone();
    let mut grad = vec![0.0; d];
    let mut oracle = vec![0.0; d];
    let mut scores = vec![0.0; vertices.len()];
    let mut evals = 0u64;
    let mut trace = Vec::new();

    for t in 1..=sched.steps {
        grad.fill(0.0);
        let inv = 1.0 / config.n as f64;
        for ex in examples {
            bisection_oracle_into(&w, ex, gll, sched.beta, sched.alpha, &mut oracle)?;
            evals += 1;
            for j in 0..d {
                grad[j] += inv * oracle[j];
            }
        }
        for (s, v) in scores.iter_mut().zip(&vertices) {
            *s = v.iter().zip(&grad).map(|(a, b)| a * b).sum();
        }
        let pick = if let Some(group) = group {
            ledger.record(group, Mechanism::NoisyMax, sched.step_epsilon, 0.0)?;
            report_noisy_argmin(&mut noise_rng, &scores, sched.scale)?
        } else {
            report_noisy_argmin(&mut noise_rng, &scores, 0.0)?
        };
        if t == sched.steps {
            // The released point is the pre-update iterate of the final
            // step; the last selection is still drawn and paid for.
            output.copy_from_slice(&w);
        }
        let mu = 3.0 / (t as f64 + 2.0);
        mix_toward(&mut w, mu, &vertices[pick]);
        if let Some(every) = config.overrides.trace_every {
            if every > 0 && t % every == 0 {
                trace.push(TracePoint { step: t, point: w.clone() });
            }
        }
    }

    let spent = finish_spend(&ledger, config.budget.delta, noise_off)?;
    let mut echo = ScheduleEcho::new(config.algorithm);
    echo.beta = Some(sched.beta);
    echo.alpha = Some(sched.alpha);
    echo.rounds = Some(sched.steps as u32);
    echo.push("scale", sched.scale);
    echo.push("step_epsilon", sched.step_epsilon);
    echo.push("planned_epsilon", sched.planned.epsilon);
    echo.push("planned_delta", sched.planned.delta);

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
