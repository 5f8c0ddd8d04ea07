//! Grid execution.
//!
//! One job per (n, trial) cell: sample a dataset, solve, evaluate every
//! configured metric, and assemble an audit record. Jobs are independent
//! and carry their own derived seeds, so they can run on any number of
//! worker threads without changing a single output byte; results are
//! collected in grid order regardless of completion order.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use dpopt_core::error::Result;
use dpopt_core::evaluation::{
    estimate_population_risk, feasible_l2_bound, prox_near_stationarity, stationarity_gap, MetricName, ProxReport,
};
use dpopt_core::losses::Example;
use dpopt_core::privacy::{GroupSlice, LedgerEntry, PrivacyBudget};
use dpopt_core::rng::derive_seed;
use dpopt_core::solvers::{solve, Algorithm, ScheduleEcho, SolverConfig};

use crate::config::ResolvedConfig;

// Distinct roots for the three per-cell streams: the task generator, the
// solver, and the evaluation draws. Public because the derivation is part
// of the reproducibility contract: any cell can be reconstructed from the
// master seed and its grid coordinates alone.
pub const TASK_ROOT: u64 = 1;
pub const SOLVER_ROOT: u64 = 2;
pub const EVAL_ROOT: u64 = 3;

// ============================================================================
// Output rows
// ============================================================================

/// One CSV row. The column set is fixed; `to_line` is the only formatter,
/// so the byte layout cannot drift between call sites.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub d: usize,
    pub p: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub trial: usize,
    pub metric: MetricName,
    pub value: f64,
    pub ci: f64,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str = "algorithm,n,d,p,epsilon,delta,seed,trial,metric,value,ci,wall_ms";

impl CsvRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.algorithm.name(),
            self.n,
            self.d,
            self.p,
            self.epsilon,
            self.delta,
            self.seed,
            self.trial,
            self.metric.name(),
            self.value,
            self.ci,
            self.wall_ms
        )
    }
}

/// Full ledger account of one solver execution, serialized to the audit
/// file as JSON. `wall_ms` is the deterministic cost model from the run;
/// `measured_ms` is actual wall time and varies between executions.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRecord {
    pub algorithm: Algorithm,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub task_seed: u64,
    pub nominal: PrivacyBudget,
    pub spent: PrivacyBudget,
    pub target: Option<PrivacyBudget>,
    pub groups: Vec<GroupSlice>,
    pub entries: Vec<LedgerEntry>,
    pub schedule: ScheduleEcho,
    pub gradient_evals: u64,
    pub wall_ms: f64,
    pub measured_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub rows: Vec<CsvRow>,
    pub audits: Vec<AuditRecord>,
}

impl RunArtifacts {
    /// CSV body: header plus one line per row, trailing newline included.
    pub fn csv_body(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.to_line());
        }
        out
    }

    pub fn audit_body(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.audits).expect("audit records serialize");
        out.push('\n');
        out
    }
}

// ============================================================================
// Execution
// ============================================================================

/// Runs the whole grid on up to `threads` workers and returns rows in
/// (n, trial, metric) order.
pub fn execute(rc: &ResolvedConfig, threads: usize) -> Result<RunArtifacts> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool construction");
    let cells: Vec<(usize, usize, usize)> = rc
        .grid
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| (0..rc.trials).map(move |trial| (ni, n, trial)))
        .collect();
    let results: Result<Vec<(Vec<CsvRow>, AuditRecord)>> =
        pool.install(|| cells.par_iter().map(|&(ni, n, trial)| run_cell(rc, ni, n, trial)).collect());
    let results = results?;
    let mut rows = Vec::new();
    let mut audits = Vec::new();
    for (cell_rows, audit) in results {
        rows.extend(cell_rows);
        audits.push(audit);
    }
    Ok(RunArtifacts { rows, audits })
}

fn run_cell(rc: &ResolvedConfig, ni: usize, n: usize, trial: usize) -> Result<(Vec<CsvRow>, AuditRecord)> {
    let task_seed = derive_seed(rc.master_seed, &[TASK_ROOT, ni as u64, trial as u64]);
    let solver_seed = derive_seed(rc.master_seed, &[SOLVER_ROOT, ni as u64, trial as u64]);
    let eval_stream = derive_seed(rc.master_seed, &[EVAL_ROOT, ni as u64, trial as u64]);

    let task = rc.task_for(task_seed)?;
    let examples: Vec<Example> = (0..n as u64).map(|i| task.train_example(i)).collect();
    let config = SolverConfig {
        algorithm: rc.algorithm,
        p: rc.p,
        constraint: rc.constraint.clone(),
        loss: task.loss_model(feasible_l2_bound(&rc.constraint)),
        n,
        d: rc.d,
        budget: rc.budget,
        seed: solver_seed,
        overrides: rc.overrides_for(n),
    };
    let started = Instant::now();
    let run = solve(&config, &examples)?;
    let measured_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut rows = Vec::with_capacity(rc.metrics.len());
    let mut prox: Option<ProxReport> = None;
    for &metric in &rc.metrics {
        let (value, ci) = match metric {
            MetricName::ExcessRisk => {
                let est = estimate_population_risk(&run.output, &task, &rc.constraint, rc.samples, eval_stream)?;
                (est.value, est.ci_half_width)
            }
            MetricName::StationarityGap => {
                let est = stationarity_gap(&run.output, &task, &rc.constraint, rc.samples, eval_stream)?;
                (est.value, est.ci_half_width)
            }
            MetricName::ProxDistance | MetricName::ProxGap => {
                if prox.is_none() {
                    // Resolved in config when a prox metric is listed.
                    let beta = rc.prox_beta.expect("prox_beta resolved");
                    let p_bar = rc.prox_p_bar.expect("prox_p_bar resolved");
                    prox = Some(prox_near_stationarity(
                        &run.output,
                        &task,
                        beta,
                        p_bar,
                        &rc.constraint,
                        rc.samples,
                        eval_stream,
                    )?);
                }
                let report = prox.as_ref().expect("just computed");
                // The oracle is deterministic on its frozen sample, so the
                // interval column degenerates to zero for prox rows.
                match metric {
                    MetricName::ProxDistance => (report.prox_distance, 0.0),
                    MetricName::ProxGap => (report.prox_gap, 0.0),
                    _ => unreachable!(),
                }
            }
        };
        rows.push(CsvRow {
            algorithm: rc.algorithm,
            n,
            d: rc.d,
            p: rc.p.value(),
            epsilon: rc.budget.epsilon,
            delta: rc.budget.delta,
            seed: solver_seed,
            trial,
            metric,
            value,
            ci,
            wall_ms: run.wall_ms,
        });
    }

    let audit = AuditRecord {
        algorithm: rc.algorithm,
        n,
        trial,
        seed: solver_seed,
        task_seed,
        nominal: rc.budget,
        spent: run.spent,
        target: run.ledger.target(),
        groups: run.ledger.groups().to_vec(),
        entries: run.ledger.entries().to_vec(),
        schedule: run.schedule,
        gradient_evals: run.gradient_evals,
        wall_ms: run.wall_ms,
        measured_ms,
    };
    Ok((rows, audit))
}

// ============================================================================
// Rate summaries
// ============================================================================

/// Mean metric value at each grid point, in grid order. Used by the sweep
/// fit and handy for tests.
pub fn mean_by_n(rows: &[CsvRow], metric: MetricName) -> (Vec<usize>, Vec<f64>) {
    let mut ns = Vec::new();
    let mut sums = Vec::new();
    let mut counts = Vec::new();
    for row in rows.iter().filter(|r| r.metric == metric) {
        match ns.iter().position(|&n| n == row.n) {
            Some(i) => {
                sums[i] += row.value;
                counts[i] += 1.0;
            }
            None => {
                ns.push(row.n);
                sums.push(row.value);
                counts.push(1.0);
            }
        }
    }
    let means = sums.iter().zip(&counts).map(|(s, c)| s / c).collect();
    (ns, means)
}

/// Least-squares slope of log(mean value) on log(n) with a 95% interval
/// half-width from the residual variance (k - 2 degrees of freedom).
#[derive(Debug, Clone, Copy)]
pub struct SlopeSummary {
    pub slope: f64,
    pub ci_half_width: f64,
    pub intercept: f64,
    pub points: usize,
}

pub fn slope_with_ci(ns: &[usize], values: &[f64]) -> Result<SlopeSummary> {
    let fit = dpopt_core::evaluation::fit_rate(ns, values)?;
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let mut rss = 0.0;
    for (x, v) in xs.iter().zip(values) {
        let resid = v.ln() - (fit.intercept + fit.slope * x);
        rss += resid * resid;
    }
    let k = ns.len();
    let ci_half_width = if k > 2 {
        1.959963984540054 * (rss / ((k - 2) as f64 * sxx)).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(SlopeSummary { slope: fit.slope, ci_half_width, intercept: fit.intercept, points: k })
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn small_config() -> ResolvedConfig {
        let text = r#"
            master_seed = 11
            trials = 2

            [task]
            family = "absolute_gll"
            d = 4
            p = 2.0
            law = "dual_sphere"
            radius = 1.0
            label_noise = 0.1

            [constraint]
            kind = "lp_ball"
            radius = 1.0

            [algorithm]
            name = "phased_sgd"

            [budget]
            epsilon = 1.0
            delta = 1e-5

            [grid]
            n = [64, 128]

            [evaluation]
            samples = 200
            metrics = ["excess_risk"]
        "#;
        ExperimentConfig::from_toml(text).unwrap().resolve().unwrap()
    }

    #[test]
    fn thread_counts_cannot_change_the_rows() {
        let rc = small_config();
        let one = execute(&rc, 1).unwrap();
        let four = execute(&rc, 4).unwrap();
        assert_eq!(one.rows, four.rows);
        assert_eq!(one.csv_body(), four.csv_body());
        // Audit records differ only in measured wall time.
        for (a, b) in one.audits.iter().zip(&four.audits) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.spent, b.spent);
            assert_eq!(a.entries, b.entries);
        }
    }

    #[test]
    fn rows_arrive_in_grid_order() {
        let rc = small_config();
        let arts = execute(&rc, 3).unwrap();
        let order: Vec<(usize, usize)> = arts.rows.iter().map(|r| (r.n, r.trial)).collect();
        assert_eq!(order, vec![(64, 0), (64, 1), (128, 0), (128, 1)]);
        assert_eq!(arts.audits.len(), 4);
        let header = arts.csv_body().lines().next().unwrap().to_string();
        assert_eq!(header, CSV_HEADER);
    }

    #[test]
    fn trials_draw_distinct_instances() {
        let rc = small_config();
        let arts = execute(&rc, 1).unwrap();
        assert_ne!(arts.rows[0].value, arts.rows[1].value);
        assert_ne!(arts.audits[0].seed, arts.audits[1].seed);
        assert_ne!(arts.audits[0].task_seed, arts.audits[1].task_seed);
    }

    #[test]
    fn each_row_keys_into_exactly_one_audit() {
        let rc = small_config();
        let arts = execute(&rc, 2).unwrap();
        for row in &arts.rows {
            let matches = arts
                .audits
                .iter()
                .filter(|a| a.algorithm == row.algorithm && a.seed == row.seed)
                .count();
            assert_eq!(matches, 1, "row (n = {}, trial = {}) has {} audit records", row.n, row.trial, matches);
        }
    }

    #[test]
    fn mean_by_n_groups_in_grid_order() {
        let rc = small_config();
        let arts = execute(&rc, 1).unwrap();
        let (ns, means) = mean_by_n(&arts.rows, MetricName::ExcessRisk);
        assert_eq!(ns, vec![64, 128]);
        assert_eq!(means.len(), 2);
    }

    #[test]
    fn slope_recovers_an_exact_power_law() {
        let ns = [100, 1000, 10_000, 100_000];
        let values: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.5)).collect();
        let s = slope_with_ci(&ns, &values).unwrap();
        assert!((s.slope + 0.5).abs() < 1e-12);
        assert!(s.ci_half_width < 1e-10);
    }
}
