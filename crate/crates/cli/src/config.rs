//! Experiment configuration.
//!
//! A config is one TOML document with nested tables. Parsing is strict:
//! unknown keys are rejected, and every validation error names the key it
//! concerns. The documented shape:
//!
//! ```toml
//! master_seed = 7          # root of every derived stream
//! trials = 3               # independent repetitions per grid point
//!
//! [task]                   # synthetic data generator
//! family = "hinge_gll"     # absolute_gll | hinge_gll | logistic_gll |
//!                          # smooth_nonconvex | phase_retrieval
//! d = 20                   # dimension
//! p = 2.0                  # ambient norm exponent (TOML `inf` allowed)
//! law = "dual_sphere"      # dual_sphere | cube | sparse_signed
//! radius = 1.0             # feature scale
//! label_noise = 0.0        # flip probability / additive amplitude
//! # w_star = [ ... ]       # optional explicit planted parameter
//!
//! [constraint]             # feasible set
//! kind = "lp_ball"         # lp_ball | l1_cross_polytope | polytope |
//!                          # unconstrained
//! radius = 1.0             # balls and the cross polytope
//! # p = 2.0                # ball exponent, defaults to task.p
//! # center = [ ... ]       # ball center, defaults to the origin
//! # vertices = [[ ... ]]   # explicit vertex list for kind = "polytope"
//!
//! [algorithm]
//! name = "phased_sgd"      # phased_sgd | noisy_fw | poly_sfw | noisy_sfw |
//!                          # pg_psmd
//! # beta / alpha / rounds / batch / eta / theta    schedule overrides
//! # noise_off / full_batches / trace_every         diagnostics
//!
//! [budget]
//! epsilon = 1.0
//! delta = 1e-5
//!
//! [grid]
//! n = [1024, 2048, 4096]   # strictly increasing sample sizes
//!
//! # [[grid.patch]]         # optional per-n schedule overrides
//! # n = 1024
//! # rounds = 3
//! # batch = 128
//!
//! [evaluation]
//! samples = 2000           # evaluation draws per estimate
//! metrics = ["excess_risk"]
//! # prox_beta = 10.0       # prox metrics: regularization weight
//! # prox_p_bar = 1.5       # prox metrics: distance norm exponent
//!
//! [output]                 # optional; defaults shown
//! csv = "results.csv"
//! audit = "audit.json"
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;

use dpopt_core::data::{FeatureLaw, TaskFamily, TaskSpec};
use dpopt_core::error::{CoreError, Result};
use dpopt_core::evaluation::{feasible_l2_bound, MetricName};
use dpopt_core::geometry::{regularity_constants, ConstraintSet, LpExponent, RegularityVariant};
use dpopt_core::privacy::PrivacyBudget;
use dpopt_core::solvers::{p_bar, Algorithm, Overrides};

// ============================================================================
// Raw TOML shape
// ============================================================================

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub trials: usize,
    pub task: TaskSection,
    pub constraint: ConstraintSection,
    pub algorithm: AlgorithmSection,
    pub budget: BudgetSection,
    pub grid: GridSection,
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub family: TaskFamily,
    pub d: usize,
    pub p: f64,
    pub law: FeatureLaw,
    pub radius: f64,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub w_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    pub kind: String,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub vertices: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: Algorithm,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub rounds: Option<u32>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub noise_off: bool,
    #[serde(default)]
    pub full_batches: bool,
    #[serde(default)]
    pub trace_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Vec<usize>,
    #[serde(default)]
    pub patch: Vec<GridPatch>,
}

/// Per-n schedule overrides; fields set here shadow the [algorithm] table
/// at that grid point only.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPatch {
    pub n: usize,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub rounds: Option<u32>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub samples: usize,
    pub metrics: Vec<MetricName>,
    #[serde(default)]
    pub prox_beta: Option<f64>,
    #[serde(default)]
    pub prox_p_bar: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_audit")]
    pub audit: String,
}

fn default_csv() -> String {
    "results.csv".to_string()
}

fn default_audit() -> String {
    "audit.json".to_string()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { csv: default_csv(), audit: default_audit() }
    }
}

// ============================================================================
// Parsing and resolution
// ============================================================================

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| CoreError::config("config", e.message().to_string()))
    }

    /// Validates the document and resolves it into ready-to-run core types.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.trials == 0 {
            return Err(CoreError::config("trials", "at least one trial is required"));
        }
        if self.grid.n.is_empty() {
            return Err(CoreError::config("grid.n", "the sample-size grid must be nonempty"));
        }
        for pair in self.grid.n.windows(2) {
            if pair[1] <= pair[0] {
                return Err(CoreError::config(
                    "grid.n",
                    format!("sample sizes must be strictly increasing; {} follows {}", pair[1], pair[0]),
                ));
            }
        }
        if let Some(&n) = self.grid.n.iter().find(|&&n| n < 2) {
            return Err(CoreError::config("grid.n", format!("solvers need at least 2 examples, got {n}")));
        }
        let mut patches = BTreeMap::new();
        for patch in &self.grid.patch {
            if !self.grid.n.contains(&patch.n) {
                return Err(CoreError::config(
                    "grid.patch.n",
                    format!("patch refers to n = {}, which is not on the grid", patch.n),
                ));
            }
            if patches.insert(patch.n, *patch).is_some() {
                return Err(CoreError::config("grid.patch.n", format!("duplicate patch for n = {}", patch.n)));
            }
        }
        if self.evaluation.samples < 2 {
            return Err(CoreError::config(
                "evaluation.samples",
                format!("estimators need at least 2 draws, got {}", self.evaluation.samples),
            ));
        }
        if self.evaluation.metrics.is_empty() {
            return Err(CoreError::config("evaluation.metrics", "at least one metric is required"));
        }
        let mut seen = Vec::new();
        for metric in &self.evaluation.metrics {
            if seen.contains(metric) {
                return Err(CoreError::config("evaluation.metrics", format!("duplicate metric `{metric}`")));
            }
            seen.push(*metric);
        }

        let p = LpExponent::new(self.task.p)?;
        let budget = PrivacyBudget::new(self.budget.epsilon, self.budget.delta)?;
        let constraint = self.constraint.build(self.task.d, p)?;

        // Dry-build a task to surface generator errors (margin feasibility,
        // label-noise bounds, w_star shape) at config time. The planted
        // parameter itself is seed-dependent and rebuilt per trial.
        let probe = TaskSpec::new(
            self.task.family,
            self.task.d,
            p,
            self.task.law,
            self.task.radius,
            self.task.label_noise,
            self.task.w_star.clone(),
            self.master_seed,
        )?;
        let loss = probe.loss_model(feasible_l2_bound(&constraint));

        let wants_prox = self
            .evaluation
            .metrics
            .iter()
            .any(|m| matches!(m, MetricName::ProxDistance | MetricName::ProxGap));
        let (prox_beta, prox_p_bar) = if wants_prox {
            let rho = match loss.rho {
                Some(r) if r > 0.0 => r,
                _ => {
                    return Err(CoreError::config(
                        "evaluation.metrics",
                        format!("prox metrics target weakly convex families; `{}` declares no modulus", loss.name()),
                    ))
                }
            };
            let reg = regularity_constants(p, self.task.d, RegularityVariant::WeaklyConvex)?;
            let beta = self.evaluation.prox_beta.unwrap_or(2.0 * rho * reg.kappa);
            if beta <= rho * reg.kappa {
                return Err(CoreError::config(
                    "evaluation.prox_beta",
                    format!("prox_beta = {beta} must exceed rho kappa = {}", rho * reg.kappa),
                ));
            }
            let exponent = match self.evaluation.prox_p_bar {
                Some(v) => {
                    if !(1.0..=2.0).contains(&v) {
                        return Err(CoreError::config(
                            "evaluation.prox_p_bar",
                            format!("the distance exponent must lie in [1, 2], got {v}"),
                        ));
                    }
                    v
                }
                None => p_bar(p.value(), self.task.d),
            };
            (Some(beta), Some(exponent))
        } else {
            (None, None)
        };

        let base_overrides = Overrides {
            beta: self.algorithm.beta,
            alpha: self.algorithm.alpha,
            rounds: self.algorithm.rounds,
            batch: self.algorithm.batch,
            eta: self.algorithm.eta,
            theta: self.algorithm.theta,
            noise_off: self.algorithm.noise_off,
            full_batches: self.algorithm.full_batches,
            trace_every: self.algorithm.trace_every,
        };

        Ok(ResolvedConfig {
            algorithm: self.algorithm.name,
            family: self.task.family,
            d: self.task.d,
            p,
            law: self.task.law,
            radius: self.task.radius,
            label_noise: self.task.label_noise,
            w_star: self.task.w_star.clone(),
            constraint,
            budget,
            grid: self.grid.n.clone(),
            patches,
            base_overrides,
            trials: self.trials,
            master_seed: self.master_seed,
            samples: self.evaluation.samples,
            metrics: self.evaluation.metrics.clone(),
            prox_beta,
            prox_p_bar,
            csv_path: self.output.csv.clone(),
            audit_path: self.output.audit.clone(),
        })
    }
}

impl ConstraintSection {
    fn build(&self, d: usize, task_p: LpExponent) -> Result<ConstraintSet> {
        let reject = |field: &str, kind: &str| -> CoreError {
            CoreError::config(
                "constraint",
                format!("`{field}` does not apply to kind = \"{kind}\""),
            )
        };
        match self.kind.as_str() {
            "lp_ball" => {
                if self.vertices.is_some() {
                    return Err(reject("vertices", "lp_ball"));
                }
                let radius = self
                    .radius
                    .ok_or_else(|| CoreError::config("constraint.radius", "lp_ball needs a radius"))?;
                let p = match self.p {
                    Some(v) => LpExponent::new(v)?,
                    None => task_p,
                };
                let center = self.center.clone().unwrap_or_else(|| vec![0.0; d]);
                if center.len() != d {
                    return Err(CoreError::config(
                        "constraint.center",
                        format!("center has dim {}, task has dim {d}", center.len()),
                    ));
                }
                ConstraintSet::lp_ball(center, radius, p)
            }
            "l1_cross_polytope" => {
                if self.p.is_some() {
                    return Err(reject("p", "l1_cross_polytope"));
                }
                if self.center.is_some() {
                    return Err(reject("center", "l1_cross_polytope"));
                }
                if self.vertices.is_some() {
                    return Err(reject("vertices", "l1_cross_polytope"));
                }
                let radius = self
                    .radius
                    .ok_or_else(|| CoreError::config("constraint.radius", "l1_cross_polytope needs a radius"))?;
                ConstraintSet::l1_cross_polytope(d, radius)
            }
            "polytope" => {
                if self.radius.is_some() {
                    return Err(reject("radius", "polytope"));
                }
                if self.center.is_some() {
                    return Err(reject("center", "polytope"));
                }
                let vertices = self
                    .vertices
                    .clone()
                    .ok_or_else(|| CoreError::config("constraint.vertices", "polytope needs an explicit vertex list"))?;
                let p = match self.p {
                    Some(v) => LpExponent::new(v)?,
                    None => task_p,
                };
                ConstraintSet::polytope(vertices, p)
            }
            "unconstrained" => {
                if self.radius.is_some() || self.p.is_some() || self.center.is_some() || self.vertices.is_some() {
                    return Err(CoreError::config(
                        "constraint",
                        "unconstrained takes no radius, p, center, or vertices",
                    ));
                }
                ConstraintSet::unconstrained(d)
            }
            other => Err(CoreError::config(
                "constraint.kind",
                format!("unknown kind `{other}`; expected lp_ball, l1_cross_polytope, polytope, or unconstrained"),
            )),
        }
    }
}

// ============================================================================
// Resolved form
// ============================================================================

/// A validated experiment ready for the runner. Everything string-shaped in
/// the TOML has been converted into core types.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub algorithm: Algorithm,
    pub family: TaskFamily,
    pub d: usize,
    pub p: LpExponent,
    pub law: FeatureLaw,
    pub radius: f64,
    pub label_noise: f64,
    pub w_star: Option<Vec<f64>>,
    pub constraint: ConstraintSet,
    pub budget: PrivacyBudget,
    pub grid: Vec<usize>,
    pub patches: BTreeMap<usize, GridPatch>,
    pub base_overrides: Overrides,
    pub trials: usize,
    pub master_seed: u64,
    /// Evaluation draws per estimate.
    pub samples: usize,
    pub metrics: Vec<MetricName>,
    /// Resolved prox regularization weight; set iff a prox metric is listed.
    pub prox_beta: Option<f64>,
    pub prox_p_bar: Option<f64>,
    pub csv_path: String,
    pub audit_path: String,
}

impl ResolvedConfig {
    /// Schedule overrides at one grid point: the [algorithm] table with any
    /// matching [[grid.patch]] fields shadowing it.
    pub fn overrides_for(&self, n: usize) -> Overrides {
        let mut merged = self.base_overrides;
        if let Some(patch) = self.patches.get(&n) {
            merged.beta = patch.beta.or(merged.beta);
            merged.alpha = patch.alpha.or(merged.alpha);
            merged.rounds = patch.rounds.or(merged.rounds);
            merged.batch = patch.batch.or(merged.batch);
            merged.eta = patch.eta.or(merged.eta);
            merged.theta = patch.theta.or(merged.theta);
        }
        merged
    }

    /// Task generator for one grid cell; the seed replants the parameter,
    /// so every trial draws an independent instance.
    pub fn task_for(&self, task_seed: u64) -> Result<TaskSpec> {
        TaskSpec::new(
            self.family,
            self.d,
            self.p,
            self.law,
            self.radius,
            self.label_noise,
            self.w_star.clone(),
            task_seed,
        )
    }
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
            master_seed = 7
            trials = 2

            [task]
            family = "absolute_gll"
            d = 4
            p = 2.0
            law = "dual_sphere"
            radius = 1.0

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
            samples = 100
            metrics = ["excess_risk"]
        "#
        .to_string()
    }

    #[test]
    fn minimal_config_resolves() {
        let cfg = ExperimentConfig::from_toml(&minimal_toml()).unwrap();
        let rc = cfg.resolve().unwrap();
        assert_eq!(rc.algorithm, Algorithm::PhasedSgd);
        assert_eq!(rc.grid, vec![64, 128]);
        assert_eq!(rc.csv_path, "results.csv");
        assert_eq!(rc.trials, 2);
        assert!(rc.prox_beta.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_toml().replace("master_seed = 7", "master_seed = 7\nbogus_key = 1");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn missing_epsilon_names_the_key() {
        let text = minimal_toml().replace("epsilon = 1.0", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("epsilon"), "{err}");
    }

    #[test]
    fn non_increasing_grid_is_rejected() {
        let text = minimal_toml().replace("n = [64, 128]", "n = [128, 128]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("grid.n"), "{err}");
    }

    #[test]
    fn patch_must_sit_on_the_grid() {
        let text = minimal_toml() + "\n[[grid.patch]]\nn = 999\nrounds = 2\n";
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("grid.patch.n"), "{err}");
    }

    #[test]
    fn patches_shadow_base_overrides() {
        let text = minimal_toml() + "\n[[grid.patch]]\nn = 64\nrounds = 5\n";
        let text = text.replace("name = \"phased_sgd\"", "name = \"poly_sfw\"\nrounds = 2\nbatch = 16");
        let rc = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap();
        let at_64 = rc.overrides_for(64);
        let at_128 = rc.overrides_for(128);
        assert_eq!(at_64.rounds, Some(5));
        assert_eq!(at_64.batch, Some(16));
        assert_eq!(at_128.rounds, Some(2));
    }

    #[test]
    fn prox_metrics_need_a_weakly_convex_family() {
        let text = minimal_toml().replace("metrics = [\"excess_risk\"]", "metrics = [\"prox_distance\"]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("evaluation.metrics"), "{err}");
    }

    #[test]
    fn prox_defaults_follow_the_task_geometry() {
        let text = minimal_toml()
            .replace("family = \"absolute_gll\"", "family = \"phase_retrieval\"")
            .replace("metrics = [\"excess_risk\"]", "metrics = [\"prox_distance\", \"prox_gap\"]")
            .replace("name = \"phased_sgd\"", "name = \"pg_psmd\"");
        let rc = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap();
        let beta = rc.prox_beta.unwrap();
        assert!(beta > 0.0);
        assert_eq!(rc.prox_p_bar, Some(2.0));
    }

    #[test]
    fn infinite_p_parses_from_toml() {
        let text = minimal_toml()
            .replace("p = 2.0", "p = inf")
            .replace("kind = \"lp_ball\"", "kind = \"lp_ball\"\np = inf");
        let rc = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert!(rc.p.is_infinite());
    }

    #[test]
    fn constraint_kinds_reject_foreign_fields() {
        let text = minimal_toml().replace(
            "kind = \"lp_ball\"\n            radius = 1.0",
            "kind = \"unconstrained\"\n            radius = 1.0",
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("constraint"), "{err}");
    }

    #[test]
    fn duplicate_metrics_are_rejected() {
        let text = minimal_toml().replace(
            "metrics = [\"excess_risk\"]",
            "metrics = [\"excess_risk\", \"excess_risk\"]",
        );
        let err = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("evaluation.metrics"), "{err}");
    }
}
