//! Differentially private stochastic optimization over lp geometries.
//!
//! The crate provides six building blocks behind one facade:
//!
//! * [`geometry`]: lp norms, dual exponents, regularity constants, and
//!   constraint sets with linear-minimization and projection oracles.
//! * [`losses`]: generalized linear losses, Moreau-envelope smoothing with a
//!   value-only bisection gradient oracle, and smooth nonconvex / weakly
//!   convex model families.
//! * [`privacy`]: (epsilon, delta) budgets, Laplace/Gaussian samplers,
//!   report-noisy-argmin, and a composition ledger with per-slice parallel
//!   groups and a budget guard.
//! * [`data`]: seeded synthetic task generators with planted optima and a
//!   plain-text dataset format that round-trips bit-exactly.
//! * [`solvers`]: five private optimization routines plus a strongly convex
//!   subsolver, all deterministic given (config, seed).
//! * [`evaluation`]: Monte-Carlo risk/stationarity estimators with
//!   confidence intervals, a proximal-point oracle, and log-log rate fits.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod privacy;
pub mod rng;
pub mod solvers;

pub use data::{Dataset, FeatureLaw, TaskFamily, TaskSpec};
pub use error::{CoreError, Result};
pub use evaluation::{MetricEstimate, MetricName, ProxReport, RateFit};
pub use geometry::{ConstraintKind, ConstraintSet, LpExponent, RegularityConstants, RegularityVariant};
pub use losses::{CustomLink, Example, GllSpec, Link, LossModel, SmoothedGll};
pub use privacy::{LedgerEntry, Mechanism, PrivacyBudget, PrivacyLedger};
pub use solvers::{Algorithm, Overrides, SolverConfig, SolverRun};
