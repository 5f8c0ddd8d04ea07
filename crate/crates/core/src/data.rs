//! Synthetic task generators and a plain-text dataset format.
//!
//! Every example is a pure function of (task seed, stream, index): access by
//! index draws from a dedicated RNG substream, so parallel consumers see the
//! same data regardless of chunking, and training and evaluation streams
//! never collide.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{dot, lp_norm, LpExponent};
use crate::losses::{sigmoid, Example, GllSpec, LossModel};
use crate::rng::{substream, tag};

// ============================================================================
// Task specification
// ============================================================================

/// Loss family a task generates data for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    AbsoluteGll,
    HingeGll,
    LogisticGll,
    SmoothNonconvex,
    PhaseRetrieval,
}

impl TaskFamily {
    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::AbsoluteGll => "absolute_gll",
            TaskFamily::HingeGll => "hinge_gll",
            TaskFamily::LogisticGll => "logistic_gll",
            TaskFamily::SmoothNonconvex => "smooth_nonconvex",
            TaskFamily::PhaseRetrieval => "phase_retrieval",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskFamily {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute_gll" => Ok(TaskFamily::AbsoluteGll),
            "hinge_gll" => Ok(TaskFamily::HingeGll),
            "logistic_gll" => Ok(TaskFamily::LogisticGll),
            "smooth_nonconvex" => Ok(TaskFamily::SmoothNonconvex),
            "phase_retrieval" => Ok(TaskFamily::PhaseRetrieval),
            other => Err(CoreError::config("family", format!("unknown task family `{other}`"))),
        }
    }
}

/// Feature distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLaw {
    /// Gaussian direction rescaled so the dual norm ||x||_q equals the
    /// task radius exactly.
    DualSphere,
    /// Coordinates iid uniform on [-radius, radius].
    Cube,
    /// A single signed coordinate of magnitude radius.
    SparseSigned,
}

/// A synthetic learning task: loss family, geometry, feature law, planted
/// parameter, and noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub d: usize,
    /// Ambient norm exponent; features are bounded in its dual.
    pub p: LpExponent,
    pub law: FeatureLaw,
    /// Feature scale.
    pub radius: f64,
    /// Flip probability for classification labels, additive amplitude for
    /// regression targets. Must be zero for logistic tasks, which stay
    /// well specified.
    pub label_noise: f64,
    pub w_star: Vec<f64>,
    pub seed: u64,
}

impl TaskSpec {
    /// Builds and validates a task. When `w_star` is `None` a parameter is
    /// planted from a dedicated substream: one signed coordinate for hinge
    /// tasks on the cube (the margin construction needs sparsity), a
    /// Gaussian direction otherwise.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        family: TaskFamily,
        d: usize,
        p: LpExponent,
        law: FeatureLaw,
        radius: f64,
        label_noise: f64,
        w_star: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(CoreError::config("d", "dimension must be positive"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(CoreError::config("radius", format!("feature radius must be positive and finite, got {radius}")));
        }
        if !(0.0..1.0).contains(&label_noise) {
            return Err(CoreError::config("label_noise", format!("label noise must lie in [0, 1), got {label_noise}")));
        }
        if family == TaskFamily::LogisticGll && label_noise != 0.0 {
            return Err(CoreError::config("label_noise", "logistic tasks are well specified; set label_noise = 0"));
        }
        let w_star = match w_star {
            Some(w) => {
                if w.len() != d {
                    return Err(CoreError::config("w_star", format!("w_star has dim {}, task has dim {d}", w.len())));
                }
                w
            }
            None => plant_parameter(family, law, d, p, radius, seed),
        };
        let spec = TaskSpec { family, d, p, law, radius, label_noise, w_star, seed };
        spec.validate_margin_construction()?;
        Ok(spec)
    }

    /// Hinge tasks guarantee unit margins by construction, which constrains
    /// the law and the planted parameter.
    fn validate_margin_construction(&self) -> Result<()> {
        if self.family != TaskFamily::HingeGll {
            return Ok(());
        }
        match self.law {
            FeatureLaw::DualSphere => {
                if self.p.value() != 2.0 {
                    return Err(CoreError::config("p", "hinge tasks on the dual sphere need p = 2"));
                }
                let norm = lp_norm(&self.w_star, LpExponent::two());
                if norm * self.radius < 1.0 {
                    return Err(CoreError::config(
                        "w_star",
                        format!("margin construction needs ||w_star||_2 >= 1/radius; got {norm} < {}", 1.0 / self.radius),
                    ));
                }
            }
            FeatureLaw::Cube => {
                let nonzero: Vec<usize> = (0..self.d).filter(|&j| self.w_star[j] != 0.0).collect();
                if nonzero.len() != 1 {
                    return Err(CoreError::config("w_star", "hinge tasks on the cube need a 1-sparse w_star"));
                }
                let mag = self.w_star[nonzero[0]].abs();
                if mag * self.radius < 1.0 {
                    return Err(CoreError::config(
                        "w_star",
                        format!("margin construction needs |w_star_j| >= 1/radius; got {mag} < {}", 1.0 / self.radius),
                    ));
                }
            }
            FeatureLaw::SparseSigned => {
                return Err(CoreError::config("law", "hinge margins are not constructible from sparse_signed features"));
            }
        }
        Ok(())
    }

    /// Loss model with constants derived from the task geometry. `w_bound`
    /// is the largest l2 norm the solver's feasible set allows; it only
    /// enters the phase retrieval Lipschitz constant and is ignored by the
    /// other families.
    pub fn loss_model(&self, w_bound: f64) -> LossModel {
        let r = self.feature_bound();
        match self.family {
            // Radius was validated positive at construction, so the spec
            // constructors cannot fail.
            TaskFamily::AbsoluteGll => LossModel::gll(GllSpec::absolute(r).expect("validated radius")),
            TaskFamily::HingeGll => LossModel::gll(GllSpec::hinge(r).expect("validated radius")),
            TaskFamily::LogisticGll => LossModel::gll(GllSpec::logistic(r).expect("validated radius")),
            TaskFamily::SmoothNonconvex => LossModel::smooth_nonconvex(r),
            TaskFamily::PhaseRetrieval => {
                let r2 = bound_q_to_l2(r, self.p, self.d);
                LossModel::weakly_convex(r2, w_bound)
            }
        }
    }

    /// Guaranteed bound on ||x||_q over the feature law, q dual to p.
    pub fn feature_bound(&self) -> f64 {
        let q = self.p.dual().value();
        match self.law {
            FeatureLaw::DualSphere | FeatureLaw::SparseSigned => self.radius,
            FeatureLaw::Cube => {
                if q.is_infinite() {
                    self.radius
                } else {
                    self.radius * (self.d as f64).powf(1.0 / q)
                }
            }
        }
    }

    /// Training example i. Pure in (spec, i).
    pub fn train_example(&self, i: u64) -> Example {
        let mut rng = substream(self.seed, &[tag::TRAIN, i]);
        self.draw(&mut rng)
    }

    /// Held-out example i of evaluation stream `stream`, independent of
    /// every training index and of every other stream.
    pub fn eval_example(&self, stream: u64, i: u64) -> Example {
        let mut rng = substream(self.seed, &[tag::EVAL, stream, i]);
        self.draw(&mut rng)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Example {
        match self.family {
            TaskFamily::HingeGll => self.draw_hinge(rng),
            _ => {
                let x = self.draw_features(rng);
                let m = dot(&x, &self.w_star);
                let y = match self.family {
                    TaskFamily::AbsoluteGll | TaskFamily::SmoothNonconvex => m + self.noise_shift(rng),
                    TaskFamily::PhaseRetrieval => m * m + self.noise_shift(rng),
                    TaskFamily::LogisticGll => {
                        if rng.random::<f64>() < sigmoid(m) {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    TaskFamily::HingeGll => unreachable!(),
                };
                Example { x, y }
            }
        }
    }

    fn noise_shift<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.label_noise == 0.0 {
            0.0
        } else {
            self.label_noise * (2.0 * rng.random::<f64>() - 1.0)
        }
    }

    fn draw_features<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self.law {
            FeatureLaw::DualSphere => {
                let q = self.p.dual();
                let z: Vec<f64> = (0..self.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = lp_norm(&z, q);
                if norm == 0.0 {
                    let mut x = vec![0.0; self.d];
                    x[0] = self.radius;
                    return x;
                }
                z.iter().map(|v| v * self.radius / norm).collect()
            }
            FeatureLaw::Cube => (0..self.d).map(|_| rng.random_range(-self.radius..=self.radius)).collect(),
            FeatureLaw::SparseSigned => {
                let j = rng.random_range(0..self.d);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut x = vec![0.0; self.d];
                x[j] = sign * self.radius;
                x
            }
        }
    }

    /// Margin construction: the clean label sigma always satisfies
    /// sigma <x, w_star> >= 1, then flips with probability `label_noise`.
    fn draw_hinge<R: Rng>(&self, rng: &mut R) -> Example {
        let sigma = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let x = match self.law {
            FeatureLaw::DualSphere => {
                let norm_w = lp_norm(&self.w_star, LpExponent::two());
                let unit: Vec<f64> = self.w_star.iter().map(|v| v / norm_w).collect();
                let u = rng.random_range(1.0 / norm_w..=self.radius);
                // Orthogonal fill brings the norm to exactly radius.
                let z: Vec<f64> = (0..self.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let along = dot(&z, &unit);
                let mut perp: Vec<f64> = z.iter().zip(&unit).map(|(zi, ui)| zi - along * ui).collect();
                let perp_norm = lp_norm(&perp, LpExponent::two());
                let fill = (self.radius * self.radius - u * u).max(0.0).sqrt();
                if perp_norm > 0.0 && fill > 0.0 {
                    for v in perp.iter_mut() {
                        *v *= fill / perp_norm;
                    }
                } else {
                    perp.iter_mut().for_each(|v| *v = 0.0);
                }
                unit.iter().zip(&perp).map(|(ui, pi)| sigma * u * ui + pi).collect()
            }
            FeatureLaw::Cube => {
                let j = self.w_star.iter().position(|v| *v != 0.0).expect("validated 1-sparse");
                let mag = self.w_star[j].abs();
                let u = rng.random_range(1.0 / mag..=self.radius);
                let mut x: Vec<f64> = (0..self.d).map(|_| rng.random_range(-self.radius..=self.radius)).collect();
                x[j] = sigma * u * self.w_star[j].signum();
                x
            }
            FeatureLaw::SparseSigned => unreachable!("rejected at construction"),
        };
        let flip = self.label_noise > 0.0 && rng.random::<f64>() < self.label_noise;
        Example { x, y: if flip { -sigma } else { sigma } }
    }
}

/// Converts a dual-norm feature bound ||x||_q <= r into an l2 bound. Only
/// an inflation by d^(1/2 - 1/q) is needed for q > 2; for q <= 2 the l2
/// norm is already dominated.
fn bound_q_to_l2(r: f64, p: LpExponent, d: usize) -> f64 {
    let q = p.dual().value();
    if q <= 2.0 {
        r
    } else {
        let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q };
        r * (d as f64).powf(0.5 - inv_q)
    }
}

fn plant_parameter(family: TaskFamily, law: FeatureLaw, d: usize, p: LpExponent, radius: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, &[tag::PLANT]);
    match (family, law) {
        (TaskFamily::HingeGll, FeatureLaw::Cube) => {
            let j = rng.random_range(0..d);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut w = vec![0.0; d];
            w[j] = sign * (1.0f64).max(1.0 / radius);
            w
        }
        (TaskFamily::HingeGll, _) => {
            let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = lp_norm(&z, LpExponent::two());
            let target = (1.0f64).max(1.0 / radius);
            let mut w: Vec<f64> = z.iter().map(|v| v * (target / norm.max(f64::MIN_POSITIVE))).collect();
            // Rounding can leave the norm a few ulps short of the margin
            // threshold; scale up until the validated invariant holds exactly.
            loop {
                let got = lp_norm(&w, LpExponent::two());
                if got >= target {
                    break;
                }
                let bump = (target / got).max(1.0 + f64::EPSILON);
                for v in w.iter_mut() {
                    *v *= bump;
                }
            }
            w
        }
        _ => {
            let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = lp_norm(&z, p);
            z.iter().map(|v| v / norm.max(f64::MIN_POSITIVE)).collect()
        }
    }
}

// ============================================================================
// Datasets
// ============================================================================

/// A materialized sample with the header fields of the text format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub family: TaskFamily,
    pub d: usize,
    pub radius: f64,
    pub seed: u64,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Materializes training examples 0..n.
    pub fn generate(spec: &TaskSpec, n: usize) -> Result<Dataset> {
        if n == 0 {
            return Err(CoreError::config("n", "dataset size must be positive"));
        }
        let examples = (0..n as u64).map(|i| spec.train_example(i)).collect();
        Ok(Dataset { family: spec.family, d: spec.d, radius: spec.radius, seed: spec.seed, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Text form: one header line `family d n radius seed`, then one line
    /// per example holding the target followed by the coordinates. Floats
    /// print in shortest round-trip form, so parsing restores them bit for
    /// bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} {} {} {} {}\n", self.family, self.d, self.examples.len(), self.radius, self.seed));
        for ex in &self.examples {
            out.push_str(&format!("{}", ex.y));
            for v in &ex.x {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(CoreError::Parse {
            line: 1,
            column: 1,
            reason: "missing header line".to_string(),
        })?;
        let mut fields = tokens(header);
        let family: TaskFamily = parse_token(&mut fields, header, 1, "family")?.parse()?;
        let d: usize = parse_number(&mut fields, header, 1, "d")?;
        let n: usize = parse_number(&mut fields, header, 1, "n")?;
        let radius: f64 = parse_number(&mut fields, header, 1, "radius")?;
        let seed: u64 = parse_number(&mut fields, header, 1, "seed")?;
        if let Some((col, _)) = fields.next() {
            return Err(CoreError::Parse { line: 1, column: col, reason: "unexpected trailing field in header".to_string() });
        }
        if n == 0 {
            return Err(CoreError::Parse { line: 1, column: 1, reason: "dataset declares zero examples".to_string() });
        }
        let mut examples = Vec::with_capacity(n);
        for idx in 0..n {
            let line_no = idx + 2;
            let line = lines.next().ok_or(CoreError::Parse {
                line: line_no,
                column: 1,
                reason: format!("expected {n} example lines, found {idx}"),
            })?;
            let mut fields = tokens(line);
            let y: f64 = parse_number(&mut fields, line, line_no, "target")?;
            let mut x = Vec::with_capacity(d);
            for _ in 0..d {
                x.push(parse_number(&mut fields, line, line_no, "coordinate")?);
            }
            if let Some((col, _)) = fields.next() {
                return Err(CoreError::Parse {
                    line: line_no,
                    column: col,
                    reason: format!("expected {} fields, found more", d + 1),
                });
            }
            examples.push(Example { x, y });
        }
        for (extra, line) in lines.enumerate() {
            if !line.trim().is_empty() {
                return Err(CoreError::Parse {
                    line: n + 2 + extra,
                    column: 1,
                    reason: "unexpected content after final example".to_string(),
                });
            }
        }
        Ok(Dataset { family, d, radius, seed, examples })
    }
}

/// Materializes training examples 0..n; n must be positive.
pub fn sample_dataset(spec: &TaskSpec, n: usize) -> Result<Dataset> {
    Dataset::generate(spec, n)
}

/// Iterator over m held-out examples of the given evaluation stream. Each
/// item is pure in (spec, stream, index), so chunked consumers see the same
/// examples regardless of chunk boundaries.
pub fn fresh_eval_stream(spec: &TaskSpec, m: usize, stream: u64) -> impl Iterator<Item = Example> + '_ {
    (0..m as u64).map(move |i| spec.eval_example(stream, i))
}

/// Writes a dataset in the plain-text format.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, ds.to_text())?;
    Ok(())
}

/// Reads a dataset written by `save_dataset`.
pub fn load_dataset(path: impl AsRef<std::path::Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    Dataset::from_text(&text)
}

/// Whitespace tokens with their 1-based byte columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_whitespace().map(move |t| {
        let col = t.as_ptr() as usize - line.as_ptr() as usize + 1;
        (col, t)
    })
}

fn parse_token<'a>(
    fields: &mut impl Iterator<Item = (usize, &'a str)>,
    line: &str,
    line_no: usize,
    what: &str,
) -> Result<&'a str> {
    fields.next().map(|(_, t)| t).ok_or_else(|| CoreError::Parse {
        line: line_no,
        column: line.len() + 1,
        reason: format!("missing {what} field"),
    })
}

fn parse_number<'a, T: FromStr>(
    fields: &mut impl Iterator<Item = (usize, &'a str)>,
    line: &str,
    line_no: usize,
    what: &str,
) -> Result<T> {
    let (col, t) = fields.next().ok_or_else(|| CoreError::Parse {
        line: line_no,
        column: line.len() + 1,
        reason: format!("missing {what} field"),
    })?;
    t.parse().map_err(|_| CoreError::Parse {
        line: line_no,
        column: col,
        reason: format!("invalid {what} `{t}`"),
    })
}

// ============================================================================
// Tests
// ============================================================================
