//! Elastic-net GLM solver with penalty factors and box constraints.
//!
//! For each lambda the solver minimises, on the standardised design,
//!
//! ```text
//! (1/n) Σ loss_i(b0, b) + λ Σ_j pf_j (α|b_j| + (1-α)/2 b_j²)   s.t.  lower_j ≤ β_j ≤ upper_j
//! ```
//!
//! with `loss = ½(y-η)²` (gaussian) or the Bernoulli negative log-likelihood
//! (binomial). Coefficients are reported on the original feature scale.

mod cv;
mod engine;

pub use cv::{cv_fit, one_se_rule, CvFit};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{sigmoid, Dataset, Family};
use engine::{logistic_loss, Engine, Problem, StdDesign};

/// `sign(z)·max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    /// Elastic-net mix: 1 = lasso, 0 = ridge.
    pub alpha: f64,
    /// Per-coefficient multipliers of lambda; 0 leaves a coefficient unpenalised.
    pub penalty_factors: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nlambda: usize,
    /// Smallest lambda as a fraction of lambda_max; `None` picks 0.01 when
    /// `n < p` and 1e-4 otherwise.
    pub lambda_min_ratio: Option<f64>,
    /// Convergence threshold on the largest coordinate change (standardised scale).
    pub tol: f64,
    pub max_sweeps: usize,
}

impl PenaltySpec {
    /// Lasso over `p` unconstrained coefficients with unit penalty factors.
    pub fn new(p: usize) -> Self {
        Self {
            alpha: 1.0,
            penalty_factors: vec![1.0; p],
            lower: vec![f64::NEG_INFINITY; p],
            upper: vec![f64::INFINITY; p],
            nlambda: 100,
            lambda_min_ratio: None,
            tol: 1e-7,
            max_sweeps: 100_000,
        }
    }

    pub fn elastic_net(p: usize, alpha: f64) -> Self {
        Self::new(p).with_alpha(alpha)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_penalty_factors(mut self, pf: Vec<f64>) -> Self {
        self.penalty_factors = pf;
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_nlambda(mut self, nlambda: usize) -> Self {
        self.nlambda = nlambda;
        self
    }

    pub fn with_lambda_min_ratio(mut self, ratio: f64) -> Self {
        self.lambda_min_ratio = Some(ratio);
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn p(&self) -> usize {
        self.penalty_factors.len()
    }

    pub fn min_ratio_for(&self, n: usize, p: usize) -> f64 {
        self.lambda_min_ratio
            .unwrap_or(if n < p { 0.01 } else { 1e-4 })
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "elastic-net alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        for (what, len) in [
            ("penalty factors", self.penalty_factors.len()),
            ("lower bounds", self.lower.len()),
            ("upper bounds", self.upper.len()),
        ] {
            if len != p {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: p,
                    got: len,
                });
            }
        }
        if let Some(j) = self.penalty_factors.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "penalty factor {} must be finite and non-negative",
                j + 1
            )));
        }
        for j in 0..p {
            if !(self.lower[j] <= 0.0 && self.upper[j] >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "bounds of coefficient {} must satisfy lower <= 0 <= upper",
                    j + 1
                )));
            }
        }
        if self.nlambda == 0 {
            return Err(Error::InvalidParameter("nlambda must be positive".into()));
        }
        if let Some(r) = self.lambda_min_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "lambda_min_ratio must lie in (0, 1], got {r}"
                )));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Solutions along a decreasing lambda sequence, on the original scale.
#[derive(Clone, Debug)]
pub struct PathFit {
    pub lambdas: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// `p × L`.
    pub coefs: Array2<f64>,
    pub spec: PenaltySpec,
    pub family: Family,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl PathFit {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn p(&self) -> usize {
        self.coefs.nrows()
    }

    pub fn coef(&self, l: usize) -> ArrayView1<'_, f64> {
        self.coefs.column(l)
    }

    pub fn intercept(&self, l: usize) -> f64 {
        self.intercepts[l]
    }
}

fn check_binomial(data: &Dataset) -> Result<()> {
    if data.family() == Family::Binomial {
        let (zeros, ones) = data.class_counts();
        if zeros == 0 || ones == 0 {
            return Err(Error::DegenerateResponse(
                "binomial response contains a single class".into(),
            ));
        }
    }
    Ok(())
}

fn standardised_bounds(spec: &PenaltySpec, design: &StdDesign) -> (Vec<f64>, Vec<f64>) {
    let mut lower = Vec::with_capacity(design.p);
    let mut upper = Vec::with_capacity(design.p);
    for j in 0..design.p {
        let s = design.sds[j];
        if s == 0.0 {
            lower.push(0.0);
            upper.push(0.0);
        } else {
            lower.push(if spec.lower[j] == 0.0 { 0.0 } else { spec.lower[j] * s });
            upper.push(if spec.upper[j] == 0.0 { 0.0 } else { spec.upper[j] * s });
        }
    }
    (lower, upper)
}

fn problem<'a>(design: &'a StdDesign, y: &'a [f64], family: Family, spec: &'a PenaltySpec) -> Problem<'a> {
    let (lower, upper) = standardised_bounds(spec, design);
    Problem {
        design,
        y,
        family,
        alpha: spec.alpha,
        pf: &spec.penalty_factors,
        lower,
        upper,
        tol: spec.tol,
        max_sweeps: spec.max_sweeps,
    }
}

/// Fit the whole path from lambda_max down to `lambda_min_ratio · lambda_max`.
pub fn fit_path(data: &Dataset, spec: &PenaltySpec) -> Result<PathFit> {
    fit_path_impl(data, spec, None)
}

/// Fit the path on a caller-supplied decreasing lambda sequence.
pub fn fit_path_with_lambdas(data: &Dataset, spec: &PenaltySpec, lambdas: &[f64]) -> Result<PathFit> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda sequence".into()));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter("lambdas must be finite and non-negative".into()));
    }
    fit_path_impl(data, spec, Some(lambdas))
}

fn fit_path_impl(data: &Dataset, spec: &PenaltySpec, lambdas: Option<&[f64]>) -> Result<PathFit> {
    spec.validate(data.p())?;
    check_binomial(data)?;
    let design = StdDesign::new(data.x());
    let y = data.y().to_vec();
    let min_ratio = spec.min_ratio_for(data.n(), data.p());
    let engine = Engine::new(problem(&design, &y, data.family(), spec));
    let sol = engine.run_path(lambdas, spec.nlambda, min_ratio);
    if !sol.converged {
        log::warn!(
            "coordinate descent hit the sweep limit ({}) before converging",
            spec.max_sweeps
        );
    }
    let l = sol.lambdas.len();
    let p = data.p();
    let mut coefs = Array2::zeros((p, l));
    let mut intercepts = Vec::with_capacity(l);
    for (k, (b0, b)) in sol.intercepts.iter().zip(&sol.coefs).enumerate() {
        let mut shift = 0.0;
        for j in 0..p {
            if design.sds[j] > 0.0 {
                let beta = b[j] / design.sds[j];
                coefs[[j, k]] = beta;
                shift += beta * design.means[j];
            }
        }
        intercepts.push(b0 - shift);
    }
    Ok(PathFit {
        lambdas: sol.lambdas,
        intercepts,
        coefs,
        spec: spec.clone(),
        family: data.family(),
        means: design.means.clone(),
        sds: design.sds.clone(),
        sweeps: sol.sweeps,
        converged: sol.converged,
    })
}

/// `η = β₀ + Xβ` at path index `lambda_index`.
pub fn predict_linear(fit: &PathFit, lambda_index: usize, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.ncols() != fit.p() {
        return Err(Error::DimensionMismatch {
            what: "feature columns",
            expected: fit.p(),
            got: x.ncols(),
        });
    }
    if lambda_index >= fit.len() {
        return Err(Error::InvalidParameter(format!(
            "lambda index {lambda_index} out of range (path has {})",
            fit.len()
        )));
    }
    let beta = fit.coef(lambda_index);
    Ok(x.dot(&beta) + fit.intercept(lambda_index))
}

/// Per-coefficient standardisation scale of `x` as used by the solver.
fn scales(x: ArrayView2<f64>) -> Vec<f64> {
    StdDesign::new(x).sds
}

/// Penalised objective on the standardised scale for a solution given on the
/// original scale.
pub fn objective(data: &Dataset, spec: &PenaltySpec, lambda: f64, intercept: f64, beta: ArrayView1<f64>) -> f64 {
    let n = data.n() as f64;
    let eta = data.x().dot(&beta) + intercept;
    let loss: f64 = match data.family() {
        Family::Gaussian => eta.iter().zip(data.y()).map(|(e, y)| 0.5 * (y - e).powi(2)).sum::<f64>(),
        Family::Binomial => eta.iter().zip(data.y()).map(|(&e, &y)| logistic_loss(y, e)).sum::<f64>(),
    } / n;
    let sds = scales(data.x());
    let a = spec.alpha;
    let pen: f64 = (0..data.p())
        .map(|j| {
            let b = beta[j] * sds[j];
            spec.penalty_factors[j] * (a * b.abs() + 0.5 * (1.0 - a) * b * b)
        })
        .sum();
    loss + lambda * pen
}

/// Largest violation of the optimality conditions (standardised scale),
/// including the intercept score.
pub fn kkt_residual(data: &Dataset, spec: &PenaltySpec, lambda: f64, intercept: f64, beta: ArrayView1<f64>) -> f64 {
    let n = data.n() as f64;
    let design = StdDesign::new(data.x());
    let eta = data.x().dot(&beta) + intercept;
    let resid: Vec<f64> = eta
        .iter()
        .zip(data.y())
        .map(|(&e, &y)| match data.family() {
            Family::Gaussian => y - e,
            Family::Binomial => y - sigmoid(e),
        })
        .collect();
    let mut worst = (resid.iter().sum::<f64>() / n).abs();
    let (lower, upper) = standardised_bounds(spec, &design);
    for j in 0..data.p() {
        if !design.live(j) {
            continue;
        }
        let b = beta[j] * design.sds[j];
        let g = engine::dot(design.col(j), &resid) / n;
        let pen = if spec.penalty_factors[j] == 0.0 { 0.0 } else { lambda * spec.penalty_factors[j] };
        let l1 = pen * spec.alpha;
        // derivative of the smooth part
        let q = -g + pen * (1.0 - spec.alpha) * b;
        let near = |bound: f64| bound.is_finite() && (b - bound).abs() <= 1e-10 * bound.abs().max(1.0);
        let at_upper = near(upper[j]) && upper[j] > lower[j];
        let at_lower = near(lower[j]) && upper[j] > lower[j];
        let v = if upper[j] == lower[j] {
            0.0
        } else if at_upper {
            if upper[j] > 0.0 {
                (q + l1).max(0.0)
            } else {
                (q - l1).max(0.0)
            }
        } else if at_lower {
            if lower[j] < 0.0 {
                (-(q - l1)).max(0.0)
            } else {
                (-(q + l1)).max(0.0)
            }
        } else if b != 0.0 {
            (q + l1 * b.signum()).abs()
        } else {
            (q.abs() - l1).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Gaussian single-lambda fit that records the objective after every sweep.
#[doc(hidden)]
pub fn fit_gaussian_traced(data: &Dataset, spec: &PenaltySpec, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate(data.p())?;
    if data.family() != Family::Gaussian {
        return Err(Error::InvalidParameter("traced fit is gaussian-only".into()));
    }
    let design = StdDesign::new(data.x());
    let y = data.y().to_vec();
    let mut engine = Engine::new(problem(&design, &y, data.family(), spec));
    engine.trace = Some(Vec::new());
    engine.solve(lambda, false);
    let coefs = engine.coefs().to_vec();
    Ok((engine.trace.take().unwrap_or_default(), coefs))
}

#[cfg(test)]
mod tests;
