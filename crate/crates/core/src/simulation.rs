//! Benchmark data generators, evaluation metrics and the study runner.
//!
//! Two protocols are provided. The external one plants `s` causal features
//! of effect 0.5 and derives sources whose coefficients differ from the
//! target by `±h/p` (transferable) or misplace the causal set
//! (non-transferable). The internal one draws correlated coefficient
//! vectors, sparsifies them through a second correlated draw and bends two
//! of the three sources by a square and a square root. Prior effects are
//! always the cross-validated penalised coefficients of each source.

use std::io::Write;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{CalibrationMethod, PriorEffects};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::glm::{intercept_only_mu, link_inverse, mean_deviance, sigmoid, Dataset, Family};
use crate::numerics::{ar1_sample, cholesky_upper_dense, mvnormal_sample, CorrelationSpec, RngStream};
use crate::solver::{cv_fit, predict_linear, PenaltySpec};
use crate::stacking::{build_meta_design_with_base, fit_from_artifacts, base_spec, StackConfig, StackMode};

/// Feature correlation base of the external protocol.
pub const EXTERNAL_RHO_X: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalSimConfig {
    pub family: Family,
    /// Source/target coefficient difference scale.
    pub h: f64,
    /// Number of causal features.
    pub s: usize,
    pub k: usize,
    /// Transferable sources among the `k`.
    pub ka: usize,
    pub n_target: usize,
    pub n_source: usize,
    pub p: usize,
    pub n_test: usize,
    pub alpha_source: f64,
    pub alpha_target: f64,
}

impl ExternalSimConfig {
    /// `s = 50`, ridge for sources and target.
    pub fn dense(family: Family, ka: usize, h: f64) -> Self {
        Self {
            family,
            h,
            s: 50,
            k: 5,
            ka,
            n_target: 100,
            n_source: 150,
            p: 1000,
            n_test: 10_000,
            alpha_source: 0.0,
            alpha_target: 0.0,
        }
    }

    /// `s = 15`, elastic net 0.95 for sources, lasso for the target.
    pub fn sparse(family: Family, ka: usize, h: f64) -> Self {
        Self {
            s: 15,
            alpha_source: 0.95,
            alpha_target: 1.0,
            ..Self::dense(family, ka, h)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ka > self.k {
            return Err(Error::InvalidParameter(format!(
                "Ka = {} exceeds the number of sources {}",
                self.ka, self.k
            )));
        }
        if self.s == 0 || 3 * self.s > self.p {
            return Err(Error::InvalidParameter(format!(
                "s = {} must be positive and at most p/3 = {}",
                self.s,
                self.p / 3
            )));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter("h must be finite and non-negative".into()));
        }
        check_common(self.n_target, self.n_source, self.alpha_source, self.alpha_target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InternalSimConfig {
    pub family: Family,
    pub rho_x: f64,
    pub rho_beta: f64,
    /// Expected proportion of causal features.
    pub pi: f64,
    /// Signal weight.
    pub w: f64,
    pub n_target: usize,
    pub n_source: usize,
    pub p: usize,
    pub n_test: usize,
    pub alpha_source: f64,
    pub alpha_target: f64,
}

impl InternalSimConfig {
    /// `π = 0.2`, ridge for sources and target.
    pub fn dense(family: Family, rho_x: f64, rho_beta: f64, w: f64) -> Self {
        Self {
            family,
            rho_x,
            rho_beta,
            pi: 0.2,
            w,
            n_target: 100,
            n_source: 150,
            p: 1000,
            n_test: 10_000,
            alpha_source: 0.0,
            alpha_target: 0.0,
        }
    }

    /// `π = 0.05`, elastic net 0.95 for sources, lasso for the target.
    pub fn sparse(family: Family, rho_x: f64, rho_beta: f64, w: f64) -> Self {
        Self {
            pi: 0.05,
            alpha_source: 0.95,
            alpha_target: 1.0,
            ..Self::dense(family, rho_x, rho_beta, w)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::InvalidParameter(format!("w must lie in [0, 1], got {}", self.w)));
        }
        for (name, v) in [("rho_x", self.rho_x), ("rho_beta", self.rho_beta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::InvalidParameter(format!("pi must lie in (0, 1], got {}", self.pi)));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be positive".into()));
        }
        check_common(self.n_target, self.n_source, self.alpha_source, self.alpha_target)
    }
}

fn check_common(n_target: usize, n_source: usize, alpha_source: f64, alpha_target: f64) -> Result<()> {
    if n_target < 20 || n_source < 20 {
        return Err(Error::InvalidParameter(
            "target and source sample sizes must be at least 20".into(),
        ));
    }
    for a in [alpha_source, alpha_target] {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {a}")));
        }
    }
    Ok(())
}

/// One simulated target problem with source-derived priors.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub target_train: Dataset,
    pub target_test: Dataset,
    pub priors: PriorEffects,
    pub true_beta_target: Array1<f64>,
    /// True coefficients of each source.
    pub true_beta_sources: Vec<Array1<f64>>,
    /// Pearson correlation of each source's true coefficients with the target's.
    pub source_coef_correlations: Vec<f64>,
}

fn pearson(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn bernoulli_draws(prob: &Array1<f64>, rng: &RngStream) -> Array1<f64> {
    let mut g = rng.rng();
    prob.mapv(|p| if g.random::<f64>() < p { 1.0 } else { 0.0 })
}

fn gaussian_noise(n: usize, rng: &RngStream) -> Array1<f64> {
    let mut g = rng.rng();
    Array1::from_shape_fn(n, |_| g.sample::<f64, _>(StandardNormal))
}

/// Cross-validated (`λ_min`) coefficients of one source as its prior effects.
pub fn derive_prior(source: &Dataset, alpha: f64, rng: &RngStream) -> Result<Array1<f64>> {
    let folds = FoldPlan::for_dataset(source, 10, &rng.child("folds"))?;
    let cv = cv_fit(source, &PenaltySpec::elastic_net(source.p(), alpha), &folds)?;
    Ok(cv.path.coef(cv.idx_min).to_owned())
}

fn derive_priors(sources: &[Dataset], alpha: f64, rng: &RngStream) -> Result<PriorEffects> {
    let cols: Vec<Array1<f64>> = sources
        .par_iter()
        .enumerate()
        .map(|(k, d)| derive_prior(d, alpha, &rng.child(format!("source-{}", k + 1))))
        .collect::<Result<_>>()?;
    let p = sources.first().map_or(0, |d| d.p());
    let mut z = Array2::zeros((p, cols.len()));
    for (k, c) in cols.iter().enumerate() {
        z.column_mut(k).assign(c);
    }
    PriorEffects::new(z, (1..=cols.len()).map(|k| format!("source{k}")).collect())
}

/// External-protocol coefficients: target first, then the `k` sources
/// (transferable ones first).
pub fn external_coefficients(cfg: &ExternalSimConfig, rng: &RngStream) -> (Array1<f64>, Vec<Array1<f64>>) {
    let (p, s) = (cfg.p, cfg.s);
    let target = Array1::from_shape_fn(p, |j| if j < s { 0.5 } else { 0.0 });
    let mut sources = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let mut g = rng.child(format!("coef-{}", k + 1)).rng();
        let mut flip = || if g.random::<bool>() { -1.0 } else { 1.0 };
        let beta = if k < cfg.ka {
            let step = cfg.h / p as f64;
            Array1::from_shape_fn(p, |j| if j < s { 0.5 } else { 0.0 } + flip() * step)
        } else {
            let step = 2.0 * cfg.h / p as f64;
            let mut causal = vec![false; p];
            for c in causal.iter_mut().skip(s).take(s) {
                *c = true;
            }
            let mut rest: Vec<bool> = (0..p - 2 * s).map(|t| t < s).collect();
            rest.shuffle(&mut g);
            causal[2 * s..].copy_from_slice(&rest);
            let mut g2 = rng.child(format!("coef-{}/signs", k + 1)).rng();
            Array1::from_shape_fn(p, |j| {
                let sign = if g2.random::<bool>() { -1.0 } else { 1.0 };
                (if causal[j] { 0.5 } else { 0.0 }) + sign * step
            })
        };
        sources.push(beta);
    }
    (target, sources)
}

/// External protocol: AR(0.5) features, planted causal block, `Ka`
/// transferable and `K - Ka` non-transferable sources.
pub fn simulate_external(cfg: &ExternalSimConfig, rng: &RngStream) -> Result<SimOutput> {
    cfg.validate()?;
    let spec = CorrelationSpec::new(cfg.p, EXTERNAL_RHO_X)?;
    let (beta0, betas) = external_coefficients(cfg, &rng.child("coefficients"));

    let sources: Vec<Dataset> = betas
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let r = rng.child(format!("source-{}", k + 1));
            let x = ar1_sample(&r.child("x"), cfg.n_source, &spec)?;
            let eta = x.dot(b) + 0.5;
            let y = match cfg.family {
                Family::Gaussian => eta + gaussian_noise(cfg.n_source, &r.child("noise")),
                Family::Binomial => bernoulli_draws(&eta.mapv(sigmoid), &r.child("y")),
            };
            Dataset::new(x, y, cfg.family)
        })
        .collect::<Result<_>>()?;
    let priors = derive_priors(&sources, cfg.alpha_source, &rng.child("priors"))?;

    let target = |label: &str, n: usize| -> Result<Dataset> {
        let r = rng.child(label);
        let x = ar1_sample(&r.child("x"), n, &spec)?;
        let eta = x.dot(&beta0);
        let y = match cfg.family {
            Family::Gaussian => eta + gaussian_noise(n, &r.child("noise")),
            Family::Binomial => bernoulli_draws(&eta.mapv(sigmoid), &r.child("y")),
        };
        Dataset::new(x, y, cfg.family)
    };
    let target_train = target("target-train", cfg.n_target)?;
    let target_test = target("target-test", cfg.n_test.max(1))?;
    let correlations = betas.iter().map(|b| pearson(&beta0, b)).collect();
    Ok(SimOutput {
        target_train,
        target_test,
        priors,
        true_beta_target: beta0,
        true_beta_sources: betas,
        source_coef_correlations: correlations,
    })
}

/// Internal-protocol coefficient matrices, columns (target, source 1..3).
#[derive(Clone, Debug)]
pub struct InternalCoefficients {
    /// `B₁ ⊙ 1[B₂ > Φ⁻¹(1-π)]` before the source transforms.
    pub raw: Array2<f64>,
    /// Column 2 squared and column 3 square-rooted (sign kept).
    pub transformed: Array2<f64>,
}

/// Correlation between the four coefficient vectors: 0 with source 1,
/// `rho_beta` among target, source 2 and source 3.
fn coefficient_correlation(rho_beta: f64) -> Array2<f64> {
    let mut c = Array2::eye(4);
    for (a, b) in [(0, 2), (0, 3), (2, 3)] {
        c[[a, b]] = rho_beta;
        c[[b, a]] = rho_beta;
    }
    c
}

pub fn internal_coefficients(cfg: &InternalSimConfig, rng: &RngStream) -> Result<InternalCoefficients> {
    let r = cholesky_upper_dense(coefficient_correlation(cfg.rho_beta).view())?;
    let b1 = mvnormal_sample(&rng.child("b1"), cfg.p, r.view());
    let b2 = mvnormal_sample(&rng.child("b2"), cfg.p, r.view());
    let threshold = if cfg.pi >= 1.0 {
        f64::NEG_INFINITY
    } else {
        Normal::standard().inverse_cdf(1.0 - cfg.pi)
    };
    let mut raw = b1;
    raw.zip_mut_with(&b2, |a, &m| {
        if !(m > threshold) {
            *a = 0.0;
        }
    });
    let mut transformed = raw.clone();
    transformed.column_mut(2).mapv_inplace(|v| v.signum() * v * v);
    transformed.column_mut(3).mapv_inplace(|v| v.signum() * v.abs().sqrt());
    Ok(InternalCoefficients { raw, transformed })
}

/// Centre and scale to sample mean 0 and sample standard deviation 1.
pub fn standardize_scores(z: &Array1<f64>) -> Array1<f64> {
    let n = z.len() as f64;
    let m = z.sum() / n;
    let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd > 0.0 {
        z.mapv(|v| (v - m) / sd)
    } else {
        z.mapv(|v| v - m)
    }
}

fn internal_response(family: Family, score: &Array1<f64>, w: f64, rng: &RngStream) -> Array1<f64> {
    let noise = gaussian_noise(score.len(), rng);
    let eta = score * w.sqrt() + noise * (1.0 - w).sqrt();
    match family {
        Family::Gaussian => eta,
        // probabilities rounded to classes
        Family::Binomial => eta.mapv(|e| if link_inverse(family, e) > 0.5 { 1.0 } else { 0.0 }),
    }
}

/// Internal protocol: AR(`rho_x`) features, correlated sparse coefficients,
/// standardised scores mixed with noise at signal weight `w`.
pub fn simulate_internal(cfg: &InternalSimConfig, rng: &RngStream) -> Result<SimOutput> {
    cfg.validate()?;
    let spec = CorrelationSpec::new(cfg.p, cfg.rho_x)?;
    let coef = internal_coefficients(cfg, &rng.child("coefficients"))?;
    let b = &coef.transformed;

    let sources: Vec<Dataset> = (1..4)
        .map(|k| {
            let r = rng.child(format!("source-{k}"));
            let x = ar1_sample(&r.child("x"), cfg.n_source, &spec)?;
            let score = standardize_scores(&x.dot(&b.column(k)));
            let y = internal_response(cfg.family, &score, cfg.w, &r.child("noise"));
            Dataset::new(x, y, cfg.family)
        })
        .collect::<Result<_>>()?;
    let priors = derive_priors(&sources, cfg.alpha_source, &rng.child("priors"))?;

    // train and test rows share one standardisation of the target score
    let r = rng.child("target");
    let n_test = cfg.n_test.max(1);
    let x_train = ar1_sample(&r.child("x-train"), cfg.n_target, &spec)?;
    let x_test = ar1_sample(&r.child("x-test"), n_test, &spec)?;
    let x_all = concatenate(Axis(0), &[x_train.view(), x_test.view()]).expect("equal column counts");
    let score = standardize_scores(&x_all.dot(&b.column(0)));
    let y_all = internal_response(cfg.family, &score, cfg.w, &r.child("noise"));
    let target_train = Dataset::new(x_train, y_all.slice(s![..cfg.n_target]).to_owned(), cfg.family)?;
    let target_test = Dataset::new(x_test, y_all.slice(s![cfg.n_target..]).to_owned(), cfg.family)?;

    let beta0 = b.column(0).to_owned();
    let betas: Vec<Array1<f64>> = (1..4).map(|k| b.column(k).to_owned()).collect();
    let correlations = betas.iter().map(|v| pearson(&beta0, v)).collect();
    Ok(SimOutput {
        target_train,
        target_test,
        priors,
        true_beta_target: beta0,
        true_beta_sources: betas,
        source_coef_correlations: correlations,
    })
}

/// Test deviance as a percentage of the deviance of predicting the training mean.
pub fn relative_test_loss(family: Family, y_test: &Array1<f64>, predictions: &Array1<f64>, train_mean: f64) -> Result<f64> {
    let num = mean_deviance(family, y_test.view(), predictions.view())?;
    let constant = Array1::from_elem(y_test.len(), train_mean);
    let den = mean_deviance(family, y_test.view(), constant.view())?;
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric(
            "deviance of the mean prediction is zero".into(),
        ));
    }
    Ok(100.0 * num / den)
}

/// `P(score_pos > score_neg) + ½P(tie)` over all positive/negative pairs.
pub fn concordance_index(y: &[f64], score: &[f64]) -> Result<f64> {
    if y.len() != score.len() {
        return Err(Error::DimensionMismatch {
            what: "scores",
            expected: y.len(),
            got: score.len(),
        });
    }
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let n_pos = y.iter().filter(|&&v| v == 1.0).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("concordance needs both classes".into()));
    }
    // walk tie blocks in increasing score, counting negatives seen so far
    let mut below_neg = 0usize;
    let mut wins = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && score[idx[j + 1]] == score[idx[i]] {
            j += 1;
        }
        let block = &idx[i..=j];
        let pos = block.iter().filter(|&&t| y[t] == 1.0).count();
        let neg = block.len() - pos;
        wins += pos as f64 * (below_neg as f64 + 0.5 * neg as f64);
        below_neg += neg;
        i = j + 1;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    External(ExternalSimConfig),
    Internal(InternalSimConfig),
}

impl Scenario {
    pub fn protocol(&self) -> &'static str {
        match self {
            Scenario::External(_) => "external",
            Scenario::Internal(_) => "internal",
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Scenario::External(c) => c.family,
            Scenario::Internal(c) => c.family,
        }
    }

    fn alpha_target(&self) -> f64 {
        match self {
            Scenario::External(c) => c.alpha_target,
            Scenario::Internal(c) => c.alpha_target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::External(c) => c.validate(),
            Scenario::Internal(c) => c.validate(),
        }
    }

    pub fn simulate(&self, rng: &RngStream) -> Result<SimOutput> {
        match self {
            Scenario::External(c) => simulate_external(c, rng),
            Scenario::Internal(c) => simulate_internal(c, rng),
        }
    }
}

/// Method labels: the no-transfer baseline and the four transfer flavours.
pub const BASELINE: &str = "baseline";

pub fn method_label(method: CalibrationMethod, mode: StackMode) -> String {
    format!("{}.{}", method.short(), mode.short())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub protocol: String,
    pub family: String,
    pub n_test: usize,
    #[serde(rename = "Ka")]
    pub ka: Option<usize>,
    pub h: Option<f64>,
    pub s: Option<usize>,
    pub rho_x: f64,
    pub rho_beta: Option<f64>,
    pub pi: Option<f64>,
    pub w: Option<f64>,
    pub alpha_source: f64,
    pub alpha_target: f64,
    pub method: String,
    pub replicate: usize,
    pub relative_loss: f64,
    pub cindex: Option<f64>,
}

impl StudyRow {
    fn template(scenario: &Scenario) -> Self {
        let mut row = Self {
            protocol: scenario.protocol().into(),
            family: scenario.family().name().into(),
            n_test: 0,
            ka: None,
            h: None,
            s: None,
            rho_x: 0.0,
            rho_beta: None,
            pi: None,
            w: None,
            alpha_source: 0.0,
            alpha_target: 0.0,
            method: String::new(),
            replicate: 0,
            relative_loss: f64::NAN,
            cindex: None,
        };
        match scenario {
            Scenario::External(c) => {
                row.n_test = c.n_test;
                row.ka = Some(c.ka);
                row.h = Some(c.h);
                row.s = Some(c.s);
                row.rho_x = EXTERNAL_RHO_X;
                row.alpha_source = c.alpha_source;
                row.alpha_target = c.alpha_target;
            }
            Scenario::Internal(c) => {
                row.n_test = c.n_test;
                row.rho_x = c.rho_x;
                row.rho_beta = Some(c.rho_beta);
                row.pi = Some(c.pi);
                row.w = Some(c.w);
                row.alpha_source = c.alpha_source;
                row.alpha_target = c.alpha_target;
            }
        }
        row
    }
}

/// Which models a replicate evaluates.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyMethods {
    pub calibrations: Vec<CalibrationMethod>,
    pub modes: Vec<StackMode>,
}

impl Default for StudyMethods {
    fn default() -> Self {
        Self {
            calibrations: vec![CalibrationMethod::Exponential, CalibrationMethod::Isotonic],
            modes: vec![StackMode::Standard, StackMode::Simultaneous],
        }
    }
}

fn score_rows(
    scenario: &Scenario,
    replicate: usize,
    method: String,
    sim: &SimOutput,
    eta: &Array1<f64>,
) -> Result<StudyRow> {
    let family = scenario.family();
    let test = &sim.target_test;
    let mu = eta.mapv(|e| link_inverse(family, e));
    let train_mean = intercept_only_mu(family, sim.target_train.y());
    let y = test.y().to_owned();
    let mut row = StudyRow::template(scenario);
    row.n_test = test.n();
    row.method = method;
    row.replicate = replicate;
    row.relative_loss = relative_test_loss(family, &y, &mu, train_mean)?;
    if family == Family::Binomial {
        row.cindex = Some(concordance_index(y.as_slice().expect("contiguous"), eta.as_slice().expect("contiguous"))?);
    }
    Ok(row)
}

/// Simulate one replicate and score the baseline and every transfer flavour.
pub fn run_replicate(scenario: &Scenario, methods: &StudyMethods, seed: u64, replicate: usize) -> Result<Vec<StudyRow>> {
    let rng = RngStream::new(seed, format!("{}/replicate-{replicate}", scenario.protocol()));
    let sim = scenario.simulate(&rng.child("data"))?;
    let train = &sim.target_train;
    let x_test = sim.target_test.x();

    let folds = FoldPlan::for_dataset(train, 10, &rng.child("folds"))?;
    let base = cv_fit(train, &base_spec(train.p(), scenario.alpha_target()), &folds)?;
    let mut rows = vec![score_rows(
        scenario,
        replicate,
        BASELINE.into(),
        &sim,
        &predict_linear(&base.path, base.idx_min, x_test)?,
    )?];
    for &method in &methods.calibrations {
        let cfg = StackConfig {
            method,
            alpha_target: scenario.alpha_target(),
            ..Default::default()
        };
        let stack_rng = rng.child(method.short());
        let art = build_meta_design_with_base(train, &sim.priors, base.clone(), &cfg, &stack_rng)?;
        for &mode in &methods.modes {
            let cfg = StackConfig { mode, ..cfg.clone() };
            let model = fit_from_artifacts(&art, train, &cfg, &stack_rng)?;
            rows.push(score_rows(
                scenario,
                replicate,
                method_label(method, mode),
                &sim,
                &model.linear_predictor(x_test)?,
            )?);
        }
    }
    Ok(rows)
}

/// `reps` replicates in parallel; rows ordered by replicate, then method.
pub fn run_study(scenario: &Scenario, methods: &StudyMethods, reps: usize, seed: u64) -> Result<Vec<StudyRow>> {
    scenario.validate()?;
    let per_rep: Vec<Vec<StudyRow>> = (0..reps)
        .into_par_iter()
        .map(|r| run_replicate(scenario, methods, seed, r))
        .collect::<Result<_>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

pub const STUDY_COLUMNS: [&str; 16] = [
    "protocol",
    "family",
    "n_test",
    "Ka",
    "h",
    "s",
    "rho_x",
    "rho_beta",
    "pi",
    "w",
    "alpha_source",
    "alpha_target",
    "method",
    "replicate",
    "relative_loss",
    "cindex",
];

/// Results table with a header row even when there are no rows.
pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(STUDY_COLUMNS)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean relative loss per method label, in first-appearance order.
pub fn mean_loss_by_method(rows: &[StudyRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(m, _, _)| *m == r.method) {
            Some(e) => {
                e.1 += r.relative_loss;
                e.2 += 1;
            }
            None => out.push((r.method.clone(), r.relative_loss, 1)),
        }
    }
    out.into_iter().map(|(m, s, c)| (m, s / c as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_external(family: Family, ka: usize) -> ExternalSimConfig {
        ExternalSimConfig {
            p: 60,
            s: 5,
            n_target: 40,
            n_source: 50,
            n_test: 200,
            ..ExternalSimConfig::dense(family, ka, 5.0)
        }
    }

    #[test]
    fn external_coefficient_values() {
        let cfg = ExternalSimConfig::dense(Family::Gaussian, 3, 5.0);
        let (target, sources) = external_coefficients(&cfg, &RngStream::new(1, "c"));
        assert_eq!(target.iter().filter(|&&b| b != 0.0).count(), 50);
        assert!(target.iter().take(50).all(|&b| b == 0.5));
        for b in &sources[..3] {
            for j in 0..50 {
                assert!((b[j] - 0.495).abs() < 1e-12 || (b[j] - 0.505).abs() < 1e-12);
            }
            assert!(b.iter().skip(50).all(|v| (v.abs() - 0.005).abs() < 1e-12));
        }
        for b in &sources[3..] {
            let causal = b.iter().filter(|&&v| v > 0.25).count();
            assert_eq!(causal, 100);
            assert!(b.iter().take(50).all(|v| (v.abs() - 0.01).abs() < 1e-12));
            assert!(b.iter().skip(50).take(50).all(|&v| v > 0.25));
        }
        let all = ExternalSimConfig::dense(Family::Gaussian, 5, 5.0);
        let (_, sources) = external_coefficients(&all, &RngStream::new(1, "c"));
        assert!(sources.iter().all(|b| b.iter().take(50).all(|&v| v > 0.25)));
    }

    #[test]
    fn external_generator_is_deterministic() {
        let cfg = small_external(Family::Binomial, 2);
        let a = simulate_external(&cfg, &RngStream::new(3, "sim")).unwrap();
        let b = simulate_external(&cfg, &RngStream::new(3, "sim")).unwrap();
        assert_eq!(a.target_train.x(), b.target_train.x());
        assert_eq!(a.target_test.y(), b.target_test.y());
        assert_eq!(a.priors, b.priors);
        assert!(a.target_train.y().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(a.priors.m(), 5);
    }

    #[test]
    fn internal_coefficients_behave() {
        let cfg = InternalSimConfig {
            pi: 1.0,
            p: 1000,
            ..InternalSimConfig::dense(Family::Gaussian, 0.5, 0.99, 0.5)
        };
        let coef = internal_coefficients(&cfg, &RngStream::new(4, "b")).unwrap();
        assert!(coef.raw.iter().all(|&v| v != 0.0));
        let c = pearson(&coef.raw.column(0).to_owned(), &coef.raw.column(2).to_owned());
        assert!((c - 0.99).abs() < 0.05);
        let c1 = pearson(&coef.raw.column(0).to_owned(), &coef.raw.column(1).to_owned());
        assert!(c1.abs() < 0.1);
        for j in 0..1000 {
            let r = coef.raw[[j, 2]];
            assert_eq!(coef.transformed[[j, 2]], r.signum() * r * r);
        }
        let sparse = InternalSimConfig::sparse(Family::Gaussian, 0.5, 0.99, 0.5);
        let coef = internal_coefficients(&sparse, &RngStream::new(4, "b")).unwrap();
        let frac = coef.raw.column(0).iter().filter(|&&v| v != 0.0).count() as f64 / 1000.0;
        assert!((frac - 0.05).abs() < 0.025);
        let c = pearson(&coef.raw.column(0).to_owned(), &coef.raw.column(2).to_owned());
        assert!(c > 0.8);
    }

    #[test]
    fn standardised_scores_have_unit_sample_sd() {
        let z = array![1.0, 4.0, 2.0, 9.0, -3.0];
        let s = standardize_scores(&z);
        let n = s.len() as f64;
        let m = s.sum() / n;
        let sd = (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        // w = 0.3: sqrt(w)^2 + sqrt(1-w)^2 = 1
        let w: f64 = 0.3;
        assert!((w.sqrt().powi(2) + (1.0 - w).sqrt().powi(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn internal_binomial_uses_thresholded_classes() {
        let cfg = InternalSimConfig {
            p: 40,
            n_target: 30,
            n_source: 30,
            n_test: 50,
            ..InternalSimConfig::sparse(Family::Binomial, 0.9, 0.9, 0.9)
        };
        let out = simulate_internal(&cfg, &RngStream::new(1, "s")).unwrap();
        assert!(out.target_train.y().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(out.priors.m(), 3);
        assert!(InternalSimConfig { w: 1.5, ..cfg.clone() }.validate().is_err());
    }

    #[test]
    fn relative_loss_examples() {
        let y = array![0.0, 2.0];
        assert_eq!(relative_test_loss(Family::Gaussian, &y, &array![1.0, 1.0], 0.0).unwrap(), 50.0);
        assert_eq!(relative_test_loss(Family::Gaussian, &y, &y, 1.0).unwrap(), 0.0);
        assert_eq!(relative_test_loss(Family::Gaussian, &y, &array![1.0, 1.0], 1.0).unwrap(), 100.0);
        assert!(matches!(
            relative_test_loss(Family::Gaussian, &array![1.0, 1.0], &array![1.0, 1.0], 1.0),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn concordance_examples() {
        assert_eq!(concordance_index(&[1.0, 0.0, 1.0, 0.0], &[3.0, 2.0, 1.0, 1.0]).unwrap(), 0.625);
        assert_eq!(concordance_index(&[1.0, 1.0, 0.0], &[5.0, 4.0, 1.0]).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0, 0.0, 0.0], &[2.0, 2.0, 2.0]).unwrap(), 0.5);
        assert!(concordance_index(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn concordance_matches_pair_count() {
        let rng = RngStream::new(9, "c");
        let mut g = rng.rng();
        for _ in 0..20 {
            let n = 30;
            let y: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
            let s: Vec<f64> = (0..n).map(|_| (g.random::<f64>() * 5.0).floor()).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if y[i] == 1.0 && y[j] == 0.0 {
                        den += 1.0;
                        num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            assert!((concordance_index(&y, &s).unwrap() - num / den).abs() < 1e-14);
        }
    }

    #[test]
    fn study_csv_with_no_reps_has_header_only() {
        let scenario = Scenario::External(small_external(Family::Gaussian, 5));
        let rows = run_study(&scenario, &StudyMethods::default(), 0, 1).unwrap();
        let mut buf = Vec::new();
        write_study_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", STUDY_COLUMNS.join(",")));
    }

    #[test]
    fn small_study_runs_every_method() {
        let scenario = Scenario::External(small_external(Family::Gaussian, 5));
        let rows = run_study(&scenario, &StudyMethods::default(), 1, 7).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(labels, ["baseline", "exp.sta", "exp.sim", "iso.sta", "iso.sim"]);
        assert!(rows.iter().all(|r| r.relative_loss.is_finite() && r.cindex.is_none()));
        let mut buf = Vec::new();
        write_study_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().starts_with("external,gaussian,200,5,5.0,5,0.5,,,,0.0,0.0,baseline,0,"));
    }
}
