//! Stacked generalisation of calibrated sources and the no-co-data learner.
//!
//! The meta design holds, for every sample, linear predictors from models
//! that never saw that sample's fold: one column per retained source
//! (intercept dropped) and the `λ_min` / `λ_1se` columns of the no-co-data
//! cross-validation. Standard stacking regresses the target on these with
//! a non-negative lasso; simultaneous stacking fits the source columns
//! unpenalised next to the penalised raw features.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, filter_source, CalibratedSource, CalibrationConfig, CalibrationMethod, PriorEffects};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::glm::{link_inverse, Dataset, Family};
use crate::numerics::RngStream;
use crate::solver::{cv_fit, fit_path, CvFit, PenaltySpec};

/// Simultaneous stacking accepts at most this many retained sources.
pub const MAX_SIMULTANEOUS_SOURCES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackMode {
    Standard,
    Simultaneous,
}

impl StackMode {
    pub fn name(self) -> &'static str {
        match self {
            StackMode::Standard => "standard",
            StackMode::Simultaneous => "simultaneous",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            StackMode::Standard => "sta",
            StackMode::Simultaneous => "sim",
        }
    }
}

impl std::str::FromStr for StackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sta" | "standard" => Ok(StackMode::Standard),
            "sim" | "simultaneous" => Ok(StackMode::Simultaneous),
            other => Err(Error::InvalidParameter(format!("unknown stacking mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub mode: StackMode,
    pub method: CalibrationMethod,
    /// Elastic-net mix of the no-co-data learner (and of the raw features
    /// in simultaneous stacking).
    pub alpha_target: f64,
    pub folds: usize,
    /// Folds of the meta-learner's own cross-validation.
    pub meta_folds: usize,
    pub calibration: CalibrationConfig,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            mode: StackMode::Standard,
            method: CalibrationMethod::Exponential,
            alpha_target: 1.0,
            folds: 10,
            meta_folds: 10,
            calibration: CalibrationConfig::default(),
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_target) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha_target
            )));
        }
        if self.folds < 2 || self.meta_folds < 2 {
            return Err(Error::InvalidParameter("need at least 2 folds".into()));
        }
        self.calibration.validate()
    }
}

/// Cross-validated base-learner predictions.
#[derive(Clone, Debug)]
pub struct MetaDesign {
    /// `n × m'` held-out linear predictors of the retained sources, without intercepts.
    pub h0: Array2<f64>,
    pub h1_min: Array1<f64>,
    pub h1_1se: Array1<f64>,
    /// Names of the `h0` columns.
    pub labels: Vec<String>,
    /// Source index of each `h0` column.
    pub retained: Vec<usize>,
}

impl MetaDesign {
    pub fn n_retained(&self) -> usize {
        self.retained.len()
    }
}

/// Meta design together with the full-data fits needed for final coefficients.
#[derive(Clone, Debug)]
pub struct MetaArtifacts {
    pub meta: MetaDesign,
    /// Full-data calibrations of all sources, with filter results.
    pub sources: Vec<CalibratedSource>,
    /// Cross-validated no-co-data learner on the shared folds.
    pub base: CvFit,
    pub folds: FoldPlan,
}

/// Penalty of the no-co-data learner.
pub fn base_spec(p: usize, alpha_target: f64) -> PenaltySpec {
    PenaltySpec::elastic_net(p, alpha_target)
}

/// Build the meta design, fitting the no-co-data learner on `folds`.
pub fn build_meta_design(
    data: &Dataset,
    priors: &PriorEffects,
    folds: &FoldPlan,
    cfg: &StackConfig,
    rng: &RngStream,
) -> Result<MetaArtifacts> {
    let base = cv_fit(data, &base_spec(data.p(), cfg.alpha_target), folds)?;
    build_meta_design_with_base(data, priors, base, cfg, rng)
}

/// Build the meta design around an existing no-co-data cross-validation,
/// reusing its folds.
pub fn build_meta_design_with_base(
    data: &Dataset,
    priors: &PriorEffects,
    base: CvFit,
    cfg: &StackConfig,
    rng: &RngStream,
) -> Result<MetaArtifacts> {
    cfg.validate()?;
    if priors.p() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "prior effect rows",
            expected: data.p(),
            got: priors.p(),
        });
    }
    let folds = base.folds.clone();
    let cal_rng = rng.child("calibration");

    let sources: Vec<CalibratedSource> = (0..priors.m())
        .into_par_iter()
        .map(|k| {
            let cal = calibrate(
                data,
                priors.source(k),
                &priors.names()[k],
                cfg.method,
                &cfg.calibration,
                &cal_rng.child("full"),
            )?;
            filter_source(data, cal, cfg.calibration.filter)
        })
        .collect::<Result<_>>()?;
    let retained: Vec<usize> = (0..priors.m()).filter(|&k| sources[k].retained).collect();
    for s in &sources {
        log::debug!("source '{}': p = {:.4}, retained = {}", s.name, s.pvalue, s.retained);
    }

    let tasks: Vec<(usize, usize)> = (0..folds.k())
        .flat_map(|f| retained.iter().map(move |&k| (f, k)))
        .collect();
    let per_task: Vec<(Vec<usize>, Array1<f64>)> = tasks
        .par_iter()
        .map(|&(f, k)| {
            let train = data.subset(&folds.held_in(f))?;
            let test_rows = folds.held_out(f);
            let cal = calibrate(
                &train,
                priors.source(k),
                &priors.names()[k],
                cfg.method,
                &cfg.calibration,
                &cal_rng.child(format!("fold-{f}")),
            )?;
            let x_test = data.x().select(Axis(0), &test_rows);
            Ok((test_rows, cal.linear_predictor(x_test.view(), false)?))
        })
        .collect::<Result<_>>()?;

    let n = data.n();
    let mut h0 = Array2::zeros((n, retained.len()));
    for (t, &(_, k)) in tasks.iter().enumerate() {
        let col = retained.iter().position(|&r| r == k).expect("task source is retained");
        let (rows, eta) = &per_task[t];
        for (r, &i) in rows.iter().enumerate() {
            h0[[i, col]] = eta[r];
        }
    }
    let meta = MetaDesign {
        h0,
        h1_min: base.cv_eta.column(base.idx_min).to_owned(),
        h1_1se: base.cv_eta.column(base.idx_1se).to_owned(),
        labels: retained.iter().map(|&k| priors.names()[k].clone()).collect(),
        retained,
    };
    Ok(MetaArtifacts {
        meta,
        sources,
        base,
        folds,
    })
}

/// Fitted transfer-learning model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub family: Family,
    pub mode: StackMode,
    #[serde(rename = "calibration_method")]
    pub method: CalibrationMethod,
    /// Full-data calibrations of every source, retained or not.
    pub sources: Vec<CalibratedSource>,
    /// Meta intercept (standard) or joint-fit intercept (simultaneous).
    pub omega0: f64,
    /// One weight per source (0 for dropped sources); standard mode appends
    /// the `λ_min` and `λ_1se` weights.
    pub omega: Vec<f64>,
    /// Contribution of the directly estimated coefficients to `β*`.
    pub beta_direct: Vec<f64>,
    pub intercept_direct: f64,
    pub beta_star: Vec<f64>,
    pub intercept_star: f64,
    pub fold_seed: Option<u64>,
    pub meta_lambda: f64,
}

impl StackedModel {
    pub fn p(&self) -> usize {
        self.beta_star.len()
    }

    pub fn linear_predictor(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "feature columns",
                expected: self.p(),
                got: x.ncols(),
            });
        }
        Ok(x.dot(&Array1::from(self.beta_star.clone())) + self.intercept_star)
    }

    /// Predicted means: values (gaussian) or probabilities (binomial).
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let family = self.family;
        Ok(self.linear_predictor(x)?.mapv(|e| link_inverse(family, e)))
    }

    /// `Σ_k ω_k γ_k` over the sources.
    pub fn source_contribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.beta_direct.len()];
        for (s, &w) in self.sources.iter().zip(&self.omega) {
            if w != 0.0 {
                for (o, g) in out.iter_mut().zip(&s.gamma) {
                    *o += w * g;
                }
            }
        }
        out
    }
}

/// How the meta-learner's penalty is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetaLambda {
    /// Cross-validated `λ_min`.
    CvMin,
    /// A fixed index of the automatic path (0 = `λ_max`).
    PathIndex(usize),
}

fn meta_folds(data: &Dataset, cfg: &StackConfig, rng: &RngStream) -> Result<FoldPlan> {
    FoldPlan::for_dataset(data, cfg.meta_folds, &rng.child("meta-folds"))
}

fn select(data: &Dataset, spec: &PenaltySpec, cfg: &StackConfig, rng: &RngStream, choice: MetaLambda) -> Result<(usize, crate::solver::PathFit)> {
    match choice {
        MetaLambda::CvMin => {
            let folds = meta_folds(data, cfg, rng)?;
            let cv = cv_fit(data, spec, &folds)?;
            Ok((cv.idx_min, cv.path))
        }
        MetaLambda::PathIndex(l) => {
            let path = fit_path(data, spec)?;
            if l >= path.len() {
                return Err(Error::InvalidParameter(format!("path index {l} out of range")));
            }
            Ok((l, path))
        }
    }
}

/// Non-negative lasso on `[H0 | h1_min | h1_1se]`, `λ` by cross-validation.
pub fn fit_standard_stack(art: &MetaArtifacts, data: &Dataset, cfg: &StackConfig, rng: &RngStream) -> Result<StackedModel> {
    let meta = &art.meta;
    let n = data.n();
    let m_ret = meta.n_retained();
    let mut h = Array2::zeros((n, m_ret + 2));
    h.slice_mut(ndarray::s![.., ..m_ret]).assign(&meta.h0);
    h.column_mut(m_ret).assign(&meta.h1_min);
    h.column_mut(m_ret + 1).assign(&meta.h1_1se);
    let meta_data = data.with_features(h)?;
    let spec = PenaltySpec::new(m_ret + 2).with_bounds(vec![0.0; m_ret + 2], vec![f64::INFINITY; m_ret + 2]);
    let (l, path) = select(&meta_data, &spec, cfg, rng, MetaLambda::CvMin)?;
    let w = path.coef(l);

    let m = art.sources.len();
    let mut omega = vec![0.0; m + 2];
    for (c, &k) in meta.retained.iter().enumerate() {
        omega[k] = w[c];
    }
    omega[m] = w[m_ret];
    omega[m + 1] = w[m_ret + 1];

    let base = &art.base.path;
    let (imin, i1se) = (art.base.idx_min, art.base.idx_1se);
    let beta_direct: Vec<f64> = (0..data.p())
        .map(|j| omega[m] * base.coefs[[j, imin]] + omega[m + 1] * base.coefs[[j, i1se]])
        .collect();
    let intercept_direct = omega[m] * base.intercept(imin) + omega[m + 1] * base.intercept(i1se);
    assemble(art, data, cfg, StackMode::Standard, path.intercept(l), omega, beta_direct, intercept_direct, path.lambdas[l])
}

/// Joint fit on `[H0 | X]`: source weights unpenalised and non-negative,
/// raw features penalised with `alpha_target`.
pub fn fit_simultaneous_stack(
    art: &MetaArtifacts,
    data: &Dataset,
    cfg: &StackConfig,
    rng: &RngStream,
    choice: MetaLambda,
) -> Result<StackedModel> {
    let meta = &art.meta;
    let m_ret = meta.n_retained();
    if m_ret > MAX_SIMULTANEOUS_SOURCES {
        return Err(Error::Config(format!(
            "simultaneous stacking supports at most {MAX_SIMULTANEOUS_SOURCES} retained sources \
             ({m_ret} retained); use standard stacking"
        )));
    }
    let (n, p) = (data.n(), data.p());
    let mut joint = Array2::zeros((n, m_ret + p));
    joint.slice_mut(ndarray::s![.., ..m_ret]).assign(&meta.h0);
    joint.slice_mut(ndarray::s![.., m_ret..]).assign(&data.x());
    let joint_data = data.with_features(joint)?;
    let mut pf = vec![0.0; m_ret];
    pf.extend(std::iter::repeat(1.0).take(p));
    let mut lower = vec![0.0; m_ret];
    lower.extend(std::iter::repeat(f64::NEG_INFINITY).take(p));
    let spec = PenaltySpec::elastic_net(m_ret + p, cfg.alpha_target)
        .with_penalty_factors(pf)
        .with_bounds(lower, vec![f64::INFINITY; m_ret + p]);
    let (l, path) = select(&joint_data, &spec, cfg, rng, choice)?;
    let coef = path.coef(l);

    let m = art.sources.len();
    let mut omega = vec![0.0; m];
    for (c, &k) in meta.retained.iter().enumerate() {
        omega[k] = coef[c];
    }
    let beta_direct: Vec<f64> = (0..p).map(|j| coef[m_ret + j]).collect();
    assemble(art, data, cfg, StackMode::Simultaneous, path.intercept(l), omega, beta_direct, 0.0, path.lambdas[l])
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    art: &MetaArtifacts,
    data: &Dataset,
    cfg: &StackConfig,
    mode: StackMode,
    omega0: f64,
    omega: Vec<f64>,
    beta_direct: Vec<f64>,
    intercept_direct: f64,
    meta_lambda: f64,
) -> Result<StackedModel> {
    let mut model = StackedModel {
        family: data.family(),
        mode,
        method: cfg.method,
        sources: art.sources.clone(),
        omega0,
        omega,
        beta_direct,
        intercept_direct,
        beta_star: Vec::new(),
        intercept_star: omega0 + intercept_direct,
        fold_seed: art.folds.seed(),
        meta_lambda,
    };
    let contribution = model.source_contribution();
    model.beta_star = contribution.iter().zip(&model.beta_direct).map(|(a, b)| a + b).collect();
    Ok(model)
}

/// Everything a fit produces besides the model itself.
#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub sources: Vec<SourceReport>,
    pub retained: usize,
    pub base_lambda_min: f64,
    pub base_lambda_1se: f64,
    pub base_cv_loss_min: f64,
    pub meta_lambda: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SourceReport {
    pub name: String,
    pub pvalue: f64,
    pub retained: bool,
    pub omega: f64,
}

/// Full pipeline: folds, meta design and meta-learner.
pub fn fit_transfer(
    data: &Dataset,
    priors: &PriorEffects,
    cfg: &StackConfig,
    rng: &RngStream,
) -> Result<(StackedModel, FitReport)> {
    cfg.validate()?;
    let folds = FoldPlan::for_dataset(data, cfg.folds, &rng.child("folds"))?;
    let art = build_meta_design(data, priors, &folds, cfg, rng)?;
    let model = fit_from_artifacts(&art, data, cfg, rng)?;
    let report = report(&art, &model);
    Ok((model, report))
}

/// Meta-learner of the configured mode on prepared artifacts.
pub fn fit_from_artifacts(art: &MetaArtifacts, data: &Dataset, cfg: &StackConfig, rng: &RngStream) -> Result<StackedModel> {
    let meta_rng = rng.child("meta");
    match cfg.mode {
        StackMode::Standard => fit_standard_stack(art, data, cfg, &meta_rng),
        StackMode::Simultaneous => fit_simultaneous_stack(art, data, cfg, &meta_rng, MetaLambda::CvMin),
    }
}

pub fn report(art: &MetaArtifacts, model: &StackedModel) -> FitReport {
    FitReport {
        sources: art
            .sources
            .iter()
            .zip(&model.omega)
            .map(|(s, &w)| SourceReport {
                name: s.name.clone(),
                pvalue: s.pvalue,
                retained: s.retained,
                omega: w,
            })
            .collect(),
        retained: art.meta.n_retained(),
        base_lambda_min: art.base.lambda_min(),
        base_lambda_1se: art.base.lambda_1se(),
        base_cv_loss_min: art.base.cv_loss_mean[art.base.idx_min],
        meta_lambda: model.meta_lambda,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::rescale_prior;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn problem(n: usize, p: usize, seed: u64, family: Family) -> (Dataset, PriorEffects) {
        let rng = RngStream::new(seed, "stack-test");
        let mut g = rng.rng();
        let x = Array2::from_shape_fn((n, p), |_| g.sample::<f64, _>(StandardNormal));
        let beta: Array1<f64> = (0..p).map(|j| if j < p / 3 { 1.0 / (1.0 + j as f64) } else { 0.0 }).collect();
        let eta = x.dot(&beta);
        let y = match family {
            Family::Gaussian => eta.mapv(|e| e + 0.5 * g.sample::<f64, _>(StandardNormal)),
            Family::Binomial => eta.mapv(|e| if g.random::<f64>() < crate::glm::sigmoid(2.0 * e) { 1.0 } else { 0.0 }),
        };
        let good = beta.mapv(|b| b + 0.05 * g.sample::<f64, _>(StandardNormal));
        let noise: Array1<f64> = (0..p).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
        let mut z = Array2::zeros((p, 2));
        z.column_mut(0).assign(&good);
        z.column_mut(1).assign(&noise);
        (
            Dataset::new(x, y, family).unwrap(),
            PriorEffects::new(z, vec!["good".into(), "noise".into()]).unwrap(),
        )
    }

    #[test]
    fn beta_star_arithmetic() {
        // one source with γ_j = 0.2, β_min,j = 0.1, ω = (0.5, 0.4, 0)
        let mut model = StackedModel {
            family: Family::Gaussian,
            mode: StackMode::Standard,
            method: CalibrationMethod::Exponential,
            sources: vec![CalibratedSource {
                name: "s".into(),
                method: CalibrationMethod::Exponential,
                gamma: vec![0.2],
                alpha_k: 0.0,
                theta: Some(1.0),
                tau: Some(1.0),
                delta: None,
                lambda: None,
                inverted: false,
                deviance: 0.0,
                pvalue: 0.01,
                retained: true,
            }],
            omega0: 0.1,
            omega: vec![0.5, 0.4, 0.0],
            beta_direct: vec![0.4 * 0.1],
            intercept_direct: 0.0,
            beta_star: vec![],
            intercept_star: 0.1,
            fold_seed: None,
            meta_lambda: 0.0,
        };
        let c = model.source_contribution();
        model.beta_star = vec![c[0] + model.beta_direct[0]];
        assert!((model.beta_star[0] - 0.14).abs() < 1e-15);
        let pred = model.predict(array![[2.0]].view()).unwrap();
        assert!((pred[0] - (0.1 + 0.28)).abs() < 1e-15);
        model.beta_star = vec![0.0];
        assert_eq!(model.predict(array![[5.0], [-1.0]].view()).unwrap(), array![0.1, 0.1]);
    }

    #[test]
    fn standard_stack_flattening_identity() {
        let (data, priors) = problem(80, 15, 1, Family::Gaussian);
        let cfg = StackConfig::default();
        let rng = RngStream::new(1, "run");
        let folds = FoldPlan::for_dataset(&data, 10, &rng.child("folds")).unwrap();
        let art = build_meta_design(&data, &priors, &folds, &cfg, &rng).unwrap();
        let model = fit_standard_stack(&art, &data, &cfg, &rng).unwrap();
        assert!(model.omega.iter().all(|&w| w >= 0.0));
        assert!(art.sources[0].retained);

        // meta-level prediction from full-data base learners
        let m = art.sources.len();
        let base = &art.base.path;
        let mut meta_pred = Array1::from_elem(data.n(), model.omega0);
        for k in 0..m {
            meta_pred = meta_pred + art.sources[k].linear_predictor(data.x(), false).unwrap() * model.omega[k];
        }
        for (slot, idx) in [(m, art.base.idx_min), (m + 1, art.base.idx_1se)] {
            let eta = crate::solver::predict_linear(base, idx, data.x()).unwrap();
            meta_pred = meta_pred + eta * model.omega[slot];
        }
        let flat = model.linear_predictor(data.x()).unwrap();
        for (a, b) in meta_pred.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-8);
        }
        // dropped sources contribute nothing
        for (s, &w) in model.sources.iter().zip(&model.omega) {
            if !s.retained {
                assert_eq!(w, 0.0);
            }
        }
    }

    #[test]
    fn zero_source_is_filtered_and_stacking_degrades() {
        let (data, _) = problem(60, 9, 2, Family::Gaussian);
        let priors = PriorEffects::new(Array2::zeros((9, 1)), vec!["zero".into()]).unwrap();
        let cfg = StackConfig::default();
        let rng = RngStream::new(2, "run");
        let folds = FoldPlan::for_dataset(&data, 10, &rng).unwrap();
        let art = build_meta_design(&data, &priors, &folds, &cfg, &rng).unwrap();
        assert_eq!(art.meta.n_retained(), 0);
        let model = fit_standard_stack(&art, &data, &cfg, &rng).unwrap();
        assert_eq!(model.omega[0], 0.0);
        // only the two no-co-data columns remain
        let base = &art.base.path;
        let manual = crate::solver::predict_linear(base, art.base.idx_min, data.x()).unwrap() * model.omega[1]
            + crate::solver::predict_linear(base, art.base.idx_1se, data.x()).unwrap() * model.omega[2]
            + model.omega0;
        let pred = model.predict(data.x()).unwrap();
        for (a, b) in manual.iter().zip(&pred) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn simultaneous_limits() {
        let (data, priors) = problem(70, 12, 3, Family::Gaussian);
        let cfg = StackConfig {
            mode: StackMode::Simultaneous,
            ..Default::default()
        };
        let rng = RngStream::new(3, "run");
        let folds = FoldPlan::for_dataset(&data, 10, &rng).unwrap();
        let one = PriorEffects::new(priors.z().slice(ndarray::s![.., ..1]).to_owned(), vec!["good".into()]).unwrap();
        let art = build_meta_design(&data, &one, &folds, &cfg, &rng).unwrap();
        assert_eq!(art.meta.n_retained(), 1);
        let at_max = fit_simultaneous_stack(&art, &data, &cfg, &rng, MetaLambda::PathIndex(0)).unwrap();
        assert!(at_max.beta_direct.iter().all(|&b| b.abs() < 1e-12));
        let w = at_max.omega[0];
        assert!(w > 0.0);
        for (b, g) in at_max.beta_star.iter().zip(&art.sources[0].gamma) {
            assert!((b - w * g).abs() < 1e-6);
        }

        // with no retained source the joint fit is the plain learner
        let empty = PriorEffects::new(Array2::zeros((12, 0)), vec![]).unwrap();
        let art0 = build_meta_design(&data, &empty, &folds, &cfg, &rng).unwrap();
        let sim0 = fit_simultaneous_stack(&art0, &data, &cfg, &rng, MetaLambda::CvMin).unwrap();
        let plain_folds = FoldPlan::for_dataset(&data, 10, &rng.child("meta-folds")).unwrap();
        let plain = cv_fit(&data, &base_spec(12, 1.0), &plain_folds).unwrap();
        for j in 0..12 {
            assert!((sim0.beta_star[j] - plain.path.coefs[[j, plain.idx_min]]).abs() < 1e-8);
        }
        assert!((sim0.intercept_star - plain.path.intercept(plain.idx_min)).abs() < 1e-8);
    }

    #[test]
    fn simultaneous_guard() {
        let (data, _) = problem(60, 6, 4, Family::Gaussian);
        let mut z = Array2::zeros((6, 11));
        for k in 0..11 {
            z.column_mut(k).assign(&rescale_prior(data.x().row(k).view()).0);
        }
        let mut art = {
            let priors = PriorEffects::from_matrix(z).unwrap();
            let cfg = StackConfig {
                calibration: CalibrationConfig {
                    filter: false,
                    ..Default::default()
                },
                ..Default::default()
            };
            let folds = FoldPlan::for_dataset(&data, 5, &RngStream::new(1, "f")).unwrap();
            build_meta_design(&data, &priors, &folds, &cfg, &RngStream::new(1, "r")).unwrap()
        };
        art.meta.retained = (0..11).collect();
        art.meta.h0 = Array2::zeros((60, 11));
        let err = fit_simultaneous_stack(&art, &data, &StackConfig::default(), &RngStream::new(1, "m"), MetaLambda::CvMin)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn binomial_pipeline_runs() {
        let (data, priors) = problem(120, 12, 5, Family::Binomial);
        for mode in [StackMode::Standard, StackMode::Simultaneous] {
            let cfg = StackConfig {
                mode,
                method: CalibrationMethod::Isotonic,
                ..Default::default()
            };
            let (model, report) = fit_transfer(&data, &priors, &cfg, &RngStream::new(5, "run")).unwrap();
            let prob = model.predict(data.x()).unwrap();
            assert!(prob.iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(report.sources.len(), 2);
        }
    }

    #[test]
    fn modes_parse() {
        assert_eq!("sta".parse::<StackMode>().unwrap(), StackMode::Standard);
        assert_eq!("Simultaneous".parse::<StackMode>().unwrap(), StackMode::Simultaneous);
        assert!("mix".parse::<StackMode>().is_err());
    }
}
