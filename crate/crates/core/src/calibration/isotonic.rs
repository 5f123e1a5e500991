//! Sign- and order-constrained calibration through cumulative sums.
//!
//! Sorting features by prior effect and summing columns outward from the
//! sign change turns the order constraints on `γ` into plain sign
//! constraints on the increments `δ`:
//! prefix sums for the `q` negative effects (`δ ≤ 0`) and suffix sums for
//! the rest (`δ ≥ 0`).

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{CalibratedSource, CalibrationConfig, CalibrationMethod};
use crate::error::{Error, Result};
use crate::folds::{effective_folds, FoldPlan};
use crate::glm::{link_inverse, mean_deviance, Dataset, Family};
use crate::numerics::RngStream;
use crate::solver::{cv_fit, PenaltySpec};

#[derive(Clone, Debug, PartialEq)]
pub struct CumsumDesign {
    /// Feature indices by increasing prior effect (stable on ties).
    pub ordering: Vec<usize>,
    /// Number of negative prior effects.
    pub q: usize,
    pub w: Array2<f64>,
}

pub fn build_cumsum_design(x: ArrayView2<f64>, z: ArrayView1<f64>) -> Result<CumsumDesign> {
    let (n, p) = x.dim();
    if z.len() != p {
        return Err(Error::DimensionMismatch {
            what: "prior effects",
            expected: p,
            got: z.len(),
        });
    }
    let mut ordering: Vec<usize> = (0..p).collect();
    ordering.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    let q = z.iter().filter(|&&v| v < 0.0).count();
    let mut w = Array2::zeros((n, p));
    for t in 0..q {
        let src = x.column(ordering[t]).to_owned();
        let mut col = w.column_mut(t);
        col.assign(&src);
        if t > 0 {
            let prev = w.column(t - 1).to_owned();
            w.column_mut(t).zip_mut_with(&prev, |a, b| *a += b);
        }
    }
    for t in (q..p).rev() {
        let src = x.column(ordering[t]).to_owned();
        w.column_mut(t).assign(&src);
        if t + 1 < p {
            let next = w.column(t + 1).to_owned();
            w.column_mut(t).zip_mut_with(&next, |a, b| *a += b);
        }
    }
    Ok(CumsumDesign { ordering, q, w })
}

/// Effects in sorted order from increments:
/// `γ_(t) = Σ_{l=t}^{q-1} δ_l` for `t < q` and `γ_(t) = Σ_{l=q}^{t} δ_l` otherwise.
pub fn back_transform(delta: &[f64], q: usize) -> Vec<f64> {
    let p = delta.len();
    let mut gamma = vec![0.0; p];
    let mut acc = 0.0;
    for t in (0..q).rev() {
        acc += delta[t];
        gamma[t] = acc;
    }
    acc = 0.0;
    for t in q..p {
        acc += delta[t];
        gamma[t] = acc;
    }
    gamma
}

struct SignFit {
    alpha: f64,
    /// Effects per original feature.
    gamma: Vec<f64>,
    delta: Vec<f64>,
    lambda: f64,
    deviance: f64,
}

fn fit_constrained(data: &Dataset, z: ArrayView1<f64>, cfg: &CalibrationConfig, rng: &RngStream) -> Result<SignFit> {
    let n = data.n();
    let mut nonzero: Vec<usize> = (0..data.p()).filter(|&j| z[j] != 0.0).collect();
    nonzero.sort_by(|&a, &b| z[a].total_cmp(&z[b]));

    // tied effects share one coefficient: their columns are summed
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for &j in &nonzero {
        match groups.last_mut() {
            Some((v, members)) if *v == z[j] => members.push(j),
            _ => groups.push((z[j], vec![j])),
        }
    }
    let g = groups.len();
    let mut xg = Array2::zeros((n, g));
    for (t, (_, members)) in groups.iter().enumerate() {
        for &j in members {
            let col = data.x().column(j).to_owned();
            xg.column_mut(t).zip_mut_with(&col, |a, b| *a += b);
        }
    }
    let zg: Vec<f64> = groups.iter().map(|(v, _)| *v).collect();
    let design = build_cumsum_design(xg.view(), ArrayView1::from(&zg[..]))?;
    let q = design.q;

    let lower: Vec<f64> = (0..g).map(|t| if t < q { f64::NEG_INFINITY } else { 0.0 }).collect();
    let upper: Vec<f64> = (0..g).map(|t| if t < q { 0.0 } else { f64::INFINITY }).collect();
    let spec = PenaltySpec::elastic_net(g, cfg.iso_alpha).with_bounds(lower, upper);
    let wdata = data.with_features(design.w)?;

    let mut k = effective_folds(n, cfg.iso_folds);
    if data.family() == Family::Binomial {
        let (zeros, ones) = data.class_counts();
        k = k.min(zeros.min(ones));
        if k < 2 {
            return Err(Error::DegenerateFold(
                "isotonic calibration needs at least two samples of each class".into(),
            ));
        }
    }
    let folds = FoldPlan::for_dataset(&wdata, k, rng)?;
    let cv = cv_fit(&wdata, &spec, &folds)?;
    let l = cv.idx_min;
    let delta_sorted = cv.path.coef(l).to_vec();
    let alpha = cv.path.intercept(l);
    let lambda = cv.path.lambdas[l];

    // grouped order equals sorted order, so `ordering` is the identity here
    let gamma_sorted = back_transform(&delta_sorted, q);
    let mut gamma = vec![0.0; data.p()];
    for (t, &pos) in design.ordering.iter().enumerate() {
        for &j in &groups[pos].1 {
            gamma[j] = gamma_sorted[t];
        }
    }
    let eta = data.x().dot(&ArrayView1::from(&gamma[..])) + alpha;
    let mu = eta.mapv(|e| link_inverse(data.family(), e));
    let deviance = mean_deviance(data.family(), data.y(), mu.view())?;
    Ok(SignFit {
        alpha,
        gamma,
        delta: delta_sorted,
        lambda,
        deviance,
    })
}

/// Isotonic calibration of rescaled prior effects `z`. Features with
/// `z_j = 0` get `γ_j = 0`; tied effects get equal `γ`.
pub fn calibrate_isotonic(
    data: &Dataset,
    z: ArrayView1<f64>,
    cfg: &CalibrationConfig,
    rng: &RngStream,
) -> Result<CalibratedSource> {
    if z.len() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "prior effects",
            expected: data.p(),
            got: z.len(),
        });
    }
    if z.iter().all(|&v| v == 0.0) {
        return Ok(CalibratedSource::null("", CalibrationMethod::Isotonic, data));
    }
    let mut fit = fit_constrained(data, z, cfg, rng)?;
    let mut inverted = false;
    if cfg.allow_inversion {
        let neg = z.mapv(|v| -v);
        let alt = fit_constrained(data, neg.view(), cfg, &rng.child("inverted"))?;
        if alt.deviance < fit.deviance {
            fit = alt;
            inverted = true;
        }
    }
    Ok(CalibratedSource {
        name: String::new(),
        method: CalibrationMethod::Isotonic,
        gamma: fit.gamma,
        alpha_k: fit.alpha,
        theta: None,
        tau: None,
        delta: Some(fit.delta),
        lambda: Some(fit.lambda),
        inverted,
        deviance: fit.deviance,
        pvalue: 1.0,
        retained: false,
    })
}
