use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::{fit_path, fit_path_with_lambdas, predict_linear, PathFit, PenaltySpec};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::glm::{link_inverse, unit_deviance, Dataset, Family};

/// Cross-validated path.
#[derive(Clone, Debug)]
pub struct CvFit {
    /// Full-data fit on the shared lambda sequence.
    pub path: PathFit,
    pub folds: FoldPlan,
    /// `n × L` leave-fold-out linear predictors.
    pub cv_eta: Array2<f64>,
    pub cv_loss_mean: Vec<f64>,
    pub cv_loss_se: Vec<f64>,
    pub idx_min: usize,
    pub idx_1se: usize,
}

impl CvFit {
    pub fn lambda_min(&self) -> f64 {
        self.path.lambdas[self.idx_min]
    }

    pub fn lambda_1se(&self) -> f64 {
        self.path.lambdas[self.idx_1se]
    }
}

/// `(idx_min, idx_1se)` for losses along a decreasing lambda sequence.
///
/// `idx_min` is the first minimiser (largest lambda among ties); `idx_1se`
/// the smallest index whose loss is within one standard error of the minimum.
pub fn one_se_rule(mean: &[f64], se: &[f64]) -> (usize, usize) {
    let mut idx_min = 0;
    for (l, &m) in mean.iter().enumerate() {
        if m < mean[idx_min] {
            idx_min = l;
        }
    }
    let bound = mean[idx_min] + se[idx_min];
    let idx_1se = mean
        .iter()
        .position(|&m| m <= bound)
        .unwrap_or(idx_min)
        .min(idx_min);
    (idx_min, idx_1se)
}

/// K-fold cross-validation of the penalised path. Every fold is fitted on
/// the lambda sequence of the full-data fit; folds run in parallel.
pub fn cv_fit(data: &Dataset, spec: &PenaltySpec, folds: &FoldPlan) -> Result<CvFit> {
    if folds.n() != data.n() {
        return Err(Error::DimensionMismatch {
            what: "fold assignments",
            expected: data.n(),
            got: folds.n(),
        });
    }
    let path = fit_path(data, spec)?;
    let lambdas = path.lambdas.clone();
    let nl = lambdas.len();
    let family = data.family();

    let per_fold: Vec<(Vec<usize>, Array2<f64>)> = (0..folds.k())
        .into_par_iter()
        .map(|f| {
            let test = folds.held_out(f);
            let train = folds.held_in(f);
            let train_data = data.subset(&train)?;
            if family == Family::Binomial {
                let (zeros, ones) = train_data.class_counts();
                if zeros == 0 || ones == 0 {
                    return Err(Error::DegenerateFold(format!(
                        "training data without fold {} contains a single class",
                        f + 1
                    )));
                }
            }
            let fit = fit_path_with_lambdas(&train_data, spec, &lambdas)?;
            let x_test = data.x().select(Axis(0), &test);
            let mut eta = Array2::zeros((test.len(), nl));
            for l in 0..nl {
                eta.column_mut(l).assign(&predict_linear(&fit, l, x_test.view())?);
            }
            Ok((test, eta))
        })
        .collect::<Result<_>>()?;

    let n = data.n();
    let mut cv_eta = Array2::zeros((n, nl));
    let mut fold_loss = vec![vec![0.0; nl]; folds.k()];
    let mut fold_size = vec![0usize; folds.k()];
    for (f, (rows, eta)) in per_fold.iter().enumerate() {
        fold_size[f] = rows.len();
        for (t, &i) in rows.iter().enumerate() {
            cv_eta.row_mut(i).assign(&eta.row(t));
            for l in 0..nl {
                let mu = link_inverse(family, eta[[t, l]]);
                fold_loss[f][l] += unit_deviance(family, data.y()[i], mu);
            }
        }
        for l in 0..nl {
            fold_loss[f][l] /= rows.len() as f64;
        }
    }

    // fold-size weighted mean and standard error of the fold losses
    let k = folds.k() as f64;
    let mut cv_loss_mean = vec![0.0; nl];
    let mut cv_loss_se = vec![0.0; nl];
    for l in 0..nl {
        let mean: f64 = (0..folds.k())
            .map(|f| fold_size[f] as f64 * fold_loss[f][l])
            .sum::<f64>()
            / n as f64;
        let var: f64 = (0..folds.k())
            .map(|f| fold_size[f] as f64 * (fold_loss[f][l] - mean).powi(2))
            .sum::<f64>()
            / n as f64
            / (k - 1.0);
        cv_loss_mean[l] = mean;
        cv_loss_se[l] = var.sqrt();
    }
    let (idx_min, idx_1se) = one_se_rule(&cv_loss_mean, &cv_loss_se);
    Ok(CvFit {
        path,
        folds: folds.clone(),
        cv_eta,
        cv_loss_mean,
        cv_loss_se,
        idx_min,
        idx_1se,
    })
}
