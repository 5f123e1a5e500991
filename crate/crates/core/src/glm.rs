//! Families, inverse links, deviance losses and residuals.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Identity link, squared-error loss.
    Gaussian,
    /// Logit link, Bernoulli log-likelihood.
    Binomial,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" => Ok(Family::Binomial),
            other => Err(Error::InvalidParameter(format!("unknown family '{other}'"))),
        }
    }
}

/// Logistic function, evaluated without overflow for large `|eta|`.
#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn link_inverse(family: Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian => eta,
        Family::Binomial => sigmoid(eta),
    }
}

#[inline]
fn clamp_prob(mu: f64) -> f64 {
    mu.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Per-sample deviance contribution.
#[inline]
pub fn unit_deviance(family: Family, y: f64, mu: f64) -> f64 {
    match family {
        Family::Gaussian => (y - mu) * (y - mu),
        Family::Binomial => {
            let mu = clamp_prob(mu);
            let mut d = 0.0;
            if y > 0.0 {
                d -= y * mu.ln();
            }
            if y < 1.0 {
                d -= (1.0 - y) * (1.0 - mu).ln();
            }
            2.0 * d
        }
    }
}

fn check_len(y: ArrayView1<f64>, mu: ArrayView1<f64>) -> Result<()> {
    if y.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            what: "fitted values",
            expected: y.len(),
            got: mu.len(),
        });
    }
    Ok(())
}

/// Mean deviance: squared error (gaussian) or `-2` times the mean Bernoulli
/// log-likelihood (binomial).
pub fn mean_deviance(family: Family, y: ArrayView1<f64>, mu: ArrayView1<f64>) -> Result<f64> {
    check_len(y, mu)?;
    if y.is_empty() {
        return Err(Error::Data("empty response vector".into()));
    }
    let total: f64 = y
        .iter()
        .zip(mu.iter())
        .map(|(&yi, &mi)| unit_deviance(family, yi, mi))
        .sum();
    Ok(total / y.len() as f64)
}

/// Absolute deviance residuals: `|y - mu|` or the square root of the
/// per-sample binomial deviance.
pub fn deviance_residuals(
    family: Family,
    y: ArrayView1<f64>,
    mu: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_len(y, mu)?;
    Ok(y.iter()
        .zip(mu.iter())
        .map(|(&yi, &mi)| match family {
            Family::Gaussian => (yi - mi).abs(),
            Family::Binomial => unit_deviance(family, yi, mi).max(0.0).sqrt(),
        })
        .collect())
}

/// Maximum-likelihood fitted mean of the intercept-only model (the sample mean).
pub fn intercept_only_mu(_family: Family, y: ArrayView1<f64>) -> f64 {
    y.sum() / y.len() as f64
}

/// Target, features and family.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    family: Family,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, family: Family) -> Result<Self> {
        let (n, p) = x.dim();
        if n == 0 {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if p == 0 {
            return Err(Error::Data("dataset has no features".into()));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "target length",
                expected: n,
                got: y.len(),
            });
        }
        if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value {v} at row {}, column {}",
                i + 1,
                j + 1
            )));
        }
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite target value at row {}", i + 1)));
            }
            if family == Family::Binomial && v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!(
                    "binomial target must be 0 or 1, found {v} at row {}",
                    i + 1
                )));
            }
        }
        Ok(Self { x, y, family })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.x.select(Axis(0), rows),
            self.y.select(Axis(0), rows),
            self.family,
        )
    }

    /// Same target and family with a different feature matrix.
    pub fn with_features(&self, x: Array2<f64>) -> Result<Self> {
        Self::new(x, self.y.clone(), self.family)
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.y.iter().filter(|&&v| v == 1.0).count();
        (self.n() - ones, ones)
    }
}
