//! Calibration of external prior effects to the target data.
//!
//! Each source supplies a signed prior effect per feature. Calibration maps
//! these to coefficients `γ` that fit the target while keeping either their
//! power-law shape (exponential) or their signs and order (isotonic). A
//! one-sided signed-rank test then decides whether the calibrated source
//! beats the intercept-only model.

mod exponential;
mod isotonic;
mod wilcoxon;

pub use exponential::{calibrate_exponential, signed_power, DEFAULT_TAU_GRID};
pub use isotonic::{back_transform, build_cumsum_design, calibrate_isotonic, CumsumDesign};
pub use wilcoxon::{wilcoxon_exact_less, wilcoxon_normal_less, wilcoxon_signed_rank_one_sided};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{deviance_residuals, intercept_only_mu, link_inverse, mean_deviance, Dataset, Family};
use crate::numerics::RngStream;

/// Filter significance level.
pub const FILTER_LEVEL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Exponential,
    Isotonic,
}

impl CalibrationMethod {
    pub fn name(self) -> &'static str {
        match self {
            CalibrationMethod::Exponential => "exponential",
            CalibrationMethod::Isotonic => "isotonic",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            CalibrationMethod::Exponential => "exp",
            CalibrationMethod::Isotonic => "iso",
        }
    }
}

impl std::fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp" | "exponential" => Ok(CalibrationMethod::Exponential),
            "iso" | "isotonic" => Ok(CalibrationMethod::Isotonic),
            other => Err(Error::InvalidParameter(format!("unknown calibration method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub tau_grid: Vec<f64>,
    /// Exponential: allow `θ < 0`. Isotonic: also fit the inverted
    /// constraints and keep the better in-sample fit.
    pub allow_inversion: bool,
    /// Elastic-net mix of the isotonic fit.
    pub iso_alpha: f64,
    /// Internal cross-validation folds for the isotonic penalty.
    pub iso_folds: usize,
    pub filter: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            tau_grid: DEFAULT_TAU_GRID.to_vec(),
            allow_inversion: false,
            iso_alpha: 0.95,
            iso_folds: 10,
            filter: true,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter(
                "tau grid must be a non-empty list of finite non-negative values".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.iso_alpha) {
            return Err(Error::InvalidParameter("isotonic alpha must lie in [0, 1]".into()));
        }
        if self.iso_folds < 2 {
            return Err(Error::InvalidParameter("isotonic calibration needs at least 2 folds".into()));
        }
        Ok(())
    }
}

/// `p × m` prior effects with one named column per source.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorEffects {
    z: Array2<f64>,
    names: Vec<String>,
}

impl PriorEffects {
    pub fn new(z: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != z.ncols() {
            return Err(Error::DimensionMismatch {
                what: "source names",
                expected: z.ncols(),
                got: names.len(),
            });
        }
        if let Some(((j, k), v)) = z.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite prior effect {v} for feature {} in source '{}'",
                j + 1,
                names[k]
            )));
        }
        Ok(Self { z, names })
    }

    /// Unnamed sources `source1..sourcem`.
    pub fn from_matrix(z: Array2<f64>) -> Result<Self> {
        let names = (1..=z.ncols()).map(|k| format!("source{k}")).collect();
        Self::new(z, names)
    }

    pub fn p(&self) -> usize {
        self.z.nrows()
    }

    pub fn m(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn source(&self, k: usize) -> ArrayView1<'_, f64> {
        self.z.column(k)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// `z / max|z|`; the flag is set when `z` is identically zero (returned unchanged).
pub fn rescale_prior(z: ArrayView1<f64>) -> (Array1<f64>, bool) {
    let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        (z.to_owned(), true)
    } else {
        (z.mapv(|v| v / scale), false)
    }
}

/// One calibrated source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSource {
    pub name: String,
    pub method: CalibrationMethod,
    /// Calibrated effects in original feature order.
    pub gamma: Vec<f64>,
    pub alpha_k: f64,
    pub theta: Option<f64>,
    pub tau: Option<f64>,
    /// Sign-constrained solution on the cumulative-sum design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    /// Penalty level of the isotonic fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Whether the inverted constraints gave the better fit.
    #[serde(default)]
    pub inverted: bool,
    /// In-sample mean deviance.
    #[serde(deserialize_with = "crate::model_io::real_or_nan")]
    pub deviance: f64,
    #[serde(deserialize_with = "crate::model_io::real_or_nan")]
    pub pvalue: f64,
    pub retained: bool,
}

impl CalibratedSource {
    /// A source whose calibrated effects are all zero: intercept-only fit.
    pub fn null(name: &str, method: CalibrationMethod, data: &Dataset) -> Self {
        let mu = intercept_only_mu(data.family(), data.y());
        let alpha_k = match data.family() {
            Family::Gaussian => mu,
            Family::Binomial => {
                let m = mu.clamp(1e-10, 1.0 - 1e-10);
                (m / (1.0 - m)).ln()
            }
        };
        let deviance = mean_deviance(
            data.family(),
            data.y(),
            Array1::from_elem(data.n(), link_inverse(data.family(), alpha_k)).view(),
        )
        .unwrap_or(f64::NAN);
        Self {
            name: name.to_string(),
            method,
            gamma: vec![0.0; data.p()],
            alpha_k,
            theta: matches!(method, CalibrationMethod::Exponential).then_some(0.0),
            tau: None,
            delta: None,
            lambda: None,
            inverted: false,
            deviance,
            pvalue: 1.0,
            retained: false,
        }
    }

    /// `Xγ`, plus `α_k` when `with_intercept`.
    pub fn linear_predictor(&self, x: ArrayView2<f64>, with_intercept: bool) -> Result<Array1<f64>> {
        if x.ncols() != self.gamma.len() {
            return Err(Error::DimensionMismatch {
                what: "feature columns",
                expected: self.gamma.len(),
                got: x.ncols(),
            });
        }
        let eta = x.dot(&ArrayView1::from(&self.gamma[..]));
        Ok(if with_intercept { eta + self.alpha_k } else { eta })
    }

    pub fn is_null(&self) -> bool {
        self.gamma.iter().all(|&g| g == 0.0)
    }
}

/// Calibrate one source with the chosen method. `z` is rescaled internally.
pub fn calibrate(
    data: &Dataset,
    z: ArrayView1<f64>,
    name: &str,
    method: CalibrationMethod,
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
    let (z, all_zero) = rescale_prior(z);
    if all_zero {
        return Ok(CalibratedSource::null(name, method, data));
    }
    let mut cal = match method {
        CalibrationMethod::Exponential => calibrate_exponential(data, z.view(), cfg)?,
        CalibrationMethod::Isotonic => calibrate_isotonic(data, z.view(), cfg, rng)?,
    };
    cal.name = name.to_string();
    Ok(cal)
}

/// Test whether the calibrated model's deviance residuals are smaller than
/// those of the intercept-only model; sets `pvalue` and `retained`.
pub fn filter_source(data: &Dataset, mut cal: CalibratedSource, apply: bool) -> Result<CalibratedSource> {
    let family = data.family();
    let mu_model = cal
        .linear_predictor(data.x(), true)?
        .mapv(|e| link_inverse(family, e));
    let mu0 = Array1::from_elem(data.n(), intercept_only_mu(family, data.y()));
    let r_model = deviance_residuals(family, data.y(), mu_model.view())?;
    let r_null = deviance_residuals(family, data.y(), mu0.view())?;
    let d: Vec<f64> = r_model.iter().zip(&r_null).map(|(a, b)| a - b).collect();
    cal.pvalue = if cal.is_null() { 1.0 } else { wilcoxon_signed_rank_one_sided(&d) };
    cal.retained = if apply {
        cal.pvalue <= FILTER_LEVEL
    } else {
        !cal.is_null()
    };
    Ok(cal)
}
