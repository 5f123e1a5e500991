use ndarray::{Array1, ArrayView1};

use super::{CalibratedSource, CalibrationConfig, CalibrationMethod};
use crate::error::Result;
use crate::glm::{link_inverse, mean_deviance, sigmoid, Dataset, Family};

/// Exponents tried for `τ`.
pub const DEFAULT_TAU_GRID: [f64; 10] = [
    0.0,
    0.125,
    0.25,
    0.5,
    std::f64::consts::FRAC_1_SQRT_2,
    1.0,
    std::f64::consts::SQRT_2,
    2.0,
    4.0,
    8.0,
];

/// `sign(z)·|z|^τ`, with `sign(0) = 0`.
#[inline]
pub fn signed_power(z: f64, tau: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z.signum() * z.abs().powf(tau)
    }
}

struct SimpleFit {
    alpha: f64,
    theta: f64,
    deviance: f64,
}

fn gaussian_fit(s: &Array1<f64>, y: ArrayView1<f64>, allow_negative: bool) -> (f64, f64) {
    let n = s.len() as f64;
    let sbar = s.sum() / n;
    let ybar = y.sum() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in s.iter().zip(y) {
        sxy += (a - sbar) * (b - ybar);
        sxx += (a - sbar) * (a - sbar);
    }
    let mut theta = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    if !allow_negative && theta < 0.0 {
        theta = 0.0;
    }
    (ybar - theta * sbar, theta)
}

fn logistic_nll(s: &Array1<f64>, y: ArrayView1<f64>, a: f64, t: f64) -> f64 {
    s.iter()
        .zip(y)
        .map(|(&si, &yi)| {
            let eta = a + t * si;
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            softplus - yi * eta
        })
        .sum()
}

/// Two-parameter logistic regression by damped Newton.
fn binomial_fit(s: &Array1<f64>, y: ArrayView1<f64>, allow_negative: bool) -> (f64, f64) {
    let n = s.len() as f64;
    let ybar = (y.sum() / n).clamp(1e-10, 1.0 - 1e-10);
    let a0 = (ybar / (1.0 - ybar)).ln();
    let (mut a, mut t) = (a0, 0.0);
    let spread = s.iter().fold(0.0f64, |m, v| m.max((v - s[0]).abs()));
    if spread == 0.0 {
        return (a0, 0.0);
    }
    let mut obj = logistic_nll(s, y, a, t);
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&si, &yi) in s.iter().zip(y) {
            let mu = sigmoid(a + t * si);
            let w = (mu * (1.0 - mu)).max(1e-12);
            g0 += mu - yi;
            g1 += (mu - yi) * si;
            h00 += w;
            h01 += w * si;
            h11 += w * si * si;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) {
            break;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let dt = (h00 * g1 - h01 * g0) / det;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nt) = (a - step * da, t - step * dt);
            let nobj = logistic_nll(s, y, na, nt);
            if nobj <= obj {
                a = na;
                t = nt;
                accepted = obj - nobj > 1e-14 * obj.max(1.0);
                obj = nobj;
                break;
            }
            step *= 0.5;
        }
        if !accepted || (step * da).abs().max((step * dt).abs() * spread) < 1e-10 {
            break;
        }
    }
    if !allow_negative && t < 0.0 {
        return (a0, 0.0);
    }
    (a, t)
}

fn fit_one(data: &Dataset, s: &Array1<f64>, allow_negative: bool) -> Result<SimpleFit> {
    let (alpha, theta) = match data.family() {
        Family::Gaussian => gaussian_fit(s, data.y(), allow_negative),
        Family::Binomial => binomial_fit(s, data.y(), allow_negative),
    };
    let mu = s.mapv(|si| link_inverse(data.family(), alpha + theta * si));
    let deviance = mean_deviance(data.family(), data.y(), mu.view())?;
    Ok(SimpleFit { alpha, theta, deviance })
}

/// Exponential calibration `γ_j = θ·sign(z_j)|z_j|^τ` with `θ ≥ 0` (unless
/// inversion is allowed) and `τ` chosen from the grid by in-sample deviance.
pub fn calibrate_exponential(
    data: &Dataset,
    z: ArrayView1<f64>,
    cfg: &CalibrationConfig,
) -> Result<CalibratedSource> {
    let mut best: Option<(f64, SimpleFit)> = None;
    for &tau in &cfg.tau_grid {
        let zt: Array1<f64> = z.mapv(|v| signed_power(v, tau));
        let s = data.x().dot(&zt);
        let fit = fit_one(data, &s, cfg.allow_inversion)?;
        if best.as_ref().is_none_or(|(_, b)| fit.deviance < b.deviance) {
            best = Some((tau, fit));
        }
    }
    let (tau, fit) = best.expect("tau grid is non-empty");
    let gamma = z.iter().map(|&v| fit.theta * signed_power(v, tau)).collect();
    Ok(CalibratedSource {
        name: String::new(),
        method: CalibrationMethod::Exponential,
        gamma,
        alpha_k: fit.alpha,
        theta: Some(fit.theta),
        tau: Some(tau),
        delta: None,
        lambda: None,
        inverted: fit.theta < 0.0,
        deviance: fit.deviance,
        pvalue: 1.0,
        retained: false,
    })
}
