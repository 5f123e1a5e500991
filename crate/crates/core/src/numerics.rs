//! Random streams, AR(1) Gaussian sampling and column standardisation.
//!
//! Every stochastic step in the crate draws from an [`RngStream`]: a
//! `(seed, label)` pair hashed into a ChaCha key. Streams for different
//! folds, sources or replicates are obtained with [`RngStream::child`], so
//! results never depend on the order in which worker threads run.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A labelled, reproducible random stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        Self {
            seed,
            label: label.into(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Derived stream; `parent/label`.
    pub fn child(&self, label: impl AsRef<str>) -> Self {
        Self {
            seed: self.seed,
            label: format!("{}/{}", self.label, label.as_ref()),
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.label.len() as u64).to_le_bytes());
        hasher.update(self.label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        ChaCha20Rng::from_seed(key)
    }
}

/// AR(1) correlation structure `Σ_ij = rho^|i-j|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationSpec {
    pub p: usize,
    pub rho: f64,
}

impl CorrelationSpec {
    pub fn new(p: usize, rho: f64) -> Result<Self> {
        let spec = Self { p, rho };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidParameter("correlation dimension p must be >= 1".into()));
        }
        if !self.rho.is_finite() || !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "AR(1) base rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Dense `Σ`. Only for small `p`.
    pub fn matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.p, self.p), |(i, j)| {
            self.rho.powi((i as i64 - j as i64).unsigned_abs() as i32)
        })
    }
}

/// Upper-triangular `R` with `RᵀR = Σ` for the AR(1) matrix, built from the
/// closed form (first row `rho^(j)`, remaining rows `sqrt(1-rho²)·rho^(j-i)`).
pub fn cholesky_upper(spec: &CorrelationSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let p = spec.p;
    let rho = spec.rho;
    let scale = (1.0 - rho * rho).sqrt();
    let mut r = Array2::zeros((p, p));
    for j in 0..p {
        r[[0, j]] = rho.powi(j as i32);
        for i in 1..=j {
            r[[i, j]] = scale * rho.powi((j - i) as i32);
        }
    }
    Ok(r)
}

/// Generic upper Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_upper_dense(sigma: ArrayView2<f64>) -> Result<Array2<f64>> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::DimensionMismatch {
            what: "square matrix columns",
            expected: p,
            got: sigma.ncols(),
        });
    }
    let mut r = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in i..p {
            let mut s = sigma[[i, j]];
            for k in 0..i {
                s -= r[[k, i]] * r[[k, j]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numerical("matrix is not positive definite".into()));
                }
                r[[i, i]] = s.sqrt();
            } else {
                r[[i, j]] = s / r[[i, i]];
            }
        }
    }
    Ok(r)
}

fn standard_normal_matrix(rng: &RngStream, n: usize, p: usize) -> Array2<f64> {
    let mut gen = rng.rng();
    let mut e = Array2::zeros((n, p));
    for v in e.iter_mut() {
        *v = StandardNormal.sample(&mut gen);
    }
    e
}

/// `X = E·R` with `E` an `n×p` matrix of iid standard Gaussians (row-major draw order).
pub fn mvnormal_sample(rng: &RngStream, n: usize, r: ArrayView2<f64>) -> Array2<f64> {
    let p = r.ncols();
    let e = standard_normal_matrix(rng, n, p);
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            let mut acc = 0.0;
            for l in 0..=j.min(r.nrows().saturating_sub(1)) {
                acc += e[[i, l]] * r[[l, j]];
            }
            x[[i, j]] = acc;
        }
    }
    x
}

/// Same draw as `mvnormal_sample(rng, n, cholesky_upper(spec))`, via the
/// recursion `x_j = rho·x_{j-1} + sqrt(1-rho²)·e_j`, in `O(np)`.
pub fn ar1_sample(rng: &RngStream, n: usize, spec: &CorrelationSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let p = spec.p;
    let rho = spec.rho;
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = standard_normal_matrix(rng, n, p);
    for mut row in x.rows_mut() {
        for j in 1..p {
            row[j] = rho * row[j - 1] + scale * row[j];
        }
    }
    Ok(x)
}

/// Column-standardised copy of a matrix.
#[derive(Clone, Debug)]
pub struct Standardized {
    pub x: Array2<f64>,
    pub means: Array1<f64>,
    /// Population standard deviations; exactly 0 for constant columns.
    pub sds: Array1<f64>,
    pub constant: Vec<bool>,
}

impl Standardized {
    pub fn unstandardize(&self) -> Array2<f64> {
        let mut out = self.x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.sds[j]);
            col.mapv_inplace(|v| if self.constant[j] { v + m } else { v * s + m });
        }
        out
    }
}

/// Mean and population standard deviation of a column; `sd = 0` marks a
/// (numerically) constant column.
pub(crate) fn column_moments(col: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = col.clone().sum::<f64>() / nf;
    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    let sd = var.sqrt();
    if sd == 0.0 || sd <= 1e-12 * mean.abs() {
        (mean, 0.0)
    } else {
        (mean, sd)
    }
}

/// Centre every column and scale it to unit population standard deviation.
/// Constant columns are centred only and flagged.
pub fn standardize_columns(x: ArrayView2<f64>) -> Standardized {
    let (n, p) = x.dim();
    let mut out = x.to_owned();
    let mut means = Array1::zeros(p);
    let mut sds = Array1::zeros(p);
    let mut constant = vec![false; p];
    for j in 0..p {
        let (m, s) = column_moments(x.column(j).iter().copied(), n);
        means[j] = m;
        sds[j] = s;
        constant[j] = s == 0.0;
        let mut col = out.column_mut(j);
        if s == 0.0 {
            col.mapv_inplace(|v| v - m);
        } else {
            col.mapv_inplace(|v| (v - m) / s);
        }
    }
    Standardized {
        x: out,
        means,
        sds,
        constant,
    }
}
