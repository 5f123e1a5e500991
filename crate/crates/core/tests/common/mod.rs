//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use priorcal::RngStream;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix(n: usize, p: usize, rng: &RngStream) -> Array2<f64> {
    let mut g = rng.rng();
    Array2::from_shape_fn((n, p), |_| g.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(n: usize, rng: &RngStream) -> Array1<f64> {
    let mut g = rng.rng();
    Array1::from_shape_fn(n, |_| g.sample::<f64, _>(StandardNormal))
}

/// Population mean and standard deviation.
pub fn moments(v: ArrayView1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.sum() / n;
    (m, (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Minimiser of a convex quadratic `½vᵀHv + gᵀv` subject to `sign_t·(Cv)_t ≥ 0`,
/// found by enumerating every set of active constraints and solving the
/// equality-constrained KKT system of each face. Returns the feasible
/// stationary point with the lowest objective.
pub fn enumerate_active_sets(h: &DMatrix<f64>, g: &DVector<f64>, c: &DMatrix<f64>, sign: &[f64]) -> DVector<f64> {
    let dim = h.nrows();
    let m = c.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|t| mask >> t & 1 == 1).collect();
        let k = active.len();
        let mut kkt = DMatrix::zeros(dim + k, dim + k);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(h);
        for (r, &t) in active.iter().enumerate() {
            for col in 0..dim {
                kkt[(dim + r, col)] = c[(t, col)];
                kkt[(col, dim + r)] = c[(t, col)];
            }
        }
        let mut rhs = DVector::zeros(dim + k);
        rhs.rows_mut(0, dim).copy_from(&(-g));
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let v = sol.rows(0, dim).into_owned();
        let cv = c * &v;
        if (0..m).any(|t| sign[t] * cv[t] < -1e-12) {
            continue;
        }
        let obj = 0.5 * v.dot(&(h * &v)) + g.dot(&v);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, v));
        }
    }
    best.expect("origin face is always feasible").1
}

/// Isotonic calibration solved in coefficient space: intercept and sorted
/// effects `γ_(1) ≤ … ≤ γ_(q) ≤ 0 ≤ γ_(q+1) ≤ … ≤ γ_(p)` minimising
/// `(1/2n)‖y − a − Xγ‖² + λ Σ_t s_t (α|Δ_t| + (1−α)/2 s_t Δ_t²)` where `Δ_t`
/// is the t-th step of the staircase and `s_t` the population standard
/// deviation of the matching cumulative-sum column. `z` must be nonzero and
/// free of ties. Returns `(intercept, γ in original order)`.
pub fn isotonic_qp_oracle(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    z: ArrayView1<f64>,
    lambda: f64,
    alpha: f64,
) -> (f64, Vec<f64>) {
    let (n, p) = x.dim();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    let q = z.iter().filter(|&&v| v < 0.0).count();

    // step t as a linear map of (a, γ_sorted)
    let mut d = DMatrix::zeros(p, p + 1);
    for t in 0..p {
        d[(t, 1 + t)] = 1.0;
        if t + 1 < q {
            d[(t, 2 + t)] = -1.0;
        }
        if t > q {
            d[(t, t)] = -1.0;
        }
    }
    let sign: Vec<f64> = (0..p).map(|t| if t < q { -1.0 } else { 1.0 }).collect();

    // spreads of the cumulative sums
    let mut s = vec![0.0; p];
    for t in 0..p {
        let range: Vec<usize> = if t < q { (0..=t).collect() } else { (t..p).collect() };
        let col: Array1<f64> = (0..n).map(|i| range.iter().map(|&u| x[[i, order[u]]]).sum()).collect();
        s[t] = moments(col.view()).1;
    }

    let mut a = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        a[(i, 0)] = 1.0;
        for t in 0..p {
            a[(i, 1 + t)] = x[[i, order[t]]];
        }
    }
    let yv = DVector::from_iterator(n, y.iter().copied());
    let nf = n as f64;
    let mut h = a.transpose() * &a / nf;
    let mut g = -(a.transpose() * &yv) / nf;
    for t in 0..p {
        let row = d.row(t).transpose();
        h += &row * row.transpose() * (lambda * (1.0 - alpha) * s[t] * s[t]);
        g += &row * (lambda * alpha * s[t] * sign[t]);
    }
    let v = enumerate_active_sets(&h, &g, &d, &sign);
    let mut gamma = vec![0.0; p];
    for t in 0..p {
        gamma[order[t]] = v[1 + t];
    }
    (v[0], gamma)
}
