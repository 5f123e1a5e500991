//! Cyclic coordinate descent on a standardised design.
//!
//! The gaussian loss is solved directly; binomial runs an outer IRLS loop
//! whose weighted least-squares subproblems reuse the same kernel. Every
//! coordinate update is the exact minimiser of the one-dimensional
//! objective: soft-threshold, ridge shrink, then clamp to the box.

use ndarray::ArrayView2;

use super::soft_threshold;
use crate::glm::{sigmoid, Family};
use crate::numerics::column_moments;

pub(crate) const MIN_IRLS_WEIGHT: f64 = 1e-5;
const MAX_IRLS: usize = 100;
/// Binomial paths stop moving once this fraction of the null deviance is explained.
const SATURATION: f64 = 0.999;
/// Penalty mix used for lambda_max when alpha is (near) zero.
const RIDGE_ALPHA_FLOOR: f64 = 1e-3;

/// Column-major standardised copy of a design matrix.
pub(crate) struct StdDesign {
    pub n: usize,
    pub p: usize,
    cols: Vec<f64>,
    pub means: Vec<f64>,
    /// Zero for constant columns, which are excluded from fitting.
    pub sds: Vec<f64>,
}

impl StdDesign {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let (n, p) = x.dim();
        let mut cols = Vec::with_capacity(n * p);
        let mut means = Vec::with_capacity(p);
        let mut sds = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            let (m, s) = column_moments(col.iter().copied(), n);
            means.push(m);
            sds.push(s);
            if s == 0.0 {
                cols.extend(std::iter::repeat(0.0).take(n));
            } else {
                cols.extend(col.iter().map(|&v| (v - m) / s));
            }
        }
        Self {
            n,
            p,
            cols,
            means,
            sds,
        }
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn live(&self, j: usize) -> bool {
        self.sds[j] > 0.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn dot3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let n4 = a.len() / 4 * 4;
    let mut i = 0;
    while i < n4 {
        acc[0] += a[i] * b[i] * c[i];
        acc[1] += a[i + 1] * b[i + 1] * c[i + 1];
        acc[2] += a[i + 2] * b[i + 2] * c[i + 2];
        acc[3] += a[i + 3] * b[i + 3] * c[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < a.len() {
        tail += a[i] * b[i] * c[i];
        i += 1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Negative log-likelihood of one Bernoulli observation at linear predictor `eta`.
#[inline]
pub(crate) fn logistic_loss(y: f64, eta: f64) -> f64 {
    // log(1 + e^eta) - y*eta, stable for large |eta|
    let softplus = if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    };
    softplus - y * eta
}

pub(crate) struct Problem<'a> {
    pub design: &'a StdDesign,
    pub y: &'a [f64],
    pub family: Family,
    pub alpha: f64,
    pub pf: &'a [f64],
    /// Bounds on the standardised scale.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
}

pub(crate) struct PathSolution {
    pub lambdas: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// `L` standardised coefficient vectors.
    pub coefs: Vec<Vec<f64>>,
    pub sweeps: usize,
    pub converged: bool,
}

pub(crate) struct Engine<'a> {
    pb: Problem<'a>,
    b0: f64,
    b: Vec<f64>,
    w: Vec<f64>,
    r: Vec<f64>,
    v: Vec<f64>,
    v_fresh: Vec<bool>,
    wsum: f64,
    active: Vec<usize>,
    sweeps_this_lambda: usize,
    pub total_sweeps: usize,
    pub converged: bool,
    pub trace: Option<Vec<f64>>,
}

impl<'a> Engine<'a> {
    pub fn new(pb: Problem<'a>) -> Self {
        let n = pb.design.n;
        let p = pb.design.p;
        let ybar = pb.y.iter().sum::<f64>() / n as f64;
        let b0 = match pb.family {
            Family::Gaussian => ybar,
            Family::Binomial => {
                let m = ybar.clamp(1e-10, 1.0 - 1e-10);
                (m / (1.0 - m)).ln()
            }
        };
        let mut engine = Self {
            pb,
            b0,
            b: vec![0.0; p],
            w: vec![1.0; n],
            r: vec![0.0; n],
            v: vec![0.0; p],
            v_fresh: vec![false; p],
            wsum: n as f64,
            active: Vec::new(),
            sweeps_this_lambda: 0,
            total_sweeps: 0,
            converged: true,
            trace: None,
        };
        if engine.pb.family == Family::Gaussian {
            for (ri, yi) in engine.r.iter_mut().zip(engine.pb.y) {
                *ri = yi - b0;
            }
        }
        engine
    }

    pub fn coefs(&self) -> &[f64] {
        &self.b
    }

    #[inline]
    fn penalty_weight(&self, j: usize, lambda: f64) -> f64 {
        let pf = self.pb.pf[j];
        if pf == 0.0 {
            0.0
        } else {
            lambda * pf
        }
    }

    fn curvature(&mut self, j: usize) -> f64 {
        if !self.v_fresh[j] {
            let x = self.pb.design.col(j);
            let n = self.pb.design.n as f64;
            self.v[j] = match self.pb.family {
                Family::Gaussian => dot(x, x) / n,
                Family::Binomial => dot3(x, x, &self.w) / n,
            };
            self.v_fresh[j] = true;
        }
        self.v[j]
    }

    fn update_intercept(&mut self) -> f64 {
        let num = match self.pb.family {
            Family::Gaussian => self.r.iter().sum::<f64>(),
            Family::Binomial => dot(&self.w, &self.r),
        };
        let delta = num / self.wsum;
        if delta != 0.0 {
            self.b0 += delta;
            for ri in self.r.iter_mut() {
                *ri -= delta;
            }
        }
        delta.abs()
    }

    fn update_coordinate(&mut self, j: usize, lambda: f64) -> f64 {
        if !self.pb.design.live(j) {
            return 0.0;
        }
        let v = self.curvature(j);
        let n = self.pb.design.n as f64;
        let x = self.pb.design.col(j);
        let grad = match self.pb.family {
            Family::Gaussian => dot(x, &self.r) / n,
            Family::Binomial => dot3(x, &self.r, &self.w) / n,
        };
        let old = self.b[j];
        let z = grad + v * old;
        let pen = self.penalty_weight(j, lambda);
        let l1 = pen * self.pb.alpha;
        let l2 = pen * (1.0 - self.pb.alpha);
        let new = (soft_threshold(z, l1) / (v + l2)).clamp(self.pb.lower[j], self.pb.upper[j]);
        let delta = new - old;
        if delta != 0.0 {
            self.b[j] = new;
            axpy(-delta, x, &mut self.r);
        }
        delta.abs()
    }

    fn sweep(&mut self, set: Sweep, lambda: f64) -> f64 {
        let mut max_change = 0.0f64;
        match set {
            Sweep::All => {
                for j in 0..self.pb.design.p {
                    max_change = max_change.max(self.update_coordinate(j, lambda));
                }
            }
            Sweep::Unpenalised => {
                for j in 0..self.pb.design.p {
                    if self.pb.pf[j] == 0.0 {
                        max_change = max_change.max(self.update_coordinate(j, lambda));
                    }
                }
            }
            Sweep::Active => {
                for t in 0..self.active.len() {
                    let j = self.active[t];
                    max_change = max_change.max(self.update_coordinate(j, lambda));
                }
            }
        }
        max_change = max_change.max(self.update_intercept());
        self.sweeps_this_lambda += 1;
        self.total_sweeps += 1;
        if self.trace.is_some() {
            let obj = self.quadratic_objective(lambda);
            if let Some(t) = self.trace.as_mut() {
                t.push(obj);
            }
        }
        max_change
    }

    /// Objective of the current (weighted) least-squares subproblem.
    fn quadratic_objective(&self, lambda: f64) -> f64 {
        let n = self.pb.design.n as f64;
        let loss = match self.pb.family {
            Family::Gaussian => dot(&self.r, &self.r) / (2.0 * n),
            Family::Binomial => dot3(&self.r, &self.r, &self.w) / (2.0 * n),
        };
        loss + self.penalty(lambda)
    }

    fn penalty(&self, lambda: f64) -> f64 {
        let a = self.pb.alpha;
        self.b
            .iter()
            .enumerate()
            .map(|(j, &bj)| self.penalty_weight(j, lambda) * (a * bj.abs() + 0.5 * (1.0 - a) * bj * bj))
            .sum()
    }

    fn exhausted(&self) -> bool {
        self.sweeps_this_lambda >= self.pb.max_sweeps
    }

    /// Coordinate descent with active-set cycling until a full sweep moves
    /// no coordinate by more than `tol`.
    fn descend(&mut self, lambda: f64, null_only: bool) {
        loop {
            let full = if null_only { Sweep::Unpenalised } else { Sweep::All };
            if self.sweep(full, lambda) < self.pb.tol {
                return;
            }
            if self.exhausted() {
                self.converged = false;
                return;
            }
            self.active = (0..self.pb.design.p)
                .filter(|&j| self.b[j] != 0.0 && (!null_only || self.pb.pf[j] == 0.0))
                .collect();
            if self.pb.family == Family::Gaussian && self.trace.is_none() && 2 * self.active.len() <= self.pb.design.n {
                if !self.cycle_active_gram(lambda) {
                    self.converged = false;
                    return;
                }
                continue;
            }
            loop {
                if self.sweep(Sweep::Active, lambda) < self.pb.tol {
                    break;
                }
                if self.exhausted() {
                    self.converged = false;
                    return;
                }
            }
        }
    }

    /// Gaussian active-set cycling on the Gram matrix of the active columns.
    /// Columns are centred, so the intercept is unaffected; the residual is
    /// refreshed once at the end. False when the sweep budget runs out.
    fn cycle_active_gram(&mut self, lambda: f64) -> bool {
        let active = std::mem::take(&mut self.active);
        let m = active.len();
        let design = self.pb.design;
        let n = design.n as f64;
        let mut gram = vec![0.0; m * m];
        for s in 0..m {
            for t in 0..=s {
                let v = dot(design.col(active[s]), design.col(active[t])) / n;
                gram[s * m + t] = v;
                gram[t * m + s] = v;
            }
        }
        let mut grad: Vec<f64> = active.iter().map(|&j| dot(design.col(j), &self.r) / n).collect();
        let start: Vec<f64> = active.iter().map(|&j| self.b[j]).collect();
        let mut ok = true;
        loop {
            let mut max_change = 0.0f64;
            for s in 0..m {
                let j = active[s];
                let v = gram[s * m + s];
                let old = self.b[j];
                let pen = self.penalty_weight(j, lambda);
                let z = grad[s] + v * old;
                let new = (soft_threshold(z, pen * self.pb.alpha) / (v + pen * (1.0 - self.pb.alpha)))
                    .clamp(self.pb.lower[j], self.pb.upper[j]);
                let delta = new - old;
                if delta != 0.0 {
                    self.b[j] = new;
                    let row = &gram[s * m..(s + 1) * m];
                    axpy(-delta, row, &mut grad);
                }
                max_change = max_change.max(delta.abs());
            }
            self.sweeps_this_lambda += 1;
            self.total_sweeps += 1;
            if max_change < self.pb.tol {
                break;
            }
            if self.exhausted() {
                ok = false;
                break;
            }
        }
        for (s, &j) in active.iter().enumerate() {
            let d = self.b[j] - start[s];
            if d != 0.0 {
                axpy(-d, design.col(j), &mut self.r);
            }
        }
        self.active = active;
        ok
    }

    fn linear_predictor(&self) -> Vec<f64> {
        let mut eta = vec![self.b0; self.pb.design.n];
        for (j, &bj) in self.b.iter().enumerate() {
            if bj != 0.0 {
                axpy(bj, self.pb.design.col(j), &mut eta);
            }
        }
        eta
    }

    fn binomial_objective(&self, eta: &[f64], lambda: f64) -> f64 {
        let n = self.pb.design.n as f64;
        let loss: f64 = eta
            .iter()
            .zip(self.pb.y)
            .map(|(&e, &y)| logistic_loss(y, e))
            .sum::<f64>()
            / n;
        loss + self.penalty(lambda)
    }

    fn refresh_irls(&mut self, eta: &[f64]) {
        self.wsum = 0.0;
        for i in 0..eta.len() {
            let mu = sigmoid(eta[i]);
            let w = (mu * (1.0 - mu)).max(MIN_IRLS_WEIGHT);
            self.w[i] = w;
            self.r[i] = (self.pb.y[i] - mu) / w;
            self.wsum += w;
        }
        self.v_fresh.iter_mut().for_each(|f| *f = false);
    }

    /// Solve at one lambda, warm-started from the current coefficients.
    pub fn solve(&mut self, lambda: f64, null_only: bool) {
        self.sweeps_this_lambda = 0;
        match self.pb.family {
            Family::Gaussian => self.descend(lambda, null_only),
            Family::Binomial => self.solve_irls(lambda, null_only),
        }
    }

    fn solve_irls(&mut self, lambda: f64, null_only: bool) {
        let mut eta = self.linear_predictor();
        let mut obj = self.binomial_objective(&eta, lambda);
        for _ in 0..MAX_IRLS {
            self.refresh_irls(&eta);
            let old_b0 = self.b0;
            let old_b = self.b.clone();
            self.descend(lambda, null_only);
            eta = self.linear_predictor();
            let mut new_obj = self.binomial_objective(&eta, lambda);
            let mut halvings = 0;
            while new_obj > obj + 1e-12 * obj.abs().max(1.0) && halvings < 30 {
                self.b0 = 0.5 * (self.b0 + old_b0);
                for (bj, &oj) in self.b.iter_mut().zip(&old_b) {
                    *bj = 0.5 * (*bj + oj);
                }
                eta = self.linear_predictor();
                new_obj = self.binomial_objective(&eta, lambda);
                halvings += 1;
            }
            let change = self
                .b
                .iter()
                .zip(&old_b)
                .map(|(a, b)| (a - b).abs())
                .fold((self.b0 - old_b0).abs(), f64::max);
            obj = new_obj;
            if change < self.pb.tol || self.exhausted() {
                return;
            }
        }
    }

    /// Negative gradient of the mean loss w.r.t. each standardised coefficient.
    fn score(&self) -> Vec<f64> {
        let n = self.pb.design.n as f64;
        let resid: Vec<f64> = match self.pb.family {
            Family::Gaussian => self.r.clone(),
            Family::Binomial => self
                .linear_predictor()
                .iter()
                .zip(self.pb.y)
                .map(|(&e, &y)| y - sigmoid(e))
                .collect(),
        };
        (0..self.pb.design.p)
            .map(|j| dot(self.pb.design.col(j), &resid) / n)
            .collect()
    }

    /// Smallest lambda at which every penalised coefficient stays at zero.
    fn lambda_max(&self) -> f64 {
        let g = self.score();
        let a = self.pb.alpha.max(RIDGE_ALPHA_FLOOR);
        let mut best = 0.0f64;
        for j in 0..self.pb.design.p {
            let pf = self.pb.pf[j];
            if pf == 0.0 || !self.pb.design.live(j) {
                continue;
            }
            let mut push = 0.0f64;
            if self.pb.upper[j] > 0.0 {
                push = push.max(g[j]);
            }
            if self.pb.lower[j] < 0.0 {
                push = push.max(-g[j]);
            }
            best = best.max(push / (a * pf));
        }
        best
    }

    fn deviance(&self) -> f64 {
        let eta = self.linear_predictor();
        2.0 * eta
            .iter()
            .zip(self.pb.y)
            .map(|(&e, &y)| logistic_loss(y, e))
            .sum::<f64>()
    }

    pub fn run_path(
        mut self,
        lambdas: Option<&[f64]>,
        nlambda: usize,
        min_ratio: f64,
    ) -> PathSolution {
        self.solve(0.0, true);
        // an automatic path starts at the null fit itself, which is exact for
        // alpha > 0 and reported as-is for ridge
        let auto = lambdas.is_none();
        let lambdas: Vec<f64> = match lambdas {
            Some(l) => l.to_vec(),
            None => {
                let mut lmax = self.lambda_max();
                if !(lmax > 0.0 && lmax.is_finite()) {
                    lmax = 1.0;
                }
                if nlambda == 1 {
                    vec![lmax]
                } else {
                    (0..nlambda)
                        .map(|l| lmax * min_ratio.powf(l as f64 / (nlambda - 1) as f64))
                        .collect()
                }
            }
        };
        let null_dev = if self.pb.family == Family::Binomial {
            self.deviance()
        } else {
            0.0
        };
        let mut intercepts = Vec::with_capacity(lambdas.len());
        let mut coefs = Vec::with_capacity(lambdas.len());
        let mut saturated = false;
        for (l, &lambda) in lambdas.iter().enumerate() {
            if !saturated && !(auto && l == 0) {
                self.solve(lambda, false);
                if self.pb.family == Family::Binomial && null_dev > 0.0 {
                    saturated = 1.0 - self.deviance() / null_dev > SATURATION;
                }
            }
            intercepts.push(self.b0);
            coefs.push(self.b.clone());
        }
        PathSolution {
            lambdas,
            intercepts,
            coefs,
            sweeps: self.total_sweeps,
            converged: self.converged,
        }
    }
}

#[derive(Clone, Copy)]
enum Sweep {
    All,
    Unpenalised,
    Active,
}
