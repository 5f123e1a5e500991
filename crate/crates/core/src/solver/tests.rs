use super::*;
use crate::folds::FoldPlan;
use crate::numerics::RngStream;
use nalgebra::{DMatrix, DVector};
use ndarray::{array, s, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_data(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed, "solver-test").rng();
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let beta: Vec<f64> = (0..p).map(|j| if j % 2 == 0 { 1.0 / (j + 1) as f64 } else { -0.5 }).collect();
    let y = Array1::from_shape_fn(n, |i| {
        (0..p).map(|j| x[[i, j]] * beta[j]).sum::<f64>() + 0.5 * rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::new(x, y, Family::Gaussian).unwrap()
}

fn binomial_data(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed, "solver-test-bin").rng();
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(n, |i| {
        let eta = x[[i, 0]] - 0.7 * x[[i, 1 % p]];
        if rng.random::<f64>() < sigmoid(eta) {
            1.0
        } else {
            0.0
        }
    });
    Dataset::new(x, y, Family::Binomial).unwrap()
}

fn pop_moments(v: ArrayView1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.sum() / n;
    (m, (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[test]
fn soft_threshold_examples() {
    assert_eq!(soft_threshold(3.0, 1.0), 2.0);
    assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
    assert_eq!(soft_threshold(-2.5, 0.25), -2.25);
}

#[test]
fn univariate_lasso_matches_closed_form() {
    let data = gaussian_data(40, 1, 3);
    let (mx, sx) = pop_moments(data.x().column(0));
    let ybar = data.y().mean().unwrap();
    let cov = data
        .x()
        .column(0)
        .iter()
        .zip(data.y())
        .map(|(x, y)| (x - mx) / sx * (y - ybar))
        .sum::<f64>()
        / 40.0;
    let spec = PenaltySpec::new(1);
    let fit = fit_path(&data, &spec).unwrap();
    assert!((fit.lambdas[0] - cov.abs()).abs() < 1e-12);
    for l in [0, 10, 50, 99] {
        let want = soft_threshold(cov, fit.lambdas[l]) / sx;
        assert!((fit.coefs[[0, l]] - want).abs() < 1e-9, "l={l}");
        assert!((fit.intercepts[l] - (ybar - want * mx)).abs() < 1e-9);
    }
}

#[test]
fn ridge_matches_normal_equations() {
    let (n, p) = (20, 5);
    let data = gaussian_data(n, p, 11);
    let spec = PenaltySpec::elastic_net(p, 0.0).with_tol(1e-12);
    let lambdas = [0.5, 0.1, 0.01];
    let fit = fit_path_with_lambdas(&data, &spec, &lambdas).unwrap();

    let mut xs = DMatrix::zeros(n, p);
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let (m, s) = pop_moments(data.x().column(j));
        sds[j] = s;
        for i in 0..n {
            xs[(i, j)] = (data.x()[[i, j]] - m) / s;
        }
    }
    let ybar = data.y().mean().unwrap();
    let yc = DVector::from_iterator(n, data.y().iter().map(|v| v - ybar));
    for (l, &lam) in lambdas.iter().enumerate() {
        let a = xs.transpose() * &xs / n as f64 + DMatrix::identity(p, p) * lam;
        let rhs = xs.transpose() * &yc / n as f64;
        let b = a.lu().solve(&rhs).unwrap();
        for j in 0..p {
            assert!((fit.coefs[[j, l]] - b[j] / sds[j]).abs() < 1e-6);
        }
    }
}

#[test]
fn lambda_max_gives_zero_penalised_coefficients() {
    for alpha in [1.0, 0.5, 0.0] {
        let data = gaussian_data(30, 8, 5);
        let fit = fit_path(&data, &PenaltySpec::elastic_net(8, alpha)).unwrap();
        assert!(fit.coef(0).iter().all(|&b| b == 0.0), "alpha={alpha}");
        assert!(fit.coef(99).iter().any(|&b| b != 0.0));
        assert!(fit.lambdas.windows(2).all(|w| w[0] > w[1]));
    }
    let data = binomial_data(60, 4, 9);
    let fit = fit_path(&data, &PenaltySpec::new(4)).unwrap();
    assert!(fit.coef(0).iter().all(|&b| b == 0.0));
    let ybar = data.y().mean().unwrap();
    assert!((fit.intercept(0) - (ybar / (1.0 - ybar)).ln()).abs() < 1e-7);
}

#[test]
fn default_min_ratio_depends_on_shape() {
    let wide = gaussian_data(10, 20, 1);
    let fit = fit_path(&wide, &PenaltySpec::new(20)).unwrap();
    assert!((fit.lambdas[99] / fit.lambdas[0] - 0.01).abs() < 1e-12);
    let tall = gaussian_data(30, 3, 1);
    let fit = fit_path(&tall, &PenaltySpec::new(3)).unwrap();
    assert!((fit.lambdas[99] / fit.lambdas[0] - 1e-4).abs() < 1e-12);
}

#[test]
fn kkt_holds_along_gaussian_path_with_boxes() {
    let p = 6;
    let data = gaussian_data(25, p, 21);
    let spec = PenaltySpec::elastic_net(p, 0.7)
        .with_penalty_factors(vec![1.0, 0.0, 2.0, 1.0, 0.5, 1.0])
        .with_bounds(
            vec![0.0, f64::NEG_INFINITY, -0.1, f64::NEG_INFINITY, -1.0, 0.0],
            vec![f64::INFINITY, f64::INFINITY, 0.2, 0.0, 1.0, 0.3],
        );
    let fit = fit_path(&data, &spec).unwrap();
    for l in (0..fit.len()).step_by(7) {
        let kkt = kkt_residual(&data, &spec, fit.lambdas[l], fit.intercept(l), fit.coef(l));
        assert!(kkt <= 1e-6, "lambda index {l}: kkt {kkt}");
        for j in 0..p {
            let b = fit.coefs[[j, l]];
            assert!(b >= spec.lower[j] - 1e-12 && b <= spec.upper[j] + 1e-12);
        }
    }
}

#[test]
fn kkt_holds_along_binomial_path() {
    let data = binomial_data(80, 5, 4);
    let spec = PenaltySpec::elastic_net(5, 0.9).with_bounds(vec![0.0; 5], vec![f64::INFINITY; 5]);
    let fit = fit_path(&data, &spec).unwrap();
    for l in (0..fit.len()).step_by(9) {
        let kkt = kkt_residual(&data, &spec, fit.lambdas[l], fit.intercept(l), fit.coef(l));
        assert!(kkt <= 1e-5, "lambda index {l}: kkt {kkt}");
        assert!(fit.coef(l).iter().all(|&b| b >= 0.0));
    }
}

#[test]
fn objective_never_increases_across_sweeps() {
    let data = gaussian_data(30, 12, 8);
    let spec = PenaltySpec::elastic_net(12, 0.5)
        .with_bounds(vec![-0.3; 12], vec![f64::INFINITY; 12])
        .with_tol(1e-12);
    let (trace, _) = fit_gaussian_traced(&data, &spec, 0.02).unwrap();
    assert!(trace.len() > 2);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-13 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn predict_linear_replays_training_fit() {
    let data = gaussian_data(20, 3, 2);
    let fit = fit_path(&data, &PenaltySpec::new(3)).unwrap();
    let eta = predict_linear(&fit, 0, data.x()).unwrap();
    assert!(eta.iter().all(|&e| (e - fit.intercept(0)).abs() < 1e-12));
    let l = 60;
    let eta = predict_linear(&fit, l, data.x()).unwrap();
    for i in 0..20 {
        let direct = fit.intercept(l) + (0..3).map(|j| data.x()[[i, j]] * fit.coefs[[j, l]]).sum::<f64>();
        assert!((eta[i] - direct).abs() < 1e-10);
    }
    assert!(predict_linear(&fit, 0, Array2::zeros((2, 4)).view()).is_err());

    let mut manual = fit.clone();
    manual.intercepts[0] = 0.0;
    manual.coefs.column_mut(0).assign(&array![0.0, 2.0, 0.0]);
    let x = array![[0.0, 1.5, 0.0], [9.0, -1.0, 4.0]];
    assert_eq!(predict_linear(&manual, 0, x.view()).unwrap(), array![3.0, -2.0]);
}

#[test]
fn constant_design_gives_intercept_only_path() {
    let x = Array2::from_elem((6, 2), 3.0);
    let data = Dataset::new(x, array![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Family::Gaussian).unwrap();
    let fit = fit_path(&data, &PenaltySpec::new(2)).unwrap();
    assert!(fit.coefs.iter().all(|&b| b == 0.0));
    assert!(fit.intercepts.iter().all(|&b| (b - 3.5).abs() < 1e-12));
}

#[test]
fn single_class_binomial_is_rejected() {
    let data = Dataset::new(array![[1.0], [2.0], [3.0]], array![1.0, 1.0, 1.0], Family::Binomial).unwrap();
    assert!(matches!(
        fit_path(&data, &PenaltySpec::new(1)),
        Err(Error::DegenerateResponse(_))
    ));
}

#[test]
fn invalid_specs_are_rejected() {
    let data = gaussian_data(10, 2, 1);
    assert!(fit_path(&data, &PenaltySpec::new(3)).is_err());
    assert!(fit_path(&data, &PenaltySpec::new(2).with_alpha(1.5)).is_err());
    let bad_box = PenaltySpec::new(2).with_bounds(vec![0.1, 0.0], vec![1.0, 1.0]);
    assert!(matches!(fit_path(&data, &bad_box), Err(Error::InvalidParameter(_))));
}

#[test]
fn ridge_is_permutation_invariant() {
    let data = gaussian_data(15, 4, 31);
    let perm = [2usize, 0, 3, 1];
    let xp = data.x().select(ndarray::Axis(1), &perm);
    let permuted = data.with_features(xp).unwrap();
    let spec = PenaltySpec::elastic_net(4, 0.0).with_tol(1e-12);
    let lambdas = [0.3, 0.05];
    let a = fit_path_with_lambdas(&data, &spec, &lambdas).unwrap();
    let b = fit_path_with_lambdas(&permuted, &spec, &lambdas).unwrap();
    for l in 0..2 {
        for (t, &j) in perm.iter().enumerate() {
            assert!((a.coefs[[j, l]] - b.coefs[[t, l]]).abs() < 1e-8);
        }
    }
}

#[test]
fn one_se_rule_ties_prefer_large_lambda() {
    assert_eq!(one_se_rule(&[1.0; 5], &[0.0; 5]), (0, 0));
    assert_eq!(one_se_rule(&[3.0, 2.0, 1.0, 1.5], &[0.1, 0.1, 1.1, 0.1]), (2, 1));
    assert_eq!(one_se_rule(&[3.0, 2.0, 1.0, 1.0], &[0.0, 0.0, 0.0, 0.0]), (2, 2));
    assert_eq!(one_se_rule(&[3.0, 2.0, 1.0, 1.5], &[0.1, 0.1, 0.6, 0.1]), (2, 2));
}

#[test]
fn cv_predictions_match_independent_refits() {
    let data = gaussian_data(60, 10, 77);
    let folds = FoldPlan::random(60, 5, &RngStream::new(1, "cv")).unwrap();
    let spec = PenaltySpec::new(10);
    let cv = cv_fit(&data, &spec, &folds).unwrap();
    for f in 0..5 {
        let train = data.subset(&folds.held_in(f)).unwrap();
        let refit = fit_path_with_lambdas(&train, &spec, &cv.path.lambdas).unwrap();
        for i in folds.held_out(f) {
            for l in [0, cv.idx_min, 99] {
                let e = predict_linear(&refit, l, data.x().slice(s![i..i + 1, ..])).unwrap()[0];
                assert!((e - cv.cv_eta[[i, l]]).abs() < 1e-8);
            }
        }
    }
    let min = cv.cv_loss_mean.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(cv.cv_loss_mean[cv.idx_min], min);
    assert!(cv.idx_1se <= cv.idx_min);
    assert!(cv.cv_loss_mean[cv.idx_1se] <= min + cv.cv_loss_se[cv.idx_min]);
}

#[test]
fn cv_on_noise_prefers_heavy_penalty() {
    let mut rng = RngStream::new(5, "noise").rng();
    let x = Array2::from_shape_fn((50, 20), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(50, |_| rng.sample::<f64, _>(StandardNormal));
    let data = Dataset::new(x, y, Family::Gaussian).unwrap();
    let folds = FoldPlan::random(50, 10, &RngStream::new(5, "f")).unwrap();
    let cv = cv_fit(&data, &PenaltySpec::new(20), &folds).unwrap();
    assert!(cv.lambda_1se() >= cv.lambda_min());
    assert!(cv.idx_1se < 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solutions_are_box_feasible_and_kkt(
        seed in 0u64..1000,
        alpha in 0.0f64..=1.0,
        lo in proptest::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), Just(0.0), -1.0f64..0.0], 4),
        hi in proptest::collection::vec(prop_oneof![Just(f64::INFINITY), Just(0.0), 0.0f64..1.0], 4),
        pf in proptest::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], 4),
    ) {
        let data = gaussian_data(20, 4, seed);
        let mut pf = pf;
        pf[0] = pf[0].max(0.5);
        let spec = PenaltySpec::elastic_net(4, alpha)
            .with_penalty_factors(pf)
            .with_bounds(lo.clone(), hi.clone())
            .with_nlambda(20);
        let fit = fit_path(&data, &spec).unwrap();
        for l in 0..fit.len() {
            for j in 0..4 {
                let b = fit.coefs[[j, l]];
                prop_assert!(b >= lo[j] - 1e-12 && b <= hi[j] + 1e-12);
            }
            let kkt = kkt_residual(&data, &spec, fit.lambdas[l], fit.intercept(l), fit.coef(l));
            prop_assert!(kkt <= 1e-6, "kkt {}", kkt);
        }
    }

    #[test]
    fn lasso_permutation_preserves_objective(seed in 0u64..1000) {
        let data = gaussian_data(12, 5, seed);
        let perm = [4usize, 2, 0, 1, 3];
        let permuted = data.with_features(data.x().select(ndarray::Axis(1), &perm)).unwrap();
        let spec = PenaltySpec::new(5).with_tol(1e-10);
        let lambdas = [0.2, 0.05, 0.01];
        let a = fit_path_with_lambdas(&data, &spec, &lambdas).unwrap();
        let b = fit_path_with_lambdas(&permuted, &spec, &lambdas).unwrap();
        for l in 0..3 {
            let oa = objective(&data, &spec, lambdas[l], a.intercept(l), a.coef(l));
            let ob = objective(&permuted, &spec, lambdas[l], b.intercept(l), b.coef(l));
            prop_assert!((oa - ob).abs() < 1e-8);
        }
    }
}
