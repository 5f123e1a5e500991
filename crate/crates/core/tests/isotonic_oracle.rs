mod common;

use common::{isotonic_qp_oracle, normal_matrix, normal_vector};
use ndarray::Array1;
use priorcal::calibration::{calibrate_isotonic, rescale_prior, CalibrationConfig};
use priorcal::{Dataset, Family, RngStream};

#[test]
fn isotonic_matches_constrained_qp() {
    let mut worst = 0.0f64;
    for rep in 0..10 {
        let rng = RngStream::new(rep, "iso-qp");
        let p = 5;
        let x = normal_matrix(50, p, &rng.child("x"));
        let z = rescale_prior(normal_vector(p, &rng.child("z")).view()).0;
        let beta: Array1<f64> = z.mapv(|v| if v > 0.0 { v * v } else { 0.5 * v });
        let y = x.dot(&beta) + normal_vector(50, &rng.child("e"));
        let data = Dataset::new(x.clone(), y.clone(), Family::Gaussian).unwrap();
        let cal = calibrate_isotonic(&data, z.view(), &CalibrationConfig::default(), &rng.child("cv")).unwrap();
        let (a, gamma) = isotonic_qp_oracle(x.view(), y.view(), z.view(), cal.lambda.unwrap(), 0.95);
        worst = worst.max((a - cal.alpha_k).abs());
        for j in 0..p {
            worst = worst.max((gamma[j] - cal.gamma[j]).abs());
        }
    }
    println!("worst {worst:e}");
    assert!(worst <= 1e-5, "worst deviation {worst:e}");
}
