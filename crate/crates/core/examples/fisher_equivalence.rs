//! When `P < N`, the Fisher-weighted thresholding statistic reproduces the
//! classical F statistic, and its exact threshold gives the same decision.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use threshtest::hypothesis::{DesignMatrix, LinearHypothesis};
use threshtest::inference::{run_test, McConfig};
use threshtest::sim::baseline_f_test;
use threshtest::stats::{fisher_f, StatisticSpec};

fn main() -> threshtest::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let (n, p) = (30, 5);
    let x = DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| draw()))?;
    let beta = DVector::from_vec(vec![1.0, 0.3, 0.0, -0.2, 0.5]);
    let y = x.values() * &beta + DVector::from_fn(n, |_, _| draw());

    // β_1 + β_2 = 0 and β_3 = β_4
    let a = DMatrix::from_row_slice(2, 5, &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
    let hyp = LinearHypothesis::new(a, DVector::zeros(2))?;

    let parts = fisher_f(&x, &hyp, &y)?;
    let classical = baseline_f_test(&y, &x, &hyp, 0.05)?;
    println!("F from the thresholding function: {:.10}", parts.f);
    println!("F from two least-squares fits:    {:.10}", classical.observed);

    let ours = run_test(&y, &x, &hyp, &StatisticSpec::fisher_weighted(), 0.05, &McConfig::new(0, 0))?;
    println!("thresholding test: observed {:.4} vs {:.4}, reject = {}", ours.observed, ours.lambda_alpha, ours.reject);
    println!("classical F-test:  p = {:.4}, reject = {}", classical.p_value, classical.reject);
    Ok(())
}
