//! Confidence interval for one coefficient and a confidence set for two, both
//! obtained by inverting the square-root lasso test.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use threshtest::family::GlmFamily;
use threshtest::hypothesis::LinearHypothesis;
use threshtest::inference::{ConfidenceRegion, Lattice, McConfig};
use threshtest::sim::{gen_design, gen_response, DesignSpec};
use threshtest::stats::{Partition, StatisticSpec};

fn selector(rows: &[usize], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, j| if rows[i] == j { 1.0 } else { 0.0 })
}

fn main() -> threshtest::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, p) = (80, 6);
    let x = gen_design(n, p, &DesignSpec::default(), &mut rng)?;
    let beta = DVector::from_vec(vec![0.5, 1.0, -0.5, 0.0, 0.3, 0.0, 0.2]);
    let y = gen_response(&x, 0.0, &beta, GlmFamily::Gaussian, &mut rng)?;
    let cfg = McConfig::new(1999, 3);

    // c is ignored when building a region; only A matters
    let one = LinearHypothesis::new(selector(&[1], p + 1), DVector::zeros(1))?;
    let region = ConfidenceRegion::calibrated(&y, &x, &one, &StatisticSpec::sqrt_affine_lasso(), 0.05, &cfg)?;
    let grid: Vec<f64> = (0..401).map(|i| -1.0 + i as f64 * 0.01).collect();
    let scan = region.scan(&Lattice::Line(grid))?;
    println!("95% interval for β_1 (truth 1.0): {:?}", scan.interval);

    let two = LinearHypothesis::new(selector(&[1, 2], p + 1), DVector::zeros(2))?;
    let spec = StatisticSpec::sqrt_affine_group_lasso(Partition::Whole);
    let region = ConfidenceRegion::calibrated(&y, &x, &two, &spec, 0.05, &cfg)?;
    let axis: Vec<f64> = (0..41).map(|i| -1.5 + i as f64 * 0.075).collect();
    let scan = region.scan(&Lattice::Plane(axis.iter().map(|v| v + 1.5).collect(), axis))?;
    let inside = scan.member.iter().filter(|m| **m).count();
    println!("joint region for (β_1, β_2) covers {inside} of {} lattice points", scan.points.len());
    println!(
        "contains the truth (1.0, −0.5): {}",
        region.member(&DVector::from_vec(vec![1.0, -0.5]))?
    );
    Ok(())
}
