//! The composite test against a sparse and a dense alternative, next to its
//! two components.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use threshtest::calibration::CalibrationCache;
use threshtest::family::GlmFamily;
use threshtest::hypothesis::SubsetHypothesis;
use threshtest::inference::{default_composite_pair, run_composite, run_test, McConfig};
use threshtest::sim::{gen_design, gen_response, DesignSpec};

fn main() -> threshtest::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, p) = (100, 40);
    let x = gen_design(n, p, &DesignSpec::default(), &mut rng)?;
    let hyp = SubsetHypothesis::zero(1, p + 1).to_linear(p + 1)?;
    let (lasso, group) = default_composite_pair();
    // the cache lets all three tests reuse one set of null draws per statistic
    let cfg = McConfig::new(1999, 5).with_cache(Arc::new(CalibrationCache::new()));

    for (label, s, theta) in [("sparse", 1, 0.5), ("dense", p, 0.1)] {
        let mut beta = DVector::zeros(p + 1);
        for j in 1..=s {
            beta[j] = theta;
        }
        let y = gen_response(&x, 0.0, &beta, GlmFamily::Gaussian, &mut rng)?;
        let a = run_test(&y, &x, &hyp, &lasso, 0.05, &cfg)?;
        let b = run_test(&y, &x, &hyp, &group, 0.05, &cfg)?;
        let c = run_composite(&y, &x, &hyp, &lasso, &group, 0.05, &cfg)?;
        println!("{label:>6}: lasso p = {:.4}  group p = {:.4}  composite p = {:.4}", a.p_value, b.p_value, c.p_value);
    }
    Ok(())
}
