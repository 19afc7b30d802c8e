//! Score thresholding tests for Bernoulli and Poisson responses, compared with
//! the likelihood-ratio test where it is defined.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use threshtest::family::GlmFamily;
use threshtest::hypothesis::SubsetHypothesis;
use threshtest::inference::{run_test, McConfig};
use threshtest::sim::{baseline_lrt, gen_design, gen_response, DesignSpec};
use threshtest::stats::{Partition, StatisticSpec};

fn main() -> threshtest::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, p) = (150, 20);
    let x = gen_design(n, p, &DesignSpec::default(), &mut rng)?;
    let hyp = SubsetHypothesis::zero(1, p + 1).to_linear(p + 1)?;
    let mut beta = DVector::zeros(p + 1);
    beta[4] = 0.5;

    for family in [GlmFamily::Bernoulli, GlmFamily::Poisson] {
        let y = gen_response(&x, -1.0, &beta, family, &mut rng)?;
        let cfg = McConfig::new(1999, 1);
        let sup = run_test(&y, &x, &hyp, &StatisticSpec::glm_score_sup(family), 0.05, &cfg)?;
        let group = run_test(&y, &x, &hyp, &StatisticSpec::glm_score_group(family, Partition::Whole), 0.05, &cfg)?;
        let lrt = baseline_lrt(&y, &x, family, 0.05)?;
        println!(
            "{family:>9}: sup p = {:.4}  group p = {:.4}  LRT p = {:.4}",
            sup.p_value, group.p_value, lrt.p_value
        );
    }
    Ok(())
}
