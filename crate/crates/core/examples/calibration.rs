//! Monte-Carlo calibration on its own: null draws, the threshold, p-values,
//! a round trip through the calibration file, and the in-memory cache.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use threshtest::calibration::{calibrate, p_value, CalibrationCache, CalibrationResult, NullModel};
use threshtest::hypothesis::{build_reduction, SubsetHypothesis};
use threshtest::sim::{gen_design, DesignSpec};
use threshtest::stats::{PreparedStatistic, StatValue, StatisticSpec};

fn main() -> threshtest::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gen_design(50, 30, &DesignSpec::default(), &mut rng)?;
    let hyp = SubsetHypothesis::zero(1, 31).to_linear(31)?;
    let spec = StatisticSpec::sqrt_affine_lasso();
    let stat = PreparedStatistic::new(&spec, &x, &hyp)?;
    let model = NullModel::gaussian(&build_reduction(&x, &hyp, None)?, &x);

    let cal = calibrate(&stat, &model, 999, 0.05, 17)?;
    println!("threshold at 5%: {:.4}", cal.lambda_alpha);
    println!("threshold at 1%: {:.4}", cal.at_level(0.01)?.lambda_alpha);
    for obs in [2.0, 3.0, 4.0] {
        println!("p-value of {obs}: {:.4}", p_value(StatValue::new(obs), &cal, &spec.id())?);
    }

    let mut buf = Vec::new();
    cal.write_to(&mut buf).expect("writing to memory");
    let back = CalibrationResult::read_from(buf.as_slice())?;
    println!("file round trip exact: {}", back == cal);

    let cache = Arc::new(CalibrationCache::new());
    let first = cache.calibrate(&stat, &hyp, &model, 999, 0.05, 17)?;
    let again = cache.calibrate(&stat, &hyp, &model, 999, 0.05, 17)?;
    println!("cached entries: {}, identical: {}", cache.len(), first == again && first == cal);
    Ok(())
}
