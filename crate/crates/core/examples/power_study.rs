//! A small power study: rejection rates along a signal-size grid for sparse
//! and dense alternatives, written as CSV to standard output.

use threshtest::family::GlmFamily;
use threshtest::sim::{estimate_power, monotonicity_warnings, write_power_csv, DesignSpec, ExperimentConfig, Method};
use threshtest::stats::StatKind;

fn main() -> threshtest::Result<()> {
    let cfg = ExperimentConfig {
        n: 60,
        p: 20,
        family: GlmFamily::Gaussian,
        beta0: 0.0,
        alpha: 0.05,
        m_calib: 499,
        n_reps: 200,
        theta_grid: vec![0.0, 0.1, 0.2, 0.4],
        s_values: vec![1, 20],
        design: DesignSpec::default(),
        statistics: vec![
            Method::Threshold(StatKind::SqrtAffineLasso),
            Method::Threshold(StatKind::SqrtAffineGroupLasso),
            Method::Composite,
            Method::FTest,
        ],
        seed: 2024,
    };
    let rows = estimate_power(&cfg)?;
    write_power_csv(&rows, std::io::stdout())?;
    for w in monotonicity_warnings(&rows) {
        eprintln!("warning: {w}");
    }
    Ok(())
}
