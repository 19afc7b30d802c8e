//! Checks the closed-form zero-threshold against a brute-force search over
//! penalty levels with an iterative affine-lasso solver.

use nalgebra::{DMatrix, DVector};

use threshtest::hypothesis::{build_reduction, DesignMatrix, LinearHypothesis};
use threshtest::oracle::{constrained_ls, dual_norm, solve_affine_lasso, zero_threshold_bracket, PenaltyNorm};
use threshtest::stats::zt_affine_lasso;

fn main() -> threshtest::Result<()> {
    let x = DMatrix::from_row_slice(
        8,
        3,
        &[
            1.0, 0.2, -0.4, 1.0, -1.1, 0.3, 1.0, 0.5, 0.9, 1.0, 1.4, -0.2, 1.0, -0.3, -1.0, 1.0, 0.8, 0.1, 1.0, -0.6,
            0.7, 1.0, 0.0, -0.5,
        ],
    );
    let y = DVector::from_vec(vec![1.2, -0.4, 2.1, 1.9, -1.0, 1.5, 0.2, 0.1]);
    // β_1 − β_2 = 0.5
    let hyp = LinearHypothesis::new(DMatrix::from_row_slice(1, 3, &[0.0, 1.0, -1.0]), DVector::from_element(1, 0.5))?;

    let design = DesignMatrix::new(x.clone())?;
    let red = build_reduction(&design, &hyp, None)?;
    let closed = zt_affine_lasso(&red, &design, &y)?.value;
    let bracket = zero_threshold_bracket(&x, &y, &hyp, PenaltyNorm::L1, 1e-10)?;
    let (_, z) = constrained_ls(&x, &y, &hyp)?;
    println!("closed form         {closed:.10}");
    println!("bisection bracket   [{:.10}, {:.10}]", bracket.below, bracket.above);
    println!("multiplier norm     {:.10}", dual_norm(&z, PenaltyNorm::L1, &[vec![0]]));

    for lambda in [0.5 * closed, 1.01 * closed] {
        let fit = solve_affine_lasso(&x, &y, &hyp, lambda, PenaltyNorm::L1, 1e-12, 100_000)?;
        let gap = fit.beta_hat[1] - fit.beta_hat[2] - 0.5;
        println!("λ = {lambda:.4}: Aβ̂ − c = {gap:+.2e} (KKT residual {:.1e})", fit.kkt_residual);
    }
    Ok(())
}
