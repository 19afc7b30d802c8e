//! Brute-force reference solvers for small problems.
//!
//! These deliberately avoid the closed forms used by the statistics: the
//! affine lasso is solved iteratively, its zero-threshold is found by
//! bisection on the penalty level, and the constrained least-squares fit is
//! read off the bordered normal equations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hypothesis::LinearHypothesis;

/// Largest problem the reference solvers accept.
pub const MAX_N: usize = 50;
pub const MAX_P: usize = 10;

/// Norm applied to each group `A^{H_l}β − c_{H_l}` of the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyNorm {
    /// `ℓ1`: lasso-type penalty, groups are irrelevant.
    L1,
    /// `ℓ2`: group-lasso penalty over the hypothesis's row partition.
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub beta_hat: DVector<f64>,
    pub objective: f64,
    /// Violation of the stationarity inclusion at `beta_hat`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Affine lasso objective split as `β = β_c + A⁺u + Kw`, so `Aβ − c = u` and
/// only `u` is penalized.
struct Reparam {
    a: DMatrix<f64>,
    a_pinv: DMatrix<f64>,
    kernel: DMatrix<f64>,
    beta_c: DVector<f64>,
    z: DMatrix<f64>,
    y_shift: DVector<f64>,
    lipschitz: f64,
    x: DMatrix<f64>,
    y: DVector<f64>,
    blocks: Vec<Vec<usize>>,
    norm: PenaltyNorm,
}

fn check_scale(x: &DMatrix<f64>, y: &DVector<f64>, hyp: &LinearHypothesis) -> Result<()> {
    let (n, p) = x.shape();
    if n > MAX_N || p > MAX_P {
        return Err(Error::UnsupportedScale(format!(
            "reference solver handles N ≤ {MAX_N}, P ≤ {MAX_P}; got N = {n}, P = {p}"
        )));
    }
    if y.len() != n || hyp.p() != p {
        return Err(Error::DimensionMismatch("x, y and the hypothesis disagree".into()));
    }
    Ok(())
}

impl Reparam {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>, hyp: &LinearHypothesis, norm: PenaltyNorm) -> Result<Self> {
        check_scale(x, y, hyp)?;
        let a = hyp.a_matrix().clone();
        let p = a.ncols();
        let a_pinv = a
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::SingularSystem(e.to_string()))?;
        // kernel of A from the zero eigenvalues of AᵀA
        let eig = (a.transpose() * &a).symmetric_eigen();
        let top = eig.eigenvalues.amax().max(1.0);
        let kernel_cols: Vec<usize> = (0..p).filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * top).collect();
        let kernel = DMatrix::from_fn(p, kernel_cols.len(), |i, j| eig.eigenvectors[(i, kernel_cols[j])]);
        let beta_c = &a_pinv * hyp.c_vector();
        let mut z = DMatrix::zeros(x.nrows(), a.nrows() + kernel.ncols());
        z.columns_mut(0, a.nrows()).copy_from(&(x * &a_pinv));
        z.columns_mut(a.nrows(), kernel.ncols()).copy_from(&(x * &kernel));
        let smax = z.singular_values().amax();
        let lipschitz = if smax > 0.0 { smax * smax } else { 1.0 };
        let blocks = match norm {
            PenaltyNorm::L1 => (0..a.nrows()).map(|i| vec![i]).collect(),
            PenaltyNorm::L2 => hyp.row_partition().to_vec(),
        };
        Ok(Self {
            y_shift: y - x * &beta_c,
            a,
            a_pinv,
            kernel,
            beta_c,
            z,
            lipschitz,
            x: x.clone(),
            y: y.clone(),
            blocks,
            norm,
        })
    }

    fn r(&self) -> usize {
        self.a.nrows()
    }

    fn dim(&self) -> usize {
        self.z.ncols()
    }

    fn beta(&self, v: &DVector<f64>) -> DVector<f64> {
        let r = self.r();
        &self.beta_c + &self.a_pinv * v.rows(0, r) + &self.kernel * v.rows(r, v.len() - r)
    }

    fn penalty(&self, u: &[f64]) -> f64 {
        match self.norm {
            PenaltyNorm::L1 => u.iter().map(|v| v.abs()).sum(),
            PenaltyNorm::L2 => self
                .blocks
                .iter()
                .map(|b| b.iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt())
                .sum(),
        }
    }

    fn objective(&self, v: &DVector<f64>, lambda: f64) -> f64 {
        let res = &self.y_shift - &self.z * v;
        0.5 * res.norm_squared() + lambda * self.penalty(&v.as_slice()[..self.r()])
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        self.z.transpose() * (&self.z * v - &self.y_shift)
    }

    fn prox(&self, v: &mut DVector<f64>, t: f64) {
        match self.norm {
            PenaltyNorm::L1 => {
                for i in 0..self.r() {
                    v[i] = v[i].signum() * (v[i].abs() - t).max(0.0);
                }
            }
            PenaltyNorm::L2 => {
                for b in &self.blocks {
                    let nrm = b.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt();
                    let scale = if nrm > t { 1.0 - t / nrm } else { 0.0 };
                    for &i in b {
                        v[i] *= scale;
                    }
                }
            }
        }
    }

    /// Accelerated proximal gradient with adaptive restart.
    fn solve(&self, lambda: f64, start: Option<&DVector<f64>>, tol: f64, max_iter: usize) -> Result<(DVector<f64>, usize)> {
        let step = 1.0 / self.lipschitz;
        let scale = 1.0 + (self.z.transpose() * &self.y_shift).amax();
        let mut v = start.cloned().unwrap_or_else(|| DVector::zeros(self.dim()));
        let mut mom = v.clone();
        let mut t = 1.0f64;
        for it in 1..=max_iter {
            let mut next = &mom - self.gradient(&mom) * step;
            self.prox(&mut next, lambda * step);
            // gradient-mapping norm at the extrapolated point
            let mapping = (&mom - &next).amax() * self.lipschitz;
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let restart = (&mom - &next).dot(&(&next - &v)) > 0.0;
            let delta = &next - &v;
            v = next;
            if mapping <= tol * scale {
                return Ok((v, it));
            }
            if restart {
                t = 1.0;
                mom = v.clone();
            } else {
                mom = &v + delta * ((t - 1.0) / t_next);
                t = t_next;
            }
        }
        Err(Error::NoConvergence(format!("proximal gradient did not converge in {max_iter} iterations")))
    }

    /// Stationarity violation `Xᵀ(Xβ − y) + λAᵀs ∋ 0` with `s` solved from the
    /// row space of `A` and checked against the subdifferential of the penalty.
    fn kkt(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        let grad = self.x.transpose() * (&self.x * beta - &self.y);
        if lambda == 0.0 {
            return grad.amax();
        }
        let s = -(self.a_pinv.transpose() * &grad) / lambda;
        let stationarity = (&grad + self.a.transpose() * &s * lambda).amax();
        let u = &self.a * beta - (&self.a * &self.beta_c);
        let mut sub = 0.0f64;
        for b in &self.blocks {
            let ub: Vec<f64> = b.iter().map(|&i| u[i]).collect();
            let sb: Vec<f64> = b.iter().map(|&i| s[i]).collect();
            let un = ub.iter().map(|v| v * v).sum::<f64>().sqrt();
            match self.norm {
                PenaltyNorm::L1 => {
                    let (ui, si) = (ub[0], sb[0]);
                    sub = sub.max(if ui.abs() > 1e-10 { (si - ui.signum()).abs() } else { (si.abs() - 1.0).max(0.0) });
                }
                PenaltyNorm::L2 => {
                    let sn = sb.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if un > 1e-10 {
                        let dev = ub.iter().zip(&sb).map(|(u, s)| (s - u / un).abs()).fold(0.0, f64::max);
                        sub = sub.max(dev);
                    } else {
                        sub = sub.max((sn - 1.0).max(0.0));
                    }
                }
            }
        }
        stationarity.max(sub * lambda)
    }

    fn report(&self, v: &DVector<f64>, lambda: f64, iterations: usize) -> SolveReport {
        let beta_hat = self.beta(v);
        SolveReport {
            kkt_residual: self.kkt(&beta_hat, lambda),
            objective: self.objective(v, lambda),
            beta_hat,
            iterations,
        }
    }
}

/// Minimizes `½‖y − Xβ‖² + λ Σ_l ‖A^{H_l}β − c_{H_l}‖` for small problems.
pub fn solve_affine_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyp: &LinearHypothesis,
    lambda: f64,
    norm: PenaltyNorm,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidSpec(format!("penalty level must be finite and nonnegative, got {lambda}")));
    }
    let rp = Reparam::new(x, y, hyp, norm)?;
    let (v, it) = rp.solve(lambda, None, tol, max_iter)?;
    Ok(rp.report(&v, lambda, it))
}

/// Penalty levels just below and just above the zero-threshold, with the
/// fits that witness `Aβ̂ ≠ c` and `Aβ̂ = c` respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    pub below: f64,
    pub above: f64,
    pub fit_below: Option<SolveReport>,
    pub fit_above: SolveReport,
}

impl Bracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.below + self.above)
    }
}

/// `Aβ̂ − c` counts as zero below this fraction of its unpenalized size, or
/// below the absolute floor when that size is itself roundoff.
const ACTIVE_TOL: f64 = 1e-10;
const ACTIVE_FLOOR: f64 = 1e-12;
const SOLVER_TOL: f64 = 1e-13;
const SOLVER_MAX_ITER: usize = 2_000_000;

/// Bisection for the smallest `λ` at which `Aβ̂_λ = c`.
pub fn zero_threshold_bracket(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyp: &LinearHypothesis,
    norm: PenaltyNorm,
    tol: f64,
) -> Result<Bracket> {
    let rp = Reparam::new(x, y, hyp, norm)?;
    let r = rp.r();
    let (v0, it0) = rp.solve(0.0, None, SOLVER_TOL, SOLVER_MAX_ITER)?;
    let cutoff = (ACTIVE_TOL * v0.rows(0, r).amax()).max(ACTIVE_FLOOR);
    let at_zero = |v: &DVector<f64>| v.rows(0, r).amax() <= cutoff;
    if at_zero(&v0) {
        return Ok(Bracket {
            below: 0.0,
            above: 0.0,
            fit_below: None,
            fit_above: rp.report(&v0, 0.0, it0),
        });
    }
    let mut lo = (0.0, rp.report(&v0, 0.0, it0), v0.clone());
    let mut hi_lambda = 1.0;
    let mut warm = v0;
    let mut hi = loop {
        let (v, it) = rp.solve(hi_lambda, Some(&warm), SOLVER_TOL, SOLVER_MAX_ITER)?;
        if at_zero(&v) {
            break (hi_lambda, rp.report(&v, hi_lambda, it), v);
        }
        lo = (hi_lambda, rp.report(&v, hi_lambda, it), v.clone());
        warm = v;
        hi_lambda *= 2.0;
        if hi_lambda > 1e300 {
            return Err(Error::NoConvergence("no penalty level zeroes Aβ − c".into()));
        }
    };
    while hi.0 - lo.0 >= tol * hi.0.max(1.0) {
        let mid = 0.5 * (lo.0 + hi.0);
        let (v, it) = rp.solve(mid, Some(&lo.2), SOLVER_TOL, SOLVER_MAX_ITER)?;
        if at_zero(&v) {
            hi = (mid, rp.report(&v, mid, it), v);
        } else {
            lo = (mid, rp.report(&v, mid, it), v);
        }
    }
    Ok(Bracket {
        below: lo.0,
        above: hi.0,
        fit_below: Some(lo.1),
        fit_above: hi.1,
    })
}

/// Zero-threshold by bisection: midpoint of a bracket narrower than
/// `tol · max(1, λ)`.
pub fn oracle_zero_threshold(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyp: &LinearHypothesis,
    norm: PenaltyNorm,
    tol: f64,
) -> Result<f64> {
    Ok(zero_threshold_bracket(x, y, hyp, norm, tol)?.midpoint())
}

/// Least squares under `Aβ = c` from the bordered system
/// `[XᵀX Aᵀ; A 0] (β, z) = (Xᵀy, c)`; `z` is the Lagrange multiplier.
pub fn constrained_ls(x: &DMatrix<f64>, y: &DVector<f64>, hyp: &LinearHypothesis) -> Result<(DVector<f64>, DVector<f64>)> {
    let a = hyp.a_matrix();
    let (n, p) = x.shape();
    let r = a.nrows();
    if y.len() != n || a.ncols() != p {
        return Err(Error::DimensionMismatch("x, y and the hypothesis disagree".into()));
    }
    let mut kkt = DMatrix::zeros(p + r, p + r);
    kkt.view_mut((0, 0), (p, p)).copy_from(&(x.transpose() * x));
    kkt.view_mut((0, p), (p, r)).copy_from(&a.transpose());
    kkt.view_mut((p, 0), (r, p)).copy_from(a);
    let mut rhs = DVector::zeros(p + r);
    rhs.rows_mut(0, p).copy_from(&(x.transpose() * y));
    rhs.rows_mut(p, r).copy_from(hyp.c_vector());

    let sv = kkt.clone().singular_values();
    let smax = sv.amax();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin > (p + r) as f64 * f64::EPSILON * smax * 1e3) {
        return Err(Error::SingularSystem("bordered normal equations are singular".into()));
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("bordered normal equations are singular".into()))?;
    Ok((sol.rows(0, p).into_owned(), sol.rows(p, r).into_owned()))
}

/// Dual norm of a multiplier: `‖z‖∞` for `ℓ1`, the largest block 2-norm for `ℓ2`.
pub fn dual_norm(z: &DVector<f64>, norm: PenaltyNorm, blocks: &[Vec<usize>]) -> f64 {
    match norm {
        PenaltyNorm::L1 => z.amax(),
        PenaltyNorm::L2 => blocks
            .iter()
            .map(|b| b.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max),
    }
}
