//! Simulation harness: random designs, sparse and dense alternatives, GLM
//! responses, power and level estimation, and the classical F and
//! likelihood-ratio baselines.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::calibration::{min_draws, CalibrationCache};
use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::hypothesis::{DesignMatrix, LinearHypothesis, SubsetHypothesis};
use crate::inference::{composite_prepared, test_prepared, McConfig, TestResult};
use crate::oracle::constrained_ls;
use crate::rng::{derive_seed, substream};
use crate::stats::{Partition, PreparedStatistic, StatKind, StatisticSpec};

/// Row covariance of a random design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Covariance {
    Identity,
    /// `Σ_ij = ρ^|i−j|`.
    Ar1 { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub covariance: Covariance,
    /// Center each column and scale it to unit sample standard deviation.
    pub standardize: bool,
    /// Prepend an all-ones column.
    pub intercept: bool,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            covariance: Covariance::Ar1 { rho: 0.5 },
            standardize: true,
            intercept: true,
        }
    }
}

/// Random design with i.i.d. Gaussian rows.
pub fn gen_design<R: Rng + ?Sized>(n: usize, p: usize, spec: &DesignSpec, rng: &mut R) -> Result<DesignMatrix> {
    if n < 2 || p < 1 {
        return Err(Error::InvalidSpec(format!("design needs n ≥ 2 and p ≥ 1, got n = {n}, p = {p}")));
    }
    let mut x = DMatrix::<f64>::zeros(n, p);
    match spec.covariance {
        Covariance::Identity => x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
        Covariance::Ar1 { rho } => {
            if !(rho.abs() < 1.0) {
                return Err(Error::InvalidSpec(format!("AR(1) correlation must lie in (−1, 1), got {rho}")));
            }
            let innov = (1.0 - rho * rho).sqrt();
            for i in 0..n {
                let mut prev: f64 = rng.sample(StandardNormal);
                x[(i, 0)] = prev;
                for j in 1..p {
                    prev = rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
                    x[(i, j)] = prev;
                }
            }
        }
    }
    if spec.standardize {
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
    }
    let d = DesignMatrix::new(x)?;
    Ok(if spec.intercept { d.with_intercept() } else { d })
}

/// Alternative with `s` coefficients of magnitude `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlternativeSpec {
    pub s: usize,
    pub theta: f64,
}

/// `θ` times a random permutation of `(±1, …, ±1, 0, …, 0)` with `s` signs.
pub fn gen_beta<R: Rng + ?Sized>(alt: &AlternativeSpec, p: usize, rng: &mut R) -> Result<DVector<f64>> {
    if alt.s > p {
        return Err(Error::InvalidSpec(format!("sparsity {} exceeds dimension {p}", alt.s)));
    }
    if !(alt.theta >= 0.0 && alt.theta.is_finite()) {
        return Err(Error::InvalidSpec(format!("signal size must be finite and nonnegative, got {}", alt.theta)));
    }
    let mut beta = DVector::zeros(p);
    for j in sample_indices(rng, p, alt.s) {
        beta[j] = if rng.random::<bool>() { alt.theta } else { -alt.theta };
    }
    Ok(beta)
}

/// Largest linear predictor accepted for Poisson responses.
pub const MAX_POISSON_ETA: f64 = 30.0;

/// Response with mean `g⁻¹(β0 + Xβ)` under the canonical link; Gaussian noise
/// has unit variance.
pub fn gen_response<R: Rng + ?Sized>(
    x: &DesignMatrix,
    beta0: f64,
    beta: &DVector<f64>,
    family: GlmFamily,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if beta.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!("β has length {} but X has {} columns", beta.len(), x.ncols())));
    }
    let eta = x.values() * beta;
    let mut y = DVector::zeros(eta.len());
    for (i, &e) in eta.iter().enumerate() {
        let e = e + beta0;
        y[i] = match family {
            GlmFamily::Gaussian => e + rng.sample::<f64, _>(StandardNormal),
            GlmFamily::Bernoulli => {
                let mu = family.canonical_inverse_link(e);
                if rng.random::<f64>() < mu {
                    1.0
                } else {
                    0.0
                }
            }
            GlmFamily::Poisson => {
                if e > MAX_POISSON_ETA {
                    return Err(Error::Overflow(format!("Poisson linear predictor {e} exceeds {MAX_POISSON_ETA}")));
                }
                let mu = family.canonical_inverse_link(e);
                if mu <= 0.0 {
                    0.0
                } else {
                    Poisson::new(mu).map_err(|err| Error::Overflow(err.to_string()))?.sample(rng)
                }
            }
        };
    }
    Ok(y)
}

/// A test compared in an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// A thresholding statistic. GLM statistics take the experiment's family.
    Threshold(StatKind),
    /// Composite of the square-root lasso and square-root group lasso.
    Composite,
    /// Classical F-test from two least-squares fits.
    FTest,
    /// Likelihood-ratio test against the intercept-only GLM.
    Lrt,
}

impl Method {
    pub fn is_baseline(&self) -> bool {
        matches!(self, Method::FTest | Method::Lrt)
    }

    fn id(&self, family: GlmFamily) -> String {
        match self {
            Method::Threshold(kind) => self.spec(*kind, family).id(),
            other => other.to_string(),
        }
    }

    fn spec(&self, kind: StatKind, family: GlmFamily) -> StatisticSpec {
        let spec = StatisticSpec::new(kind);
        let spec = if kind.is_group() { spec.with_partition(Partition::Whole) } else { spec };
        if kind.is_glm() {
            spec.with_family(family)
        } else {
            spec
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Threshold(kind) => write!(f, "{kind}"),
            Method::Composite => f.write_str("composite"),
            Method::FTest => f.write_str("f_test"),
            Method::Lrt => f.write_str("lrt"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composite" => Ok(Method::Composite),
            "f_test" | "fisher" => Ok(Method::FTest),
            "lrt" => Ok(Method::Lrt),
            other => other.parse::<StatKind>().map(Method::Threshold),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Thresholding tests suited to a family and dimension.
pub fn default_methods(family: GlmFamily, p: usize, n: usize) -> Vec<Method> {
    match family {
        GlmFamily::Gaussian => {
            let mut m = vec![
                Method::Threshold(StatKind::SqrtAffineLasso),
                Method::Threshold(StatKind::SqrtAffineGroupLasso),
                Method::Composite,
                Method::Threshold(StatKind::LadSign),
            ];
            if p + 1 < n {
                m.push(Method::Threshold(StatKind::FisherWeighted));
            }
            m
        }
        _ => vec![
            Method::Threshold(StatKind::GlmScoreSup),
            Method::Threshold(StatKind::GlmScoreGroup),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub family: GlmFamily,
    #[serde(default)]
    pub beta0: f64,
    pub alpha: f64,
    pub m_calib: usize,
    pub n_reps: usize,
    pub theta_grid: Vec<f64>,
    pub s_values: Vec<usize>,
    #[serde(default)]
    pub design: DesignSpec,
    pub statistics: Vec<Method>,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Config testing the default thresholding statistics at `θ = 0`.
    pub fn level(n: usize, p: usize, family: GlmFamily, seed: u64) -> Self {
        Self {
            n,
            p,
            family,
            beta0: 0.0,
            alpha: 0.05,
            m_calib: 999,
            n_reps: 1000,
            theta_grid: vec![0.0],
            s_values: vec![0],
            design: DesignSpec::default(),
            statistics: default_methods(family, p, n),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n < 2 || self.p < 1 {
            return bad(format!("need n ≥ 2 and p ≥ 1, got n = {}, p = {}", self.n, self.p));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.alpha));
        }
        if self.m_calib < min_draws(self.alpha).max(1) {
            return Err(Error::InsufficientDraws {
                m: self.m_calib,
                alpha: self.alpha,
                min: min_draws(self.alpha).max(1),
            });
        }
        if self.n_reps == 0 {
            return bad("n_reps must be positive".into());
        }
        if let Some(s) = self.s_values.iter().find(|&&s| s > self.p) {
            return bad(format!("sparsity {s} exceeds p = {}", self.p));
        }
        if let Some(t) = self.theta_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return bad(format!("signal size {t} must be finite and nonnegative"));
        }
        let columns = self.p + usize::from(self.design.intercept);
        if self.statistics.iter().any(Method::is_baseline) && columns >= self.n {
            return bad(format!("F and likelihood-ratio baselines need p < n (X has {columns} columns, n = {})", self.n));
        }
        if self.statistics.contains(&Method::FTest) && self.family != GlmFamily::Gaussian {
            return bad("the F-test baseline is Gaussian only".into());
        }
        Ok(())
    }

    /// Hypothesis that every non-intercept coefficient is zero.
    pub fn hypothesis(&self) -> Result<LinearHypothesis> {
        let cols = self.p + usize::from(self.design.intercept);
        SubsetHypothesis::zero(usize::from(self.design.intercept), cols).to_linear(cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub statistic_id: String,
    pub family: GlmFamily,
    pub s: usize,
    pub theta: f64,
    pub power_estimate: f64,
    pub mc_standard_error: f64,
    pub n_reps: usize,
    /// `ok`, or the first error met in the cell.
    pub status: String,
}

const DESIGN_TAG: u64 = 0x0de5;
const DATA_TAG: u64 = 0xda7a;
const CALIB_TAG: u64 = 0xca1b;

enum Runner {
    Single(PreparedStatistic),
    Composite(PreparedStatistic, PreparedStatistic),
    FTest,
    Lrt,
}

/// Estimated rejection rates over the `(statistic, s, θ)` grid.
pub fn estimate_power(cfg: &ExperimentConfig) -> Result<Vec<PowerRow>> {
    estimate_power_with_cache(cfg, &Arc::new(CalibrationCache::new()))
}

/// [`estimate_power`] sharing calibrations through `cache`.
///
/// Every test sees the same datasets. Dataset `rep` of cell `(s, θ)` comes
/// from its own substream; at `θ = 0` the stream ignores `s`, so null cells
/// coincide with [`estimate_level`].
pub fn estimate_power_with_cache(cfg: &ExperimentConfig, cache: &Arc<CalibrationCache>) -> Result<Vec<PowerRow>> {
    cfg.validate()?;
    let x = gen_design(cfg.n, cfg.p, &cfg.design, &mut substream(derive_seed(cfg.seed, &[DESIGN_TAG]), 0))?;
    let hyp = cfg.hypothesis()?;
    let mc = McConfig::new(cfg.m_calib, derive_seed(cfg.seed, &[CALIB_TAG])).with_cache(Arc::clone(cache));

    let runners: Vec<Result<Runner>> = cfg
        .statistics
        .iter()
        .map(|m| match m {
            Method::Threshold(kind) => PreparedStatistic::new(&m.spec(*kind, cfg.family), &x, &hyp).map(Runner::Single),
            Method::Composite => {
                let (a, b) = crate::inference::default_composite_pair();
                Ok(Runner::Composite(
                    PreparedStatistic::new(&a, &x, &hyp)?,
                    PreparedStatistic::new(&b, &x, &hyp)?,
                ))
            }
            Method::FTest => Ok(Runner::FTest),
            Method::Lrt => Ok(Runner::Lrt),
        })
        .collect();

    let cells: Vec<(usize, f64)> = cfg
        .s_values
        .iter()
        .flat_map(|&s| cfg.theta_grid.iter().map(move |&t| (s, t)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| (0..cfg.n_reps as u64).map(move |r| (c, r))).collect();

    let outcomes: Vec<Vec<Result<bool>>> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let (s, theta) = cells[c];
            let data = dataset(cfg, &x, s, theta, rep);
            runners
                .iter()
                .map(|runner| {
                    let runner = runner.as_ref().map_err(Clone::clone)?;
                    let y = data.as_ref().map_err(Clone::clone)?;
                    run_one(runner, &x, &hyp, y, cfg, &mc).map(|r| r.reject)
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.statistics.len() * cells.len());
    for (k, method) in cfg.statistics.iter().enumerate() {
        for (c, &(s, theta)) in cells.iter().enumerate() {
            let results = &outcomes[c * cfg.n_reps..(c + 1) * cfg.n_reps];
            let mut rejects = 0usize;
            let mut done = 0usize;
            let mut status = "ok".to_string();
            for r in results {
                match &r[k] {
                    Ok(rej) => {
                        done += 1;
                        rejects += usize::from(*rej);
                    }
                    Err(e) if status == "ok" => status = format!("error: {e}"),
                    Err(_) => {}
                }
            }
            let (power, se) = if done == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let p = rejects as f64 / done as f64;
                (p, (p * (1.0 - p) / done as f64).sqrt())
            };
            rows.push(PowerRow {
                statistic_id: method.id(cfg.family),
                family: cfg.family,
                s,
                theta,
                power_estimate: power,
                mc_standard_error: se,
                n_reps: done,
                status,
            });
        }
    }
    Ok(rows)
}

fn dataset(cfg: &ExperimentConfig, x: &DesignMatrix, s: usize, theta: f64, rep: u64) -> Result<DVector<f64>> {
    let null = theta == 0.0 || s == 0;
    let key = if null { [DATA_TAG, 0, 0] } else { [DATA_TAG, s as u64, theta.to_bits()] };
    let mut rng = substream(derive_seed(cfg.seed, &key), rep);
    let offset = usize::from(cfg.design.intercept);
    let mut beta = DVector::zeros(x.ncols());
    if !null {
        let b = gen_beta(&AlternativeSpec { s, theta }, cfg.p, &mut rng)?;
        beta.rows_mut(offset, cfg.p).copy_from(&b);
    }
    gen_response(x, cfg.beta0, &beta, cfg.family, &mut rng)
}

fn run_one(
    runner: &Runner,
    x: &DesignMatrix,
    hyp: &LinearHypothesis,
    y: &DVector<f64>,
    cfg: &ExperimentConfig,
    mc: &McConfig,
) -> Result<TestResult> {
    match runner {
        Runner::Single(stat) => test_prepared(stat, hyp, y, cfg.alpha, mc),
        Runner::Composite(a, b) => composite_prepared(a, b, hyp, y, cfg.alpha, mc),
        Runner::FTest => baseline_f_test(y, x, hyp, cfg.alpha),
        Runner::Lrt => baseline_lrt(y, x, cfg.family, cfg.alpha),
    }
}

/// Rejection rates under `H0` (`θ = 0`), identical to the null cells of
/// [`estimate_power`] with the same seed.
pub fn estimate_level(cfg: &ExperimentConfig) -> Result<Vec<PowerRow>> {
    estimate_level_with_cache(cfg, &Arc::new(CalibrationCache::new()))
}

pub fn estimate_level_with_cache(cfg: &ExperimentConfig, cache: &Arc<CalibrationCache>) -> Result<Vec<PowerRow>> {
    let null = ExperimentConfig {
        theta_grid: vec![0.0],
        s_values: vec![0],
        ..cfg.clone()
    };
    estimate_power_with_cache(&null, cache)
}

/// One config per `(family, p)` pair, with the default tests of each family.
pub fn level_scenarios(base: &ExperimentConfig, families: &[GlmFamily], p_values: &[usize]) -> Vec<ExperimentConfig> {
    families
        .iter()
        .flat_map(|&family| {
            p_values.iter().map(move |&p| ExperimentConfig {
                family,
                p,
                statistics: default_methods(family, p, base.n),
                theta_grid: vec![0.0],
                s_values: vec![0],
                ..base.clone()
            })
        })
        .collect()
}

/// Cells whose power drops by more than two standard errors as `θ` grows.
pub fn monotonicity_warnings(rows: &[PowerRow]) -> Vec<String> {
    let mut out = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.statistic_id == b.statistic_id && a.s == b.s && b.theta > a.theta {
            let tol = 2.0 * (a.mc_standard_error.powi(2) + b.mc_standard_error.powi(2)).sqrt();
            if b.power_estimate < a.power_estimate - tol {
                out.push(format!(
                    "{} s={}: power falls from {} at θ={} to {} at θ={}",
                    a.statistic_id, a.s, a.power_estimate, a.theta, b.power_estimate, b.theta
                ));
            }
        }
    }
    out
}

pub fn write_power_csv<W: Write>(rows: &[PowerRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::InvalidSpec(format!("writing power table: {e}")))?;
    }
    wr.flush().map_err(|e| Error::InvalidSpec(format!("writing power table: {e}")))?;
    Ok(())
}

pub fn read_power_csv<R: Read>(r: R) -> Result<Vec<PowerRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<PowerRow>, _>>()
        .map_err(|e| Error::InvalidSpec(format!("reading power table: {e}")))
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let tol = x.nrows().max(x.ncols()) as f64 * f64::EPSILON * smax;
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::RankDeficient("design is rank deficient".into()));
    }
    svd.solve(y, tol).map_err(|e| Error::RankDeficient(e.to_string()))
}

fn check_baseline(y: &DVector<f64>, x: &DesignMatrix) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("response has length {} but X has {} rows", y.len(), x.nrows())));
    }
    if x.ncols() >= x.nrows() {
        return Err(Error::NotApplicable(format!(
            "classical baselines need P < N, got P = {}, N = {}",
            x.ncols(),
            x.nrows()
        )));
    }
    Ok(())
}

/// Classical F-test from the unrestricted and the restricted least-squares fits.
/// `observed` is `F` and `lambda_alpha` the `1 − α` quantile of `F_{R, N−P}`.
pub fn baseline_f_test(y: &DVector<f64>, x: &DesignMatrix, hyp: &LinearHypothesis, alpha: f64) -> Result<TestResult> {
    check_baseline(y, x)?;
    let xv = x.values();
    let (n, p) = xv.shape();
    let full = least_squares(xv, y)?;
    let rss = (y - xv * full).norm_squared();
    let (restricted, _) = constrained_ls(xv, y, hyp)?;
    let rss0 = (y - xv * restricted).norm_squared();
    let (df1, df2) = (hyp.r() as f64, (n - p) as f64);
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let crit = dist.inverse_cdf(1.0 - alpha);
    if rss <= 0.0 {
        return Err(Error::Degenerate("perfect fit: residual sum of squares is zero".into()));
    }
    let f = ((rss0 - rss).max(0.0) / df1) / (rss / df2);
    Ok(TestResult {
        statistic: "f_test".into(),
        observed: f,
        lambda_alpha: crit,
        p_value: dist.sf(f),
        reject: f > crit,
        alpha,
        m_draws: 0,
        seed: 0,
        degenerate_note: None,
    })
}

/// Fitted GLM from iteratively reweighted least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub beta: DVector<f64>,
    pub deviance: f64,
    pub iterations: usize,
    /// `false` when the iteration cap was hit, typically under separation.
    pub converged: bool,
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;

/// Unit deviance summed over observations. Gaussian uses unit dispersion.
pub fn deviance(family: GlmFamily, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    y.iter()
        .zip(mu.iter())
        .map(|(&y, &m)| match family {
            GlmFamily::Gaussian => (y - m).powi(2),
            GlmFamily::Poisson => {
                let t = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
                2.0 * (t - (y - m))
            }
            GlmFamily::Bernoulli => {
                let m = m.clamp(1e-300, 1.0 - 1e-16);
                if y > 0.5 {
                    -2.0 * m.ln()
                } else {
                    -2.0 * (1.0 - m).ln()
                }
            }
        })
        .sum()
}

fn clamp_eta(family: GlmFamily, eta: f64) -> f64 {
    match family {
        GlmFamily::Gaussian => eta,
        GlmFamily::Bernoulli => eta.clamp(-35.0, 35.0),
        GlmFamily::Poisson => eta.clamp(-700.0, MAX_POISSON_ETA),
    }
}

/// Canonical-link GLM by IRLS with step halving.
pub fn fit_glm(x: &DMatrix<f64>, y: &DVector<f64>, family: GlmFamily) -> Result<GlmFit> {
    family.check_support(y.as_slice())?;
    let link = |mu: f64| match family {
        GlmFamily::Gaussian => mu,
        GlmFamily::Bernoulli => (mu / (1.0 - mu)).ln(),
        GlmFamily::Poisson => mu.ln(),
    };
    let mu0 = y.map(|v| match family {
        GlmFamily::Gaussian => v,
        GlmFamily::Bernoulli => (v + 0.5) / 2.0,
        GlmFamily::Poisson => v + 0.1,
    });
    let eta0 = mu0.map(link);
    let mut beta = least_squares(x, &eta0)?;
    let mean = |b: &DVector<f64>| (x * b).map(|e| family.canonical_inverse_link(clamp_eta(family, e)));
    let mut dev = deviance(family, y, &mean(&beta));
    for it in 1..=IRLS_MAX_ITER {
        let eta = (x * &beta).map(|e| clamp_eta(family, e));
        let mu = eta.map(|e| family.canonical_inverse_link(e));
        let w = mu.map(|m| family.variance_fn(m).max(1e-12));
        let z = DVector::from_fn(y.len(), |i, _| eta[i] + (y[i] - mu[i]) / w[i]);
        let sw = w.map(f64::sqrt);
        let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
        let zw = z.component_mul(&sw);
        let target = least_squares(&xw, &zw)?;
        let mut step = 1.0;
        let mut cand = target.clone();
        let mut cand_dev = deviance(family, y, &mean(&cand));
        while !(cand_dev.is_finite() && cand_dev <= dev * (1.0 + 1e-12) + 1e-12) && step > 1e-10 {
            step *= 0.5;
            cand = &beta + (&target - &beta) * step;
            cand_dev = deviance(family, y, &mean(&cand));
        }
        let change = (dev - cand_dev).abs() / (cand_dev.abs() + 0.1);
        beta = cand;
        dev = cand_dev;
        if change < IRLS_TOL {
            return Ok(GlmFit {
                beta,
                deviance: dev,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(GlmFit {
        beta,
        deviance: dev,
        iterations: IRLS_MAX_ITER,
        converged: false,
    })
}

/// Likelihood-ratio test of the full GLM against the intercept-only model,
/// referred to `χ²` with one degree of freedom per non-intercept column.
/// Gaussian responses are taken to have unit variance.
pub fn baseline_lrt(y: &DVector<f64>, x: &DesignMatrix, family: GlmFamily, alpha: f64) -> Result<TestResult> {
    check_baseline(y, x)?;
    let xv = x.values();
    let (full_x, df) = match x.intercept_column() {
        Some(_) => (xv.clone(), x.ncols() - 1),
        None => (xv.clone().insert_column(0, 1.0), x.ncols()),
    };
    let fit = fit_glm(&full_x, y, family)?;
    let ybar = y.mean();
    let null_dev = deviance(family, y, &DVector::from_element(y.len(), ybar));
    let stat = (null_dev - fit.deviance).max(0.0);
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let crit = chi.inverse_cdf(1.0 - alpha);
    Ok(TestResult {
        statistic: "lrt".into(),
        observed: stat,
        lambda_alpha: crit,
        p_value: chi.sf(stat),
        reject: stat > crit,
        alpha,
        m_draws: 0,
        seed: 0,
        degenerate_note: (!fit.converged).then(|| "fit did not converge; deviance taken at the last iterate".to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::build_reduction;
    use crate::stats::fisher_f;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn design_correlations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = DesignSpec {
            covariance: Covariance::Identity,
            standardize: false,
            intercept: false,
        };
        let x = gen_design(10_000, 2, &spec, &mut rng).unwrap();
        let v = x.values();
        assert!(corr(v.column(0).as_slice(), v.column(1).as_slice()).abs() < 0.1);

        let ar = gen_design(10_000, 3, &DesignSpec { intercept: false, ..DesignSpec::default() }, &mut rng).unwrap();
        let v = ar.values();
        for j in 0..2 {
            let r = corr(v.column(j).as_slice(), v.column(j + 1).as_slice());
            assert!((r - 0.5).abs() < 0.05, "{r}");
        }
        let col = v.column(2);
        assert!(col.mean().abs() < 1e-12);
        assert!((col.norm_squared() / 9_999.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_column_and_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gen_design(20, 1, &DesignSpec::default(), &mut rng).unwrap();
        assert_eq!(x.ncols(), 2);
        assert_eq!(x.intercept_column(), Some(0));
        assert!((x.values().column(1).mean()).abs() < 1e-12);
        assert!(gen_design(1, 3, &DesignSpec::default(), &mut rng).is_err());
    }

    #[test]
    fn beta_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(gen_beta(&AlternativeSpec { s: 0, theta: 2.0 }, 5, &mut rng).unwrap(), DVector::zeros(5));
        let full = gen_beta(&AlternativeSpec { s: 5, theta: 1.0 }, 5, &mut rng).unwrap();
        assert!(full.iter().all(|v| v.abs() == 1.0));
        let b = gen_beta(&AlternativeSpec { s: 3, theta: 0.7 }, 10, &mut rng).unwrap();
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 3);
        assert!(b.iter().all(|v| *v == 0.0 || v.abs() == 0.7));
        assert!(gen_beta(&AlternativeSpec { s: 6, theta: 1.0 }, 5, &mut rng).is_err());
    }

    #[test]
    fn beta_positions_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, draws) = (8, 10_000);
        let mut counts = [0usize; 8];
        let mut pos = 0usize;
        for _ in 0..draws {
            let b = gen_beta(&AlternativeSpec { s: 1, theta: 1.0 }, p, &mut rng).unwrap();
            let j = b.iter().position(|v| *v != 0.0).unwrap();
            counts[j] += 1;
            pos += usize::from(b[j] > 0.0);
        }
        let expect = draws as f64 / p as f64;
        let sd = (draws as f64 * (1.0 / p as f64) * (1.0 - 1.0 / p as f64)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 3.0 * sd, "{counts:?}");
        }
        assert!((pos as f64 / draws as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn response_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DesignMatrix::new(DMatrix::from_element(100_000, 1, 1.0)).unwrap();
        let zero = DVector::zeros(1);
        let b = gen_response(&x, -2.0, &zero, GlmFamily::Bernoulli, &mut rng).unwrap();
        assert!((b.mean() - 1.0 / (1.0 + 2f64.exp())).abs() < 0.004);
        let p = gen_response(&x, -2.0, &zero, GlmFamily::Poisson, &mut rng).unwrap();
        assert!((p.mean() - (-2f64).exp()).abs() < 0.004);
        let g = gen_response(&x, 0.0, &zero, GlmFamily::Gaussian, &mut rng).unwrap();
        assert!(g.mean().abs() < 0.01 && (g.variance() - 1.0).abs() < 0.02);
        let err = gen_response(&x, 31.0, &zero, GlmFamily::Poisson, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Overflow(_)));
    }

    #[test]
    fn f_test_agrees_with_fisher_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gen_design(30, 5, &DesignSpec::default(), &mut rng).unwrap();
        let hyp = SubsetHypothesis::zero(2, 6).to_linear(6).unwrap();
        let y = gen_response(&x, 1.0, &DVector::from_vec(vec![0.0, 0.3, 0.2, 0.0, 0.0, 0.4]), GlmFamily::Gaussian, &mut rng).unwrap();
        let base = baseline_f_test(&y, &x, &hyp, 0.05).unwrap();
        let ff = fisher_f(&x, &hyp, &y).unwrap();
        assert!((base.observed - ff.f).abs() < 1e-9 * ff.f);
        let too_wide = gen_design(5, 6, &DesignSpec::default(), &mut rng).unwrap();
        let h = SubsetHypothesis::zero(1, 7).to_linear(7).unwrap();
        assert!(matches!(baseline_f_test(&DVector::zeros(5), &too_wide, &h, 0.05), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn gaussian_lrt_is_rss_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = gen_design(40, 4, &DesignSpec::default(), &mut rng).unwrap();
        let y = gen_response(&x, 0.5, &DVector::from_vec(vec![0.0, 0.2, 0.0, -0.3, 0.1]), GlmFamily::Gaussian, &mut rng).unwrap();
        let lrt = baseline_lrt(&y, &x, GlmFamily::Gaussian, 0.05).unwrap();
        let hyp = SubsetHypothesis::zero(1, 5).to_linear(5).unwrap();
        let red = build_reduction(&x, &hyp, None).unwrap();
        let rss0 = red.annihilate(&(&y - x.values() * red.beta_c())).norm_squared();
        let full = least_squares(x.values(), &y).unwrap();
        let rss = (&y - x.values() * full).norm_squared();
        assert!((lrt.observed - (rss0 - rss)).abs() < 1e-8);
    }

    #[test]
    fn irls_matches_score_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = gen_design(200, 3, &DesignSpec::default(), &mut rng).unwrap();
        let beta = DVector::from_vec(vec![-0.5, 0.4, 0.0, -0.3]);
        for fam in [GlmFamily::Bernoulli, GlmFamily::Poisson] {
            let y = gen_response(&x, 0.0, &beta, fam, &mut rng).unwrap();
            let fit = fit_glm(x.values(), &y, fam).unwrap();
            assert!(fit.converged);
            let mu = (x.values() * &fit.beta).map(|e| fam.canonical_inverse_link(e));
            let score = x.values().transpose() * (&y - mu);
            assert!(score.amax() < 1e-5, "{fam}: {score}");
        }
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            n: 40,
            p: 6,
            family: GlmFamily::Gaussian,
            beta0: -2.0,
            alpha: 0.1,
            m_calib: 99,
            n_reps: 60,
            theta_grid: vec![0.0, 0.5, 1.5],
            s_values: vec![1, 6],
            design: DesignSpec::default(),
            statistics: vec![
                Method::Threshold(StatKind::SqrtAffineLasso),
                Method::Composite,
                Method::FTest,
                Method::Threshold(StatKind::FisherWeighted),
            ],
            seed: 3,
        }
    }

    #[test]
    fn power_table_shape_and_reproducibility() {
        let cfg = small_cfg();
        let rows = estimate_power(&cfg).unwrap();
        assert_eq!(rows.len(), 4 * 2 * 3);
        assert!(rows.iter().all(|r| r.status == "ok" && (0.0..=1.0).contains(&r.power_estimate)));
        assert_eq!(rows, estimate_power(&cfg).unwrap());
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(rows, single.install(|| estimate_power(&cfg).unwrap()));

        // F-test and the Fisher-weighted thresholding test decide identically
        for (f, fw) in rows[12..18].iter().zip(&rows[18..24]) {
            assert_eq!(f.power_estimate, fw.power_estimate);
        }
        // strong signal
        let strong = rows.iter().find(|r| r.statistic_id == "sqrt_affine_lasso" && r.s == 1 && r.theta == 1.5).unwrap();
        assert!(strong.power_estimate > 0.9);
    }

    #[test]
    fn null_cells_match_level_estimate() {
        let cfg = small_cfg();
        let rows = estimate_power(&cfg).unwrap();
        let level = estimate_level(&cfg).unwrap();
        for l in &level {
            for r in rows.iter().filter(|r| r.statistic_id == l.statistic_id && r.theta == 0.0) {
                assert_eq!(r.power_estimate, l.power_estimate);
            }
        }
    }

    #[test]
    fn per_cell_errors_become_status() {
        let cfg = ExperimentConfig {
            statistics: vec![Method::Threshold(StatKind::AffineLasso), Method::Threshold(StatKind::SqrtAffineLasso)],
            ..small_cfg()
        };
        let rows = estimate_power(&cfg).unwrap();
        assert!(rows[..6].iter().all(|r| r.status.starts_with("error")));
        assert!(rows[6..].iter().all(|r| r.status == "ok"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.p = 45;
        assert!(matches!(cfg.validate(), Err(Error::InvalidSpec(_))));
        let mut cfg = small_cfg();
        cfg.m_calib = 5;
        assert!(matches!(cfg.validate(), Err(Error::InsufficientDraws { .. })));
        let json = serde_json::to_string(&small_cfg()).unwrap();
        assert!(json.contains("\"composite\""));
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), small_cfg());
    }

    #[test]
    fn power_csv_round_trip() {
        let rows = vec![PowerRow {
            statistic_id: "glm_score_sup:poisson".into(),
            family: GlmFamily::Poisson,
            s: 1,
            theta: 0.25,
            power_estimate: 0.5,
            mc_standard_error: 0.05,
            n_reps: 100,
            status: "ok".into(),
        }];
        let mut buf = Vec::new();
        write_power_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("statistic_id,family,s,theta,power_estimate,mc_standard_error,n_reps,status\n"));
        assert_eq!(read_power_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn monotonicity_flags() {
        let row = |theta: f64, p: f64| PowerRow {
            statistic_id: "x".into(),
            family: GlmFamily::Gaussian,
            s: 1,
            theta,
            power_estimate: p,
            mc_standard_error: 0.01,
            n_reps: 100,
            status: "ok".into(),
        };
        assert!(monotonicity_warnings(&[row(0.0, 0.05), row(1.0, 0.5)]).is_empty());
        assert_eq!(monotonicity_warnings(&[row(0.0, 0.5), row(1.0, 0.2)]).len(), 1);
    }
}
