//! Running thresholding tests: single statistics, the composite max-ratio
//! test, and confidence regions obtained by inverting a pivotal test.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::calibration::{p_value, CalibrationCache, CalibrationResult, CompositeCalibration, NullModel};
use crate::error::{Error, Result};
use crate::hypothesis::{min_norm_solution, DesignMatrix, LinearHypothesis};
use crate::stats::{Partition, PreparedStatistic, StatKind, StatValue, StatisticSpec};

/// Outcome of one test, serializable as a flat record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: String,
    pub observed: f64,
    pub lambda_alpha: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    /// Monte-Carlo draws behind the threshold; `0` for the exact F threshold.
    pub m_draws: usize,
    pub seed: u64,
    pub degenerate_note: Option<String>,
}

impl TestResult {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate_note.is_some()
    }
}

/// Monte-Carlo settings shared by the test runners.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub m: usize,
    pub seed: u64,
    /// Known noise level. Needed only by the non-square-root affine
    /// statistics, whose null distribution scales with `σ`.
    pub noise_sd: Option<f64>,
    pub cache: Option<Arc<CalibrationCache>>,
}

impl McConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        Self {
            m,
            seed,
            noise_sd: None,
            cache: None,
        }
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Self {
        self.noise_sd = Some(sd);
        self
    }

    pub fn with_cache(mut self, cache: Arc<CalibrationCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    fn calibrate(
        &self,
        stat: &PreparedStatistic,
        hyp: &LinearHypothesis,
        model: &NullModel,
        alpha: f64,
    ) -> Result<CalibrationResult> {
        match &self.cache {
            Some(cache) => cache.calibrate(stat, hyp, model, self.m, alpha, self.seed),
            None => crate::calibration::calibrate(stat, model, self.m, alpha, self.seed),
        }
    }
}

/// Null model matching a prepared statistic.
pub fn null_model_for(
    stat: &PreparedStatistic,
    hyp: &LinearHypothesis,
    y: &DVector<f64>,
    noise_sd: Option<f64>,
) -> Result<NullModel> {
    let x = stat.design();
    let kind = stat.spec().kind;
    let gaussian = |sd: f64| -> Result<NullModel> {
        let beta_c = min_norm_solution(hyp.a_matrix(), hyp.c_vector())?;
        Ok(NullModel::GaussianPivotal {
            mean: x.values() * beta_c,
            noise_sd: sd,
        })
    };
    match kind {
        StatKind::SqrtAffineLasso | StatKind::SqrtAffineGroupLasso | StatKind::FisherWeighted => gaussian(1.0),
        StatKind::AffineLasso | StatKind::AffineGroupLasso => gaussian(noise_sd.ok_or_else(|| {
            Error::NotApplicable(format!(
                "{kind} is not scale-free; supply the noise level or use the square-root variant"
            ))
        })?),
        // median-centred signs are location and scale free
        StatKind::LadSign => Ok(NullModel::GaussianPivotal {
            mean: DVector::zeros(x.nrows()),
            noise_sd: 1.0,
        }),
        StatKind::GlmScoreSup | StatKind::GlmScoreGroup => {
            let family = stat.spec().glm_family.expect("GLM statistics carry a family");
            NullModel::glm_plugin(family, y.as_slice())
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("level must lie in (0, 1), got {alpha}")))
    }
}

const DEGENERATE_NOTE: &str = "degenerate: the statistic's denominator vanished on the observed data";

/// Threshold test of `H0: Aβ = c`.
pub fn run_test(
    y: &DVector<f64>,
    x: &DesignMatrix,
    hyp: &LinearHypothesis,
    spec: &StatisticSpec,
    alpha: f64,
    cfg: &McConfig,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("response has length {} but X has {} rows", y.len(), x.nrows())));
    }
    let stat = PreparedStatistic::new(spec, x, hyp)?;
    test_prepared(&stat, hyp, y, alpha, cfg)
}

/// [`run_test`] for a statistic already bound to its design and hypothesis.
pub fn test_prepared(
    stat: &PreparedStatistic,
    hyp: &LinearHypothesis,
    y: &DVector<f64>,
    alpha: f64,
    cfg: &McConfig,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if let Some((df1, df2)) = stat.fisher_df() {
        return fisher_exact(stat, y, alpha, df1, df2, cfg.seed);
    }
    let model = null_model_for(stat, hyp, y, cfg.noise_sd)?;
    let cal = cfg.calibrate(stat, hyp, &model, alpha)?;
    run_test_with_calibration(stat, y, &cal)
}

/// Evaluates the observed statistic against an existing calibration.
pub fn run_test_with_calibration(stat: &PreparedStatistic, y: &DVector<f64>, cal: &CalibrationResult) -> Result<TestResult> {
    let observed = stat.eval(y)?;
    let id = stat.spec().id();
    let p = p_value(observed, cal, &id)?;
    Ok(decide(id, observed, cal.lambda_alpha, p, cal.alpha, cal.m_draws, cal.seed))
}

fn decide(statistic: String, observed: StatValue, lambda_alpha: f64, p_value: f64, alpha: f64, m_draws: usize, seed: u64) -> TestResult {
    if observed.degenerate {
        return TestResult {
            statistic,
            observed: f64::NAN,
            lambda_alpha,
            p_value: 1.0,
            reject: false,
            alpha,
            m_draws,
            seed,
            degenerate_note: Some(DEGENERATE_NOTE.to_string()),
        };
    }
    TestResult {
        statistic,
        observed: observed.value,
        lambda_alpha,
        p_value,
        reject: observed.value > lambda_alpha,
        alpha,
        m_draws,
        seed,
        degenerate_note: None,
    }
}

/// Exact threshold `√(R · F⁻¹_{R, N−P}(1 − α))` for the Fisher-weighted statistic.
pub fn fisher_threshold(alpha: f64, df1: usize, df2: usize) -> Result<f64> {
    let f = FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    Ok((df1 as f64 * f.inverse_cdf(1.0 - alpha)).sqrt())
}

fn fisher_exact(stat: &PreparedStatistic, y: &DVector<f64>, alpha: f64, df1: usize, df2: usize, seed: u64) -> Result<TestResult> {
    let observed = stat.eval(y)?;
    let lambda_alpha = fisher_threshold(alpha, df1, df2)?;
    let p = if observed.degenerate {
        1.0
    } else {
        let f = FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        f.sf(observed.value * observed.value / df1 as f64)
    };
    Ok(decide(stat.spec().id(), observed, lambda_alpha, p, alpha, 0, seed))
}

/// Default components of the composite test: square-root lasso (sup norm) and
/// square-root group lasso with the whole hypothesis as one group.
pub fn default_composite_pair() -> (StatisticSpec, StatisticSpec) {
    (
        StatisticSpec::sqrt_affine_lasso(),
        StatisticSpec::sqrt_affine_group_lasso(Partition::Whole),
    )
}

/// Composite max-ratio test. `lambda_alpha` in the result is the composite
/// threshold `κ_α`, and `observed` the composite value.
pub fn run_composite(
    y: &DVector<f64>,
    x: &DesignMatrix,
    hyp: &LinearHypothesis,
    spec1: &StatisticSpec,
    spec2: &StatisticSpec,
    alpha: f64,
    cfg: &McConfig,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let s1 = PreparedStatistic::new(spec1, x, hyp)?;
    let s2 = PreparedStatistic::new(spec2, x, hyp)?;
    composite_prepared(&s1, &s2, hyp, y, alpha, cfg)
}

/// [`run_composite`] for prepared statistics.
pub fn composite_prepared(
    s1: &PreparedStatistic,
    s2: &PreparedStatistic,
    hyp: &LinearHypothesis,
    y: &DVector<f64>,
    alpha: f64,
    cfg: &McConfig,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if s1.fisher_df().is_some() || s2.fisher_df().is_some() {
        return Err(Error::NotApplicable("the composite test calibrates by simulation; use a square-root statistic".into()));
    }
    let model = null_model_for(s1, hyp, y, cfg.noise_sd)?;
    if null_model_for(s2, hyp, y, cfg.noise_sd)? != model {
        return Err(Error::NotApplicable("composite components need a common null model".into()));
    }
    let comp = match &cfg.cache {
        Some(cache) => cache.calibrate_composite(s1, s2, hyp, &model, cfg.m, alpha, cfg.seed)?,
        None => crate::calibration::calibrate_composite(s1, s2, &model, cfg.m, alpha, cfg.seed)?,
    };
    composite_with_calibration(s1, s2, y, &comp)
}

/// Composite decision against an existing calibration.
pub fn composite_with_calibration(
    s1: &PreparedStatistic,
    s2: &PreparedStatistic,
    y: &DVector<f64>,
    comp: &CompositeCalibration,
) -> Result<TestResult> {
    let v1 = s1.eval(y)?;
    let v2 = s2.eval(y)?;
    let id = format!("composite({},{})", s1.spec().id(), s2.spec().id());
    let m = comp.sorted_composite.len();
    let seed = comp.cal_1.seed;
    Ok(match comp.composite_value(v1, v2) {
        Some(v) => decide(id, StatValue::new(v), comp.kappa_alpha, comp.p_value(v), comp.alpha, m, seed),
        None => decide(id, StatValue::degenerate(), comp.kappa_alpha, 1.0, comp.alpha, m, seed),
    })
}

/// Confidence region `{c : λ_CR(c; y) ≤ λ_α}` for a fixed `A`, built from a
/// statistic whose null law does not depend on `c`.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    stat: PreparedStatistic,
    r: usize,
    y: DVector<f64>,
    lambda_alpha: f64,
}

/// Membership over a lattice. For `R = 1` the scan also reports the smallest
/// and largest member.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionScan {
    pub points: Vec<Vec<f64>>,
    pub member: Vec<bool>,
    pub interval: Option<(f64, f64)>,
}

/// Candidate values of `c`: a 1-D grid, or the Cartesian product of two grids.
#[derive(Debug, Clone, PartialEq)]
pub enum Lattice {
    Line(Vec<f64>),
    Plane(Vec<f64>, Vec<f64>),
}

impl Lattice {
    fn dim(&self) -> usize {
        match self {
            Lattice::Line(_) => 1,
            Lattice::Plane(..) => 2,
        }
    }

    fn points(&self) -> Vec<Vec<f64>> {
        match self {
            Lattice::Line(g) => g.iter().map(|&v| vec![v]).collect(),
            Lattice::Plane(g1, g2) => g1.iter().flat_map(|&a| g2.iter().map(move |&b| vec![a, b])).collect(),
        }
    }
}

impl ConfidenceRegion {
    /// `hyp` fixes `A` (and the grouping); its `c` is irrelevant.
    pub fn new(
        y: &DVector<f64>,
        x: &DesignMatrix,
        hyp: &LinearHypothesis,
        spec: &StatisticSpec,
        lambda_alpha: f64,
    ) -> Result<Self> {
        if !matches!(
            spec.kind,
            StatKind::SqrtAffineLasso | StatKind::SqrtAffineGroupLasso | StatKind::FisherWeighted
        ) {
            return Err(Error::NotApplicable(format!(
                "confidence regions need a statistic whose null law is free of c; {} is not",
                spec.kind
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!("response has length {} but X has {} rows", y.len(), x.nrows())));
        }
        Ok(Self {
            stat: PreparedStatistic::new(spec, x, hyp)?,
            r: hyp.r(),
            y: y.clone(),
            lambda_alpha,
        })
    }

    /// Region at level `1 − α`, calibrated the same way `run_test` would.
    pub fn calibrated(
        y: &DVector<f64>,
        x: &DesignMatrix,
        hyp: &LinearHypothesis,
        spec: &StatisticSpec,
        alpha: f64,
        cfg: &McConfig,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let mut region = Self::new(y, x, hyp, spec, 0.0)?;
        region.lambda_alpha = match region.stat.fisher_df() {
            Some((df1, df2)) => fisher_threshold(alpha, df1, df2)?,
            None => {
                let model = null_model_for(&region.stat, hyp, y, cfg.noise_sd)?;
                cfg.calibrate(&region.stat, hyp, &model, alpha)?.lambda_alpha
            }
        };
        Ok(region)
    }

    pub fn lambda_alpha(&self) -> f64 {
        self.lambda_alpha
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// `λ_CR(c; y)`; degenerate when the data are fitted exactly under `c`.
    pub fn lambda_cr(&self, c: &DVector<f64>) -> Result<StatValue> {
        self.stat.with_c(c)?.eval(&self.y)
    }

    /// Degenerate values count as members, mirroring the test's no-reject rule.
    pub fn member(&self, c: &DVector<f64>) -> Result<bool> {
        let v = self.lambda_cr(c)?;
        Ok(v.degenerate || v.value <= self.lambda_alpha)
    }

    pub fn scan(&self, lattice: &Lattice) -> Result<RegionScan> {
        let r = self.r();
        if r > 2 {
            return Err(Error::UnsupportedDimension(r));
        }
        if lattice.dim() != r {
            return Err(Error::DimensionMismatch(format!("lattice is {}-dimensional but R = {r}", lattice.dim())));
        }
        let points = lattice.points();
        let member = points
            .iter()
            .map(|c| self.member(&DVector::from_column_slice(c)))
            .collect::<Result<Vec<bool>>>()?;
        let interval = if r == 1 {
            let inside: Vec<f64> = points.iter().zip(&member).filter(|(_, &m)| m).map(|(c, _)| c[0]).collect();
            let lo = inside.iter().copied().reduce(f64::min);
            let hi = inside.iter().copied().reduce(f64::max);
            lo.zip(hi)
        } else {
            None
        };
        Ok(RegionScan { points, member, interval })
    }
}

/// Point query `λ_CR(c; y) ≤ λ_α`.
pub fn cr_member(
    c: &DVector<f64>,
    y: &DVector<f64>,
    x: &DesignMatrix,
    hyp: &LinearHypothesis,
    spec: &StatisticSpec,
    lambda_alpha: f64,
) -> Result<bool> {
    ConfidenceRegion::new(y, x, hyp, spec, lambda_alpha)?.member(c)
}

/// Membership mask over a lattice of `c` values (`R ≤ 2`).
pub fn cr_grid(
    y: &DVector<f64>,
    x: &DesignMatrix,
    hyp: &LinearHypothesis,
    spec: &StatisticSpec,
    lambda_alpha: f64,
    lattice: &Lattice,
) -> Result<RegionScan> {
    ConfidenceRegion::new(y, x, hyp, spec, lambda_alpha)?.scan(lattice)
}
