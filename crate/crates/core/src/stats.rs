//! Zero-thresholding statistics.
//!
//! For affine (group) lasso the smallest penalty that sets `Aβ̂ − c` to zero
//! has a closed form in terms of the multiplier `z = (AAᵀ)⁻¹ A Xᵀ r`: its
//! sup-norm (lasso) or the largest block 2-norm (group lasso). Square-root
//! variants divide by `‖r‖₂`, which makes the null distribution free of both
//! `β` (within `ker A` shifts) and `σ`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, QR};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::hypothesis::{build_reduction, numerical_rank, residual, DesignMatrix, LinearHypothesis, ReducedProblem};

/// Which zero-thresholding function a test is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    AffineLasso,
    AffineGroupLasso,
    SqrtAffineLasso,
    SqrtAffineGroupLasso,
    FisherWeighted,
    LadSign,
    GlmScoreSup,
    GlmScoreGroup,
}

impl StatKind {
    pub const ALL: [StatKind; 8] = [
        StatKind::AffineLasso,
        StatKind::AffineGroupLasso,
        StatKind::SqrtAffineLasso,
        StatKind::SqrtAffineGroupLasso,
        StatKind::FisherWeighted,
        StatKind::LadSign,
        StatKind::GlmScoreSup,
        StatKind::GlmScoreGroup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::AffineLasso => "affine_lasso",
            StatKind::AffineGroupLasso => "affine_group_lasso",
            StatKind::SqrtAffineLasso => "sqrt_affine_lasso",
            StatKind::SqrtAffineGroupLasso => "sqrt_affine_group_lasso",
            StatKind::FisherWeighted => "fisher_weighted",
            StatKind::LadSign => "lad_sign",
            StatKind::GlmScoreSup => "glm_score_sup",
            StatKind::GlmScoreGroup => "glm_score_group",
        }
    }

    pub fn is_group(self) -> bool {
        matches!(
            self,
            StatKind::AffineGroupLasso | StatKind::SqrtAffineGroupLasso | StatKind::GlmScoreGroup
        )
    }

    pub fn is_glm(self) -> bool {
        matches!(self, StatKind::GlmScoreSup | StatKind::GlmScoreGroup)
    }

    /// Exactly pivotal in `(β, σ)` under Gaussian errors.
    pub fn is_scale_pivotal(self) -> bool {
        matches!(
            self,
            StatKind::SqrtAffineLasso
                | StatKind::SqrtAffineGroupLasso
                | StatKind::FisherWeighted
                | StatKind::LadSign
        )
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown statistic `{s}`")))
    }
}

/// Grouping of the rows of `A` used by group statistics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// A single block holding every row (`L = 1`).
    Whole,
    /// One block per row; group statistics then reduce to the sup-norm.
    Singletons,
    /// Use the partition stored on the hypothesis.
    Hypothesis,
    Blocks(Vec<Vec<usize>>),
}

impl Partition {
    pub fn resolve(&self, hyp: &LinearHypothesis) -> Vec<Vec<usize>> {
        let r = hyp.r();
        match self {
            Partition::Whole => vec![(0..r).collect()],
            Partition::Singletons => (0..r).map(|i| vec![i]).collect(),
            Partition::Hypothesis => hyp.row_partition().to_vec(),
            Partition::Blocks(b) => b.clone(),
        }
    }
}

/// A statistic choice plus the structure it needs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub kind: StatKind,
    /// Ignored by sup-norm statistics.
    pub partition: Partition,
    /// Required by the GLM score statistics.
    pub glm_family: Option<GlmFamily>,
}

impl StatisticSpec {
    pub fn new(kind: StatKind) -> Self {
        Self {
            kind,
            partition: Partition::Whole,
            glm_family: None,
        }
    }

    pub fn affine_lasso() -> Self {
        Self::new(StatKind::AffineLasso)
    }

    pub fn affine_group_lasso(partition: Partition) -> Self {
        Self::new(StatKind::AffineGroupLasso).with_partition(partition)
    }

    pub fn sqrt_affine_lasso() -> Self {
        Self::new(StatKind::SqrtAffineLasso)
    }

    pub fn sqrt_affine_group_lasso(partition: Partition) -> Self {
        Self::new(StatKind::SqrtAffineGroupLasso).with_partition(partition)
    }

    pub fn fisher_weighted() -> Self {
        Self::new(StatKind::FisherWeighted)
    }

    pub fn lad_sign() -> Self {
        Self::new(StatKind::LadSign)
    }

    pub fn glm_score_sup(family: GlmFamily) -> Self {
        Self::new(StatKind::GlmScoreSup).with_family(family)
    }

    pub fn glm_score_group(family: GlmFamily, partition: Partition) -> Self {
        Self::new(StatKind::GlmScoreGroup)
            .with_family(family)
            .with_partition(partition)
    }

    pub fn with_partition(mut self, partition: Partition) -> Self {
        self.partition = partition;
        self
    }

    pub fn with_family(mut self, family: GlmFamily) -> Self {
        self.glm_family = Some(family);
        self
    }

    /// Human-readable identifier, also used to match calibrations to tests.
    pub fn id(&self) -> String {
        let mut id = self.kind.name().to_string();
        if let Some(f) = self.glm_family {
            id.push(':');
            id.push_str(f.name());
        }
        if self.kind.is_group() {
            match &self.partition {
                Partition::Whole => {}
                Partition::Singletons => id.push_str("[singletons]"),
                Partition::Hypothesis => id.push_str("[hypothesis]"),
                Partition::Blocks(blocks) => {
                    let s: Vec<String> = blocks
                        .iter()
                        .map(|b| b.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
                        .collect();
                    id.push('[');
                    id.push_str(&s.join("|"));
                    id.push(']');
                }
            }
        }
        id
    }

}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Value of a zero-thresholding statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatValue {
    pub value: f64,
    /// The statistic's denominator vanished; `value` is not meaningful.
    pub degenerate: bool,
}

impl StatValue {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    pub fn degenerate() -> Self {
        Self {
            value: f64::NAN,
            degenerate: true,
        }
    }

    fn ratio(num: f64, den: f64) -> Self {
        if den > 0.0 && den.is_finite() {
            Self::new(num / den)
        } else {
            Self::degenerate()
        }
    }
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_block_norm(v: &DVector<f64>, blocks: &[Vec<usize>]) -> f64 {
    blocks
        .iter()
        .map(|b| b.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn check_blocks(blocks: &[Vec<usize>], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    for b in blocks {
        if b.is_empty() {
            return Err(Error::InvalidSpec("empty block in partition".into()));
        }
        for &i in b {
            if i >= len || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidSpec(format!(
                    "partition index {i} out of range or repeated (length {len})"
                )));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidSpec("partition does not cover every index".into()));
    }
    Ok(())
}

/// `‖(AAᵀ)⁻¹ A Xᵀ r‖∞`.
pub fn zt_affine_lasso(red: &ReducedProblem, x: &DesignMatrix, y: &DVector<f64>) -> Result<StatValue> {
    let r = residual(red, x, y)?;
    Ok(StatValue::new(sup_norm(&red.multiplier(x, &r))))
}

/// `max_l ‖[(AAᵀ)⁻¹ A Xᵀ r]_{H_l}‖₂`.
pub fn zt_affine_group_lasso(
    red: &ReducedProblem,
    x: &DesignMatrix,
    y: &DVector<f64>,
    partition: &[Vec<usize>],
) -> Result<StatValue> {
    let r = residual(red, x, y)?;
    let z = red.multiplier(x, &r);
    check_blocks(partition, z.len())?;
    Ok(StatValue::new(max_block_norm(&z, partition)))
}

/// Base norm of a square-root statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqrtBase {
    Lasso,
    Group,
}

/// Square-root variant: the base statistic divided by `‖r‖₂`. Flags a
/// degenerate value when `r = 0`.
pub fn zt_sqrt_variant(
    red: &ReducedProblem,
    x: &DesignMatrix,
    y: &DVector<f64>,
    base: SqrtBase,
    partition: &[Vec<usize>],
) -> Result<StatValue> {
    let r = residual(red, x, y)?;
    let z = red.multiplier(x, &r);
    let num = match base {
        SqrtBase::Lasso => sup_norm(&z),
        SqrtBase::Group => {
            check_blocks(partition, z.len())?;
            max_block_norm(&z, partition)
        }
    };
    Ok(sqrt_ratio(num, &r, y))
}

fn sqrt_ratio(num: f64, r: &DVector<f64>, y: &DVector<f64>) -> StatValue {
    let rn = r.norm();
    // r is computed from y, so rounding leaves ~ε‖y‖ behind on an exact null fit
    let scale = y.amax().max(f64::MIN_POSITIVE);
    if rn <= 64.0 * f64::EPSILON * scale * (r.len() as f64).sqrt() {
        StatValue::degenerate()
    } else {
        StatValue::new(num / rn)
    }
}

/// Pieces shared by the Fisher-weighted statistic and the F statistic.
#[derive(Debug, Clone)]
struct FisherParts {
    qr: QR<f64, Dyn, Dyn>,
    a: DMatrix<f64>,
    c: DVector<f64>,
    /// Cholesky factor of `A (XᵀX)⁻¹ Aᵀ`.
    w_chol: Cholesky<f64, Dyn>,
    n: usize,
    p: usize,
}

impl FisherParts {
    fn new(x: &DesignMatrix, hyp: &LinearHypothesis) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if hyp.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "A has {} columns but X has {p}",
                hyp.p()
            )));
        }
        if p >= n {
            return Err(Error::NotApplicable(format!(
                "the Fisher-weighted statistic needs P < N (P = {p}, N = {n})"
            )));
        }
        let rank = numerical_rank(x.values());
        if rank < p {
            return Err(Error::RankDeficient(format!("rank(X) = {rank} < P = {p}")));
        }
        let qr = QR::new(x.values().clone());
        let r_mat = qr.r();
        // M = A R⁻¹, so A (XᵀX)⁻¹ Aᵀ = M Mᵀ
        let mt = r_mat
            .tr_solve_upper_triangular(&hyp.a_matrix().transpose())
            .ok_or_else(|| Error::SingularSystem("triangular factor of X is singular".into()))?;
        let w = mt.tr_mul(&mt);
        let w_chol = Cholesky::new(w)
            .ok_or_else(|| Error::SingularSystem("A (XᵀX)⁻¹ Aᵀ is not positive definite".into()))?;
        Ok(Self {
            qr,
            a: hyp.a_matrix().clone(),
            c: hyp.c_vector().clone(),
            w_chol,
            n,
            p,
        })
    }

    /// `(λ0, RSS)` where `λ0² = (Aβ̂ − c)ᵀ Q (Aβ̂ − c)`, `Q = {A(XᵀX)⁻¹Aᵀ}⁻¹`.
    fn lambda_and_rss(&self, x: &DesignMatrix, y: &DVector<f64>) -> Result<(f64, f64)> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "response has length {} but X has {} rows",
                y.len(),
                self.n
            )));
        }
        let qty = self.qr.q().tr_mul(y);
        let beta = self
            .qr
            .r()
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::SingularSystem("triangular factor of X is singular".into()))?;
        let d = &self.a * &beta - &self.c;
        let wd = self.w_chol.solve(&d);
        let lambda_sq = d.dot(&wd).max(0.0);
        let rss = (y - x.values() * &beta).norm_squared();
        Ok((lambda_sq.sqrt(), rss))
    }
}

/// Zero-thresholding function of the `Q`-weighted affine group lasso with
/// `Q = {A(XᵀX)⁻¹Aᵀ}⁻¹`; its square equals `RSS_{H0} − RSS`.
pub fn zt_fisher_weighted(x: &DesignMatrix, hyp: &LinearHypothesis, y: &DVector<f64>) -> Result<StatValue> {
    let parts = FisherParts::new(x, hyp)?;
    let (lambda, _) = parts.lambda_and_rss(x, y)?;
    Ok(StatValue::new(lambda))
}

/// Fisher's F statistic rebuilt from the thresholding function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherF {
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub lambda0: f64,
    pub s2_sq: f64,
}

/// `F = λ0² / (S2² R)` with `S2² = RSS / (N − P)`.
pub fn fisher_f(x: &DesignMatrix, hyp: &LinearHypothesis, y: &DVector<f64>) -> Result<FisherF> {
    let parts = FisherParts::new(x, hyp)?;
    let (lambda0, rss) = parts.lambda_and_rss(x, y)?;
    let df1 = hyp.r();
    let df2 = parts.n - parts.p;
    let s2_sq = rss / df2 as f64;
    Ok(FisherF {
        f: lambda0 * lambda0 / (s2_sq * df1 as f64),
        df1,
        df2,
        lambda0,
        s2_sq,
    })
}

/// Centering used by the LAD sign statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadCenter {
    None,
    Median,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sample median; midpoint of the two central order statistics for even N.
pub fn median(y: &[f64]) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn lad_on_columns(x: &DesignMatrix, cols: &[usize], y: &DVector<f64>, center: LadCenter) -> Result<StatValue> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "response has length {} but X has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    let shift = match center {
        LadCenter::None => 0.0,
        LadCenter::Median => median(y.as_slice()),
    };
    let signs: Vec<f64> = y.iter().map(|&v| sign(v - shift)).collect();
    let xv = x.values();
    let value = cols
        .iter()
        .map(|&j| {
            xv.column(j)
                .iter()
                .zip(&signs)
                .map(|(a, s)| a * s)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    Ok(StatValue::new(value))
}

/// `‖Xᵀ sign(y)‖∞`, or with median centering `‖X̃ᵀ sign(y − med(y)·1)‖∞`
/// over the non-intercept columns.
pub fn zt_lad(x: &DesignMatrix, y: &DVector<f64>, center: LadCenter) -> Result<StatValue> {
    let cols: Vec<usize> = match center {
        LadCenter::None => (0..x.ncols()).collect(),
        LadCenter::Median => (0..x.ncols()).filter(|&j| Some(j) != x.intercept_column()).collect(),
    };
    lad_on_columns(x, &cols, y, center)
}

/// Paired sign test: `B = #{n : v_n > u_n}` and `λ0 = |2B − N|`.
pub fn sign_test(u: &[f64], v: &[f64]) -> Result<(usize, usize)> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let b = u.iter().zip(v).filter(|(a, b)| b > a).count();
    Ok((b, (2 * b).abs_diff(u.len())))
}

/// Norm applied to the GLM score vector `Xᵀ(y − ȳ1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreNorm {
    Sup,
    /// Largest 2-norm over blocks of column indices.
    Group(Vec<Vec<usize>>),
}

/// `‖Xᵀ(y − ȳ1)‖ / √(N ξ̂)` with `ξ̂` the family's null variance estimate.
pub fn glm_score_stat(x: &DesignMatrix, y: &DVector<f64>, family: GlmFamily, norm: &ScoreNorm) -> Result<StatValue> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "response has length {} but X has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    family.check_support(y.as_slice())?;
    if let ScoreNorm::Group(blocks) = norm {
        for b in blocks {
            if b.is_empty() || b.iter().any(|&j| j >= x.ncols()) {
                return Err(Error::InvalidSpec("column block out of range or empty".into()));
            }
        }
    }
    Ok(glm_score_unchecked(x.values(), y, family, norm))
}

fn glm_score_unchecked(x: &DMatrix<f64>, y: &DVector<f64>, family: GlmFamily, norm: &ScoreNorm) -> StatValue {
    let n = y.len() as f64;
    let ybar = y.mean();
    let xi = family.null_variance_estimator(y.as_slice());
    let tiny = match family {
        GlmFamily::Gaussian => (1e-14 * y.amax()).powi(2),
        _ => 0.0,
    };
    if xi <= tiny {
        return StatValue::degenerate();
    }
    let centered = y.add_scalar(-ybar);
    let score = x.tr_mul(&centered);
    let num = match norm {
        ScoreNorm::Sup => sup_norm(&score),
        ScoreNorm::Group(blocks) => max_block_norm(&score, blocks),
    };
    StatValue::ratio(num, (n * xi).sqrt())
}

/// Pointwise `{h'(x)}² − V(h(x))` for the family's pivotal inverse link.
pub fn link_identity_residual(family: GlmFamily, x_grid: &[f64]) -> Result<Vec<f64>> {
    x_grid
        .iter()
        .map(|&x| {
            let h = family.pivotal_inverse_link(x)?;
            let dh = family.pivotal_inverse_link_derivative(x)?;
            Ok(dh * dh - family.variance_fn(h))
        })
        .collect()
}

/// A statistic bound to a design and hypothesis, ready to be evaluated on many
/// responses (observed data and Monte-Carlo null draws).
#[derive(Debug, Clone)]
pub struct PreparedStatistic {
    spec: StatisticSpec,
    x: DesignMatrix,
    kind: Prepared,
}

#[derive(Debug, Clone)]
enum Prepared {
    Affine {
        red: ReducedProblem,
        blocks: Option<Vec<Vec<usize>>>,
        sqrt: bool,
    },
    Fisher(Box<FisherParts>),
    Lad {
        cols: Vec<usize>,
        center: LadCenter,
    },
    Glm {
        family: GlmFamily,
        norm: ScoreNorm,
    },
}

/// Columns selected by a zero-`c` coordinate-selector hypothesis whose untested
/// columns are all constant. LAD and GLM score statistics only test this form.
fn intercept_only_null(x: &DesignMatrix, hyp: &LinearHypothesis, what: &str) -> Result<(Vec<usize>, bool)> {
    let cols = hyp.selected_columns().ok_or_else(|| {
        Error::NotApplicable(format!("{what} needs A to select coefficients (A = [O I] up to column order)"))
    })?;
    if hyp.c_vector().iter().any(|&c| c != 0.0) {
        return Err(Error::NotApplicable(format!("{what} only tests c = 0")));
    }
    let constant = x.constant_columns();
    let untested: Vec<usize> = (0..x.ncols()).filter(|j| !cols.contains(j)).collect();
    if untested.iter().any(|j| !constant.contains(j)) {
        return Err(Error::NotApplicable(format!(
            "{what} leaves only an intercept untested; column(s) {untested:?} are not constant"
        )));
    }
    Ok((cols, !untested.is_empty()))
}

impl PreparedStatistic {
    pub fn new(spec: &StatisticSpec, x: &DesignMatrix, hyp: &LinearHypothesis) -> Result<Self> {
        let kind = match spec.kind {
            StatKind::AffineLasso
            | StatKind::AffineGroupLasso
            | StatKind::SqrtAffineLasso
            | StatKind::SqrtAffineGroupLasso => {
                let red = build_reduction(x, hyp, None)?;
                let blocks = if spec.kind.is_group() {
                    let b = spec.partition.resolve(hyp);
                    check_blocks(&b, hyp.r())?;
                    Some(b)
                } else {
                    None
                };
                let sqrt = matches!(spec.kind, StatKind::SqrtAffineLasso | StatKind::SqrtAffineGroupLasso);
                Prepared::Affine { red, blocks, sqrt }
            }
            StatKind::FisherWeighted => Prepared::Fisher(Box::new(FisherParts::new(x, hyp)?)),
            StatKind::LadSign => {
                let (cols, has_intercept) = intercept_only_null(x, hyp, "the LAD sign statistic")?;
                let center = if has_intercept { LadCenter::Median } else { LadCenter::None };
                Prepared::Lad { cols, center }
            }
            StatKind::GlmScoreSup | StatKind::GlmScoreGroup => {
                let family = spec
                    .glm_family
                    .ok_or_else(|| Error::InvalidSpec(format!("{} needs a GLM family", spec.kind)))?;
                let (cols, _) = intercept_only_null(x, hyp, "the GLM score statistic")?;
                let norm = if spec.kind == StatKind::GlmScoreGroup {
                    let rows = spec.partition.resolve(hyp);
                    check_blocks(&rows, hyp.r())?;
                    ScoreNorm::Group(rows.iter().map(|b| b.iter().map(|&i| cols[i]).collect()).collect())
                } else {
                    ScoreNorm::Group(cols.iter().map(|&j| vec![j]).collect())
                };
                Prepared::Glm { family, norm }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            x: x.clone(),
            kind,
        })
    }

    pub fn spec(&self) -> &StatisticSpec {
        &self.spec
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.x
    }

    /// The reduction behind affine statistics.
    pub fn reduction(&self) -> Option<&ReducedProblem> {
        match &self.kind {
            Prepared::Affine { red, .. } => Some(red),
            _ => None,
        }
    }

    pub fn eval(&self, y: &DVector<f64>) -> Result<StatValue> {
        let x = &self.x;
        match &self.kind {
            Prepared::Affine { red, blocks, sqrt } => {
                let r = residual(red, x, y)?;
                let z = red.multiplier(x, &r);
                let num = match blocks {
                    Some(b) => max_block_norm(&z, b),
                    None => sup_norm(&z),
                };
                Ok(if *sqrt { sqrt_ratio(num, &r, y) } else { StatValue::new(num) })
            }
            Prepared::Fisher(parts) => {
                let (lambda, rss) = parts.lambda_and_rss(x, y)?;
                let s2 = (rss / (parts.n - parts.p) as f64).sqrt();
                let scale = y.amax().max(f64::MIN_POSITIVE);
                if s2 <= 64.0 * f64::EPSILON * scale {
                    Ok(StatValue::degenerate())
                } else {
                    Ok(StatValue::new(lambda / s2))
                }
            }
            Prepared::Lad { cols, center } => lad_on_columns(x, cols, y, *center),
            Prepared::Glm { family, norm } => {
                if y.len() != x.nrows() {
                    return Err(Error::DimensionMismatch(format!(
                        "response has length {} but X has {} rows",
                        y.len(),
                        x.nrows()
                    )));
                }
                family.check_support(y.as_slice())?;
                Ok(glm_score_unchecked(x.values(), y, *family, norm))
            }
        }
    }

    /// `(R, N − P)` for the Fisher-weighted statistic, whose square over `R`
    /// follows an exact F distribution under Gaussian errors.
    pub fn fisher_df(&self) -> Option<(usize, usize)> {
        match &self.kind {
            Prepared::Fisher(parts) => Some((parts.c.len(), parts.n - parts.p)),
            _ => None,
        }
    }

    /// Re-targets an affine statistic at another `c` (same `A`, same design).
    pub fn with_c(&self, c: &DVector<f64>) -> Result<Self> {
        match &self.kind {
            Prepared::Affine { red, blocks, sqrt } => Ok(Self {
                spec: self.spec.clone(),
                x: self.x.clone(),
                kind: Prepared::Affine {
                    red: red.with_c(c)?,
                    blocks: blocks.clone(),
                    sqrt: *sqrt,
                },
            }),
            Prepared::Fisher(parts) => {
                if c.len() != parts.c.len() {
                    return Err(Error::DimensionMismatch("c length differs from R".into()));
                }
                let mut parts = parts.clone();
                parts.c = c.clone();
                Ok(Self {
                    spec: self.spec.clone(),
                    x: self.x.clone(),
                    kind: Prepared::Fisher(parts),
                })
            }
            _ => Err(Error::NotApplicable(format!(
                "{} only tests c = 0 and cannot be re-targeted",
                self.spec.kind
            ))),
        }
    }
}
