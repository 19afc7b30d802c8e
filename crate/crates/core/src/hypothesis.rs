//! Model and hypothesis types, plus the linear-algebra reduction shared by
//! every statistic.
//!
//! A null hypothesis `H0: A β = c` is reduced once to
//!
//! * an orthonormal basis `K_A` of `ker A`,
//! * the minimum-norm solution `β_c = Aᵀ(AAᵀ)⁻¹c`,
//! * an orthonormal basis `Q` of `range(X K_A)`, so that the projector is
//!   applied as `Q (Qᵀ v)` and never formed as an `N × N` matrix.
//!
//! The residual `r = (I − P_{X K_A})(y − X β_c)` is then the only
//! data-dependent quantity the thresholding statistics need.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N × P` matrix of covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_names: Option<Vec<String>>,
    intercept_column: Option<usize>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 1 {
            return Err(Error::InvalidSpec(format!(
                "design must have N >= 2 rows and P >= 1 columns, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("design contains non-finite entries".into()));
        }
        Ok(Self {
            values,
            column_names: None,
            intercept_column: None,
        })
    }

    /// Builds a design from row-major data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged design rows".into()));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    /// Prepends an all-ones column and records it as the unpenalized intercept.
    pub fn with_intercept(self) -> Self {
        let n = self.values.nrows();
        let values = self.values.insert_column(0, 1.0);
        debug_assert_eq!(values.nrows(), n);
        let column_names = self.column_names.map(|mut names| {
            names.insert(0, "(intercept)".to_string());
            names
        });
        Self {
            values,
            column_names,
            intercept_column: Some(0),
        }
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                names.len(),
                self.values.ncols()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    /// Marks an existing column as the intercept. The column must be all ones.
    pub fn with_intercept_column(mut self, index: usize) -> Result<Self> {
        if index >= self.ncols() || self.values.column(index).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidSpec(format!(
                "column {index} is not an all-ones column"
            )));
        }
        self.intercept_column = Some(index);
        Ok(self)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn intercept_column(&self) -> Option<usize> {
        self.intercept_column
    }

    /// Indices of columns that are constant (candidates for an intercept).
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.ncols())
            .filter(|&j| {
                let col = self.values.column(j);
                col.iter().all(|&v| v == col[0])
            })
            .collect()
    }

    /// Stable 64-bit digest of the matrix entries and shape.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.nrows() as u64);
        h.write_u64(self.ncols() as u64);
        for v in self.values.iter() {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

/// The pair `(A, c)` together with a partition `{H_l}` of the rows of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHypothesis {
    a_matrix: DMatrix<f64>,
    c_vector: DVector<f64>,
    row_partition: Vec<Vec<usize>>,
}

impl LinearHypothesis {
    /// Hypothesis with the all-singletons row partition.
    pub fn new(a_matrix: DMatrix<f64>, c_vector: DVector<f64>) -> Result<Self> {
        let r = a_matrix.nrows();
        Self::with_partition(a_matrix, c_vector, (0..r).map(|i| vec![i]).collect())
    }

    pub fn with_partition(
        a_matrix: DMatrix<f64>,
        c_vector: DVector<f64>,
        row_partition: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let (r, p) = a_matrix.shape();
        if r == 0 {
            return Err(Error::InvalidSpec("A must have at least one row".into()));
        }
        if r > p {
            return Err(Error::DimensionMismatch(format!(
                "A is {r}x{p}; a full row rank A needs R <= P"
            )));
        }
        if c_vector.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "c has length {} but A has {r} rows",
                c_vector.len()
            )));
        }
        if a_matrix.iter().chain(c_vector.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("A or c contains non-finite entries".into()));
        }
        validate_partition(&row_partition, r)?;
        let rank = numerical_rank(&a_matrix);
        if rank < r {
            return Err(Error::RankDeficient(format!(
                "A has numerical row rank {rank} < R = {r}"
            )));
        }
        Ok(Self {
            a_matrix,
            c_vector,
            row_partition,
        })
    }

    /// Same `A` and `c`, one group containing every row.
    pub fn whole_group(&self) -> Self {
        Self {
            row_partition: vec![(0..self.r()).collect()],
            ..self.clone()
        }
    }

    /// Same `A` and partition, different right-hand side.
    pub fn with_c(&self, c_vector: DVector<f64>) -> Result<Self> {
        if c_vector.len() != self.r() {
            return Err(Error::DimensionMismatch(format!(
                "c has length {} but A has {} rows",
                c_vector.len(),
                self.r()
            )));
        }
        Ok(Self {
            c_vector,
            ..self.clone()
        })
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn c_vector(&self) -> &DVector<f64> {
        &self.c_vector
    }

    pub fn row_partition(&self) -> &[Vec<usize>] {
        &self.row_partition
    }

    pub fn r(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.a_matrix.ncols()
    }

    /// For a coordinate selector `A` (every row a single unit entry, distinct
    /// columns), the selected column of each row.
    pub fn selected_columns(&self) -> Option<Vec<usize>> {
        let mut cols = Vec::with_capacity(self.r());
        for row in self.a_matrix.row_iter() {
            let mut hit = None;
            for (j, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                if v != 1.0 || hit.is_some() {
                    return None;
                }
                hit = Some(j);
            }
            cols.push(hit?);
        }
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        (sorted.len() == cols.len()).then_some(cols)
    }

    /// Digest of `A` and the partition. `c` is deliberately excluded: pivotal
    /// calibrations are shared across right-hand sides.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.r() as u64);
        h.write_u64(self.p() as u64);
        for v in self.a_matrix.iter() {
            h.write_u64(v.to_bits());
        }
        for block in &self.row_partition {
            h.write_u64(u64::MAX);
            for &i in block {
                h.write_u64(i as u64);
            }
        }
        h.finish()
    }
}

fn validate_partition(partition: &[Vec<usize>], r: usize) -> Result<()> {
    let mut seen = vec![false; r];
    for block in partition {
        if block.is_empty() {
            return Err(Error::InvalidSpec("empty block in row partition".into()));
        }
        for &i in block {
            if i >= r {
                return Err(Error::InvalidSpec(format!(
                    "row index {i} out of range for R = {r}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidSpec(format!("row {i} appears in two blocks")));
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidSpec(format!(
            "row {missing} is not covered by the partition"
        )));
    }
    Ok(())
}

/// `H0: (β_{j0}, …, β_{P-1}) = c`, leaving the first `j0` coefficients untested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetHypothesis {
    pub j0: usize,
    #[serde(rename = "c")]
    pub c_vector: Vec<f64>,
}

impl SubsetHypothesis {
    pub fn new(j0: usize, c_vector: Vec<f64>) -> Self {
        Self { j0, c_vector }
    }

    /// Tests every coefficient after the first `j0` against zero.
    pub fn zero(j0: usize, p: usize) -> Self {
        Self::new(j0, vec![0.0; p.saturating_sub(j0)])
    }

    /// Expands to `A = [O I_{P-j0}]` with singleton row blocks.
    pub fn to_linear(&self, p: usize) -> Result<LinearHypothesis> {
        if self.j0 >= p {
            return Err(Error::InvalidSpec(format!(
                "j0 = {} must be smaller than P = {p}",
                self.j0
            )));
        }
        let r = p - self.j0;
        if self.c_vector.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "subset hypothesis needs {r} values of c, got {}",
                self.c_vector.len()
            )));
        }
        let a = DMatrix::from_fn(r, p, |i, j| if j == self.j0 + i { 1.0 } else { 0.0 });
        LinearHypothesis::new(a, DVector::from_column_slice(&self.c_vector))
    }
}

/// Factorization used to apply `(AAᵀ)⁻¹A` and `Aᵀ(AAᵀ)⁻¹`.
#[derive(Debug, Clone)]
enum PseudoMap {
    /// `A` selects coordinates; `(AAᵀ)⁻¹A v` is a gather.
    Selector(Vec<usize>),
    /// `A = U S V_rᵀ`.
    Svd {
        u: DMatrix<f64>,
        s: DVector<f64>,
        v_r: DMatrix<f64>,
    },
}

impl PseudoMap {
    fn new(a: &DMatrix<f64>, hyp_selector: Option<Vec<usize>>, tol: Option<f64>) -> Result<(Self, DMatrix<f64>)> {
        let (r, p) = a.shape();
        if let Some(cols) = hyp_selector {
            let mut selected = vec![false; p];
            for &c in &cols {
                selected[c] = true;
            }
            let free: Vec<usize> = (0..p).filter(|&j| !selected[j]).collect();
            let kernel = DMatrix::from_fn(p, free.len(), |i, k| if i == free[k] { 1.0 } else { 0.0 });
            return Ok((PseudoMap::Selector(cols), kernel));
        }
        let svd = padded_svd(a)?;
        let cutoff = tol.unwrap_or(default_rel_tol(r, p)) * svd.values.first().copied().unwrap_or(0.0);
        let rank = svd.values.iter().filter(|&&s| s > cutoff).count();
        if rank < r {
            return Err(Error::RankDeficient(format!(
                "A has numerical row rank {rank} < R = {r}"
            )));
        }
        let u = DMatrix::from_fn(r, r, |i, k| svd.u[(i, k)]);
        let s = DVector::from_fn(r, |k, _| svd.values[k]);
        let v_r = DMatrix::from_fn(p, r, |i, k| svd.v[(i, k)]);
        let kernel = DMatrix::from_fn(p, p - r, |i, k| svd.v[(i, r + k)]);
        Ok((PseudoMap::Svd { u, s, v_r }, kernel))
    }

    /// `(AAᵀ)⁻¹ A v`.
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            PseudoMap::Selector(cols) => DVector::from_iterator(cols.len(), cols.iter().map(|&j| v[j])),
            PseudoMap::Svd { u, s, v_r } => {
                let w = v_r.tr_mul(v).component_div(s);
                u * w
            }
        }
    }

    /// `Aᵀ(AAᵀ)⁻¹ c`.
    fn min_norm(&self, c: &DVector<f64>, p: usize) -> DVector<f64> {
        match self {
            PseudoMap::Selector(cols) => {
                let mut beta = DVector::zeros(p);
                for (k, &j) in cols.iter().enumerate() {
                    beta[j] = c[k];
                }
                beta
            }
            PseudoMap::Svd { u, s, v_r } => {
                let w = u.tr_mul(c).component_div(s);
                v_r * w
            }
        }
    }
}

/// Full SVD of `A` (`R × P`, `R ≤ P`) obtained by padding with zero rows, with
/// singular values sorted in decreasing order. Columns of `v` past the rank span
/// `ker A`.
struct SortedSvd {
    u: DMatrix<f64>,
    values: Vec<f64>,
    v: DMatrix<f64>,
}

fn padded_svd(a: &DMatrix<f64>) -> Result<SortedSvd> {
    let (r, p) = a.shape();
    let mut padded = DMatrix::zeros(p, p);
    padded.view_mut((0, 0), (r, p)).copy_from(a);
    let svd = SVD::try_new(padded, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::SingularSystem("SVD of A did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    Ok(SortedSvd {
        u: DMatrix::from_fn(p, p, |i, k| u[(i, order[k])]),
        values: order.iter().map(|&k| svd.singular_values[k]).collect(),
        v: DMatrix::from_fn(p, p, |i, k| v_t[(order[k], i)]),
    })
}

fn default_rel_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Numerical rank with the `max(m, n)·ε·σ_max` cutoff.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.clone().singular_values();
    let smax = s.max();
    let cutoff = default_rel_tol(m.nrows(), m.ncols()) * smax;
    s.iter().filter(|&&v| v > cutoff).count()
}

/// Orthonormal basis of `ker A`, `P × (P − R)`.
///
/// `tol` is relative to the largest singular value; `None` uses `max(R,P)·ε`.
pub fn kernel_basis(a_matrix: &DMatrix<f64>, tol: Option<f64>) -> Result<DMatrix<f64>> {
    let (r, p) = a_matrix.shape();
    if r > p {
        return Err(Error::DimensionMismatch(format!("A is {r}x{p} with R > P")));
    }
    PseudoMap::new(a_matrix, None, tol).map(|(_, k)| k)
}

/// `β_c = Aᵀ(AAᵀ)⁻¹c`, the element of `(ker A)^⊥` with `A β_c = c`.
pub fn min_norm_solution(a_matrix: &DMatrix<f64>, c_vector: &DVector<f64>) -> Result<DVector<f64>> {
    let (r, p) = a_matrix.shape();
    if c_vector.len() != r {
        return Err(Error::DimensionMismatch(format!(
            "c has length {} but A has {r} rows",
            c_vector.len()
        )));
    }
    if r > p {
        return Err(Error::DimensionMismatch(format!("A is {r}x{p} with R > P")));
    }
    let (map, _) = PseudoMap::new(a_matrix, None, None)?;
    Ok(map.min_norm(c_vector, p))
}

/// Everything needed to evaluate residuals and multipliers for one hypothesis
/// on one design. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    kernel_basis: DMatrix<f64>,
    beta_c: DVector<f64>,
    projector_factor: DMatrix<f64>,
    rank_xka: usize,
    pseudo_map: PseudoMap,
    n: usize,
    p: usize,
}

impl ReducedProblem {
    pub fn kernel_basis(&self) -> &DMatrix<f64> {
        &self.kernel_basis
    }

    pub fn beta_c(&self) -> &DVector<f64> {
        &self.beta_c
    }

    /// Orthonormal basis `Q` of `range(X K_A)`, `N × rank_xka`.
    pub fn projector_factor(&self) -> &DMatrix<f64> {
        &self.projector_factor
    }

    pub fn rank_xka(&self) -> usize {
        self.rank_xka
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `P_{X K_A} v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.rank_xka == 0 {
            return DVector::zeros(v.len());
        }
        let q = &self.projector_factor;
        q * q.tr_mul(v)
    }

    /// `(I − P_{X K_A}) v`.
    pub fn annihilate(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.project(v)
    }

    /// `(AAᵀ)⁻¹ A v` for a length-`P` vector.
    pub fn apply_pseudo(&self, v: &DVector<f64>) -> DVector<f64> {
        self.pseudo_map.apply(v)
    }

    /// The Lagrange multiplier `(AAᵀ)⁻¹ A Xᵀ r` of the constrained fit.
    pub fn multiplier(&self, x: &DesignMatrix, r: &DVector<f64>) -> DVector<f64> {
        self.apply_pseudo(&x.values().tr_mul(r))
    }

    /// The same reduction for another right-hand side `c`; only `β_c` changes.
    pub fn with_c(&self, c_vector: &DVector<f64>) -> Result<Self> {
        let r = match &self.pseudo_map {
            PseudoMap::Selector(cols) => cols.len(),
            PseudoMap::Svd { s, .. } => s.len(),
        };
        if c_vector.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "c has length {} but A has {r} rows",
                c_vector.len()
            )));
        }
        Ok(Self {
            beta_c: self.pseudo_map.min_norm(c_vector, self.p),
            ..self.clone()
        })
    }
}

/// Reduces `(X, A, c)` to a [`ReducedProblem`].
///
/// Fails with [`Error::Untestable`] when `rank(X K_A) = N`: every response is
/// then fitted exactly under the null and no thresholding test exists.
pub fn build_reduction(
    x: &DesignMatrix,
    hyp: &LinearHypothesis,
    tol: Option<f64>,
) -> Result<ReducedProblem> {
    let (n, p) = (x.nrows(), x.ncols());
    if hyp.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "A has {} columns but X has {p}",
            hyp.p()
        )));
    }
    let (pseudo_map, kernel_basis) = PseudoMap::new(hyp.a_matrix(), hyp.selected_columns(), tol)?;
    let beta_c = pseudo_map.min_norm(hyp.c_vector(), p);
    let xk = x.values() * &kernel_basis;
    let (projector_factor, rank_xka) = orthonormal_range(&xk, tol);
    if rank_xka >= n {
        return Err(Error::Untestable { rank: rank_xka, n });
    }
    Ok(ReducedProblem {
        kernel_basis,
        beta_c,
        projector_factor,
        rank_xka,
        pseudo_map,
        n,
        p,
    })
}

/// Orthonormal basis of the column space of `m` and its numerical rank.
fn orthonormal_range(m: &DMatrix<f64>, tol: Option<f64>) -> (DMatrix<f64>, usize) {
    let (n, k) = m.shape();
    if k == 0 {
        return (DMatrix::zeros(n, 0), 0);
    }
    let svd = SVD::new(m.clone(), true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let cutoff = tol.unwrap_or(default_rel_tol(n, k)) * smax;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    let q = DMatrix::from_fn(n, keep.len(), |i, c| u[(i, keep[c])]);
    (q, keep.len())
}

/// `r = (I − P_{X K_A})(y − X β_c)`.
pub fn residual(red: &ReducedProblem, x: &DesignMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != red.n || x.nrows() != red.n || x.ncols() != red.p {
        return Err(Error::DimensionMismatch(format!(
            "reduction built for N = {}, P = {}; got y of length {} and X of {}x{}",
            red.n,
            red.p,
            y.len(),
            x.nrows(),
            x.ncols()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("response contains non-finite values".into()));
    }
    let centered = y - x.values() * &red.beta_c;
    Ok(red.annihilate(&centered))
}

/// FNV-1a over 64-bit words; used for cache keys and fingerprints.
#[derive(Debug, Clone)]
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn write_str(&mut self, s: &str) {
        for b in s.bytes() {
            self.write_u64(u64::from(b));
        }
        self.write_u64(0xff);
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn kernel_of_subset_selector_is_coordinate_span() {
        let hyp = SubsetHypothesis::zero(2, 5).to_linear(5).unwrap();
        let k = kernel_basis(hyp.a_matrix(), None).unwrap();
        assert_eq!(k.shape(), (5, 2));
        // projector onto span(k) equals projector onto e0, e1
        let proj = &k * k.transpose();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j && i < 2 { 1.0 } else { 0.0 };
                assert!((proj[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_of_identity_is_empty() {
        let k = kernel_basis(&DMatrix::identity(4, 4), None).unwrap();
        assert_eq!(k.ncols(), 0);
    }

    #[test]
    fn kernel_of_sum_row() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let k = kernel_basis(&a, None).unwrap();
        assert_eq!(k.shape(), (2, 1));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(k[(0, 0)].abs(), s, epsilon = 1e-12);
        assert_relative_eq!(k[(0, 0)], -k[(1, 0)], epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_a_is_rejected() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(kernel_basis(&a, None), Err(Error::RankDeficient(_))));
        assert!(matches!(
            LinearHypothesis::new(a, DVector::zeros(2)),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn min_norm_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = min_norm_solution(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert_relative_eq!(b, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);

        let c = DVector::from_vec(vec![0.5, -1.0, 3.0]);
        let b = min_norm_solution(&DMatrix::identity(3, 3), &c).unwrap();
        assert_relative_eq!(b, c, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 2, 4);
        let b = min_norm_solution(&a, &DVector::zeros(2)).unwrap();
        assert!(b.norm() < 1e-14);
    }

    #[test]
    fn min_norm_is_feasible_and_orthogonal_to_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 2, 5);
            let c = random_vector(&mut rng, 2);
            let b = min_norm_solution(&a, &c).unwrap();
            assert!((&a * &b - &c).norm() < 1e-10);
            let k = kernel_basis(&a, None).unwrap();
            assert!((k.transpose() * &b).norm() < 1e-10);
            assert!((&a * &k).norm() < 1e-10);
            assert!((k.transpose() * &k - DMatrix::identity(3, 3)).norm() < 1e-10);
        }
    }

    #[test]
    fn intercept_projector_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DesignMatrix::new(random_matrix(&mut rng, 12, 3)).unwrap().with_intercept();
        let hyp = SubsetHypothesis::zero(1, 4).to_linear(4).unwrap();
        let red = build_reduction(&x, &hyp, None).unwrap();
        let y = random_vector(&mut rng, 12);
        let ybar = y.mean();
        let r = residual(&red, &x, &y).unwrap();
        for i in 0..12 {
            assert_relative_eq!(r[i], y[i] - ybar, epsilon = 1e-12);
        }
        assert_relative_eq!(red.project(&y), DVector::from_element(12, ybar), epsilon = 1e-12);
    }

    #[test]
    fn identity_hypothesis_has_no_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DesignMatrix::new(random_matrix(&mut rng, 6, 3)).unwrap();
        let hyp = LinearHypothesis::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let red = build_reduction(&x, &hyp, None).unwrap();
        assert_eq!(red.rank_xka(), 0);
        let y = random_vector(&mut rng, 6);
        assert_eq!(residual(&red, &x, &y).unwrap(), y);
    }

    #[test]
    fn exact_null_fit_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DesignMatrix::new(random_matrix(&mut rng, 6, 3)).unwrap();
        let c = random_vector(&mut rng, 3);
        let hyp = LinearHypothesis::new(DMatrix::identity(3, 3), c.clone()).unwrap();
        let red = build_reduction(&x, &hyp, None).unwrap();
        let y = x.values() * &c;
        assert!(residual(&red, &x, &y).unwrap().norm() < 1e-12);
    }

    #[test]
    fn untestable_when_kernel_fills_the_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // N = 5, P = 8, testing only the last coefficient: X K_A is 5x7, rank 5.
        let x = DesignMatrix::new(random_matrix(&mut rng, 5, 8)).unwrap();
        let hyp = SubsetHypothesis::zero(7, 8).to_linear(8).unwrap();
        assert_eq!(
            build_reduction(&x, &hyp, None).unwrap_err(),
            Error::Untestable { rank: 5, n: 5 }
        );
    }

    #[test]
    fn residual_matches_dense_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xm = random_matrix(&mut rng, 6, 3);
        let x = DesignMatrix::new(xm.clone()).unwrap();
        let a = random_matrix(&mut rng, 2, 3);
        let c = random_vector(&mut rng, 2);
        let hyp = LinearHypothesis::new(a.clone(), c.clone()).unwrap();
        let red = build_reduction(&x, &hyp, None).unwrap();
        let y = random_vector(&mut rng, 6);

        // dense oracle: K from explicit null-space, P = XK (KᵀXᵀXK)⁻¹ KᵀXᵀ
        let aat_inv = (&a * a.transpose()).try_inverse().unwrap();
        let beta_c = a.transpose() * &aat_inv * &c;
        let k = kernel_basis(&a, None).unwrap();
        let xk = &xm * &k;
        let gram_inv = (xk.transpose() * &xk).try_inverse().unwrap();
        let proj = &xk * gram_inv * xk.transpose();
        let expect = (DMatrix::identity(6, 6) - proj) * (&y - &xm * beta_c);
        let r = residual(&red, &x, &y).unwrap();
        assert_relative_eq!(r, expect, epsilon = 1e-10);
    }

    #[test]
    fn partition_validation() {
        let a = DMatrix::identity(3, 3);
        let c = DVector::zeros(3);
        assert!(LinearHypothesis::with_partition(a.clone(), c.clone(), vec![vec![0, 1], vec![2]]).is_ok());
        assert!(LinearHypothesis::with_partition(a.clone(), c.clone(), vec![vec![0, 1]]).is_err());
        assert!(LinearHypothesis::with_partition(a.clone(), c.clone(), vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(LinearHypothesis::with_partition(a, c, vec![vec![0, 1, 2], vec![]]).is_err());
    }

    #[test]
    fn subset_expansion() {
        let h = SubsetHypothesis::new(1, vec![0.5, 2.0]).to_linear(3).unwrap();
        assert_eq!(h.a_matrix(), &DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(h.selected_columns(), Some(vec![1, 2]));
        assert!(SubsetHypothesis::zero(3, 3).to_linear(3).is_err());
    }

    #[test]
    fn selector_and_svd_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DesignMatrix::new(random_matrix(&mut rng, 9, 4)).unwrap();
        let hyp = SubsetHypothesis::new(1, vec![0.3, -0.2, 1.0]).to_linear(4).unwrap();
        let fast = build_reduction(&x, &hyp, None).unwrap();
        // permuting rows of A defeats nothing but a sign flip forces the SVD path
        let mut a = hyp.a_matrix().clone();
        a.row_mut(0).neg_mut();
        let mut c = hyp.c_vector().clone();
        c[0] = -c[0];
        let slow_hyp = LinearHypothesis::new(a, c).unwrap();
        assert!(slow_hyp.selected_columns().is_none());
        let slow = build_reduction(&x, &slow_hyp, None).unwrap();
        let y = random_vector(&mut rng, 9);
        let r_fast = residual(&fast, &x, &y).unwrap();
        let r_slow = residual(&slow, &x, &y).unwrap();
        assert_relative_eq!(r_fast, r_slow, epsilon = 1e-10);
        let m_fast = fast.multiplier(&x, &r_fast);
        let mut m_slow = slow.multiplier(&x, &r_slow);
        m_slow[0] = -m_slow[0];
        assert_relative_eq!(m_fast, m_slow, epsilon = 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn projector_idempotent_and_null_invariant(seed in any::<u64>(), n in 5usize..12, p in 2usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let r = 1 + (seed as usize) % (p - 1).max(1);
                let x = DesignMatrix::new(random_matrix(&mut rng, n, p)).unwrap();
                let a = random_matrix(&mut rng, r, p);
                let hyp = LinearHypothesis::new(a, random_vector(&mut rng, r)).unwrap();
                let red = match build_reduction(&x, &hyp, None) {
                    Ok(red) => red,
                    Err(Error::Untestable { .. }) => return Ok(()),
                    Err(e) => panic!("{e}"),
                };
                let v = random_vector(&mut rng, n);
                let once = red.project(&v);
                let twice = red.project(&once);
                prop_assert!((&twice - &once).norm() <= 1e-10 * once.norm().max(1.0));

                let y = random_vector(&mut rng, n);
                let gamma = red.kernel_basis() * random_vector(&mut rng, red.kernel_basis().ncols());
                let shifted = &y + x.values() * gamma;
                let r0 = residual(&red, &x, &y).unwrap();
                let r1 = residual(&red, &x, &shifted).unwrap();
                prop_assert!((&r1 - &r0).norm() <= 1e-10 * r0.norm().max(1.0));
                prop_assert!((red.project(&r0)).norm() <= 1e-10 * r0.norm().max(1.0));
            }
        }
    }
}
