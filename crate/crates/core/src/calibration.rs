//! Monte-Carlo calibration of null-thresholding statistics.
//!
//! The null statistic `Λ0 = λ0(Y0)` is simulated `M` times and the
//! test-threshold is the order statistic `λ_α = Λ0_(k)` with
//! `k = ⌈(M + 1)(1 − α)⌉`, which keeps the type I error at most `α` for
//! continuous statistics. Replicate `m` always draws from substream `m` of the
//! master seed.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::hypothesis::{DesignMatrix, Fnv, LinearHypothesis, ReducedProblem};
use crate::rng::substream;
use crate::stats::{PreparedStatistic, StatValue};

/// Data-generating process under `H0`.
#[derive(Debug, Clone, PartialEq)]
pub enum NullModel {
    /// `Y0 = X β_c + σ E` with `E` standard normal. With a square-root statistic
    /// any `σ` gives the same null distribution.
    GaussianPivotal { mean: DVector<f64>, noise_sd: f64 },
    /// I.i.d. responses from `family` at the plug-in mean `ȳ`.
    GlmPlugin { family: GlmFamily, mean: f64, n: usize },
}

impl NullModel {
    pub fn gaussian(red: &ReducedProblem, x: &DesignMatrix) -> Self {
        Self::gaussian_with_sd(red, x, 1.0)
    }

    pub fn gaussian_with_sd(red: &ReducedProblem, x: &DesignMatrix, noise_sd: f64) -> Self {
        NullModel::GaussianPivotal {
            mean: x.values() * red.beta_c(),
            noise_sd,
        }
    }

    /// Plug-in model with mean `ȳ`. Bernoulli and Poisson means are clipped
    /// away from the boundary (`[1/(2N), 1 − 1/(2N)]`, resp. `≥ 1/(2N)`) so
    /// the simulator stays nondegenerate.
    pub fn glm_plugin(family: GlmFamily, y_observed: &[f64]) -> Result<Self> {
        family.check_support(y_observed)?;
        let n = y_observed.len();
        if n < 2 {
            return Err(Error::InvalidSpec("need at least two observations".into()));
        }
        let ybar = y_observed.iter().sum::<f64>() / n as f64;
        let floor = 1.0 / (2.0 * n as f64);
        let mean = match family {
            GlmFamily::Gaussian => ybar,
            GlmFamily::Bernoulli => ybar.clamp(floor, 1.0 - floor),
            GlmFamily::Poisson => ybar.max(floor),
        };
        Ok(NullModel::GlmPlugin { family, mean, n })
    }

    pub fn n(&self) -> usize {
        match self {
            NullModel::GaussianPivotal { mean, .. } => mean.len(),
            NullModel::GlmPlugin { n, .. } => *n,
        }
    }

    /// Digest of the parts that change the null distribution of a statistic.
    /// The Gaussian mean `Xβ_c` is excluded: the residual annihilates it.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        match self {
            NullModel::GaussianPivotal { mean, noise_sd } => {
                h.write_str("gaussian_pivotal");
                h.write_u64(mean.len() as u64);
                h.write_u64(noise_sd.to_bits());
            }
            NullModel::GlmPlugin { family, mean, n } => {
                h.write_str("glm_plugin");
                h.write_str(family.name());
                h.write_u64(mean.to_bits());
                h.write_u64(*n as u64);
            }
        }
        h.finish()
    }
}

/// One null response. Deterministic given the stream state.
pub fn simulate_null<R: Rng + ?Sized>(model: &NullModel, rng: &mut R) -> DVector<f64> {
    match model {
        NullModel::GaussianPivotal { mean, noise_sd } => {
            DVector::from_fn(mean.len(), |i, _| mean[i] + noise_sd * rng.sample::<f64, _>(StandardNormal))
        }
        NullModel::GlmPlugin { family, mean, n } => match family {
            GlmFamily::Gaussian => DVector::from_fn(*n, |_, _| mean + rng.sample::<f64, _>(StandardNormal)),
            GlmFamily::Bernoulli => DVector::from_fn(*n, |_, _| if rng.random::<f64>() < *mean { 1.0 } else { 0.0 }),
            GlmFamily::Poisson => {
                let dist = Poisson::new(*mean).expect("plug-in mean is positive and finite");
                DVector::from_fn(*n, |_, _| dist.sample(rng))
            }
        },
    }
}

/// Smallest `M` accepted at level `α`: `⌈1/α⌉ − 1`.
pub fn min_draws(alpha: f64) -> usize {
    ((1.0 / alpha) - 1e-9).ceil() as usize - 1
}

/// 1-based rank `k = ⌈(M + 1)(1 − α)⌉` of the test-threshold.
pub fn threshold_rank(m: usize, alpha: f64) -> usize {
    // (M+1) - ⌊(M+1)α⌋ avoids rounding (M+1)(1-α) just above an integer
    let m1 = (m + 1) as f64;
    (m + 1) - (m1 * alpha + 1e-9).floor() as usize
}

fn check_level(m: usize, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSpec(format!("level must lie in (0, 1), got {alpha}")));
    }
    let min = min_draws(alpha);
    if m < min || m == 0 {
        return Err(Error::InsufficientDraws { m, alpha, min: min.max(1) });
    }
    Ok(())
}

/// Sorted Monte-Carlo null statistics and the resulting test-threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub sorted_null_stats: Vec<f64>,
    pub lambda_alpha: f64,
    pub alpha: f64,
    pub m_draws: usize,
    pub seed: u64,
    pub statistic_id: String,
}

impl CalibrationResult {
    /// Builds the result from raw draws (any order). Degenerate draws should be
    /// passed as `+∞`.
    pub fn from_draws(mut draws: Vec<f64>, alpha: f64, seed: u64, statistic_id: impl Into<String>) -> Result<Self> {
        let m = draws.len();
        check_level(m, alpha)?;
        if draws.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidSpec("null draws contain NaN".into()));
        }
        draws.sort_by(f64::total_cmp);
        let k = threshold_rank(m, alpha);
        Ok(Self {
            lambda_alpha: draws[k - 1],
            sorted_null_stats: draws,
            alpha,
            m_draws: m,
            seed,
            statistic_id: statistic_id.into(),
        })
    }

    /// Same draws, another level.
    pub fn at_level(&self, alpha: f64) -> Result<Self> {
        Self::from_draws(self.sorted_null_stats.clone(), alpha, self.seed, self.statistic_id.clone())
    }

    /// Number of draws at least as large as `v`.
    pub fn count_at_least(&self, v: f64) -> usize {
        let below = self.sorted_null_stats.partition_point(|&s| s < v);
        self.m_draws - below
    }

    /// Writes the audit table: `# key=value` metadata lines, then one draw per row.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# statistic={}", self.statistic_id)?;
        writeln!(w, "# m={}", self.m_draws)?;
        writeln!(w, "# alpha={}", self.alpha)?;
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# lambda_alpha={}", self.lambda_alpha)?;
        writeln!(w, "index,null_stat")?;
        for (i, v) in self.sorted_null_stats.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidSpec(format!("calibration file: {msg}"));
        let mut meta = HashMap::new();
        let mut draws = Vec::new();
        let mut header_seen = false;
        for line in BufReader::new(r).lines() {
            let line = line.map_err(|e| bad(&e.to_string()))?;
            if let Some(kv) = line.strip_prefix("# ") {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed metadata line"))?;
                meta.insert(k.to_string(), v.to_string());
            } else if !header_seen {
                if line != "index,null_stat" {
                    return Err(bad("missing `index,null_stat` header"));
                }
                header_seen = true;
            } else if !line.is_empty() {
                let (_, v) = line.split_once(',').ok_or_else(|| bad("malformed row"))?;
                draws.push(v.parse::<f64>().map_err(|_| bad("non-numeric draw"))?);
            }
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(&format!("missing `{k}`")));
        let alpha: f64 = get("alpha")?.parse().map_err(|_| bad("alpha"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("seed"))?;
        let m: usize = get("m")?.parse().map_err(|_| bad("m"))?;
        if m != draws.len() {
            return Err(bad("row count differs from m"));
        }
        Self::from_draws(draws, alpha, seed, get("statistic")?.clone())
    }
}

fn draw_value(v: StatValue) -> f64 {
    if v.degenerate {
        f64::INFINITY
    } else {
        v.value
    }
}

/// Null draws for stream indices `start..start + m`.
fn simulate_stats(stats: &[&PreparedStatistic], model: &NullModel, m: usize, start: u64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if stats.iter().any(|s| s.design().nrows() != model.n()) {
        return Err(Error::DimensionMismatch("null model and design disagree on N".into()));
    }
    let rows: Vec<Vec<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, start + i);
            let y0 = simulate_null(model, &mut rng);
            stats.iter().map(|s| s.eval(&y0).map(draw_value)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..stats.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect())
}

/// Simulates `M` null statistics and returns the test-threshold.
pub fn calibrate(stat: &PreparedStatistic, model: &NullModel, m: usize, alpha: f64, seed: u64) -> Result<CalibrationResult> {
    check_level(m, alpha)?;
    let mut draws = simulate_stats(&[stat], model, m, 0, seed)?;
    CalibrationResult::from_draws(draws.pop().expect("one statistic"), alpha, seed, stat.spec().id())
}

/// Monte-Carlo p-value `(1 + #{Λ0 ≥ observed}) / (M + 1)`.
pub fn p_value(observed: StatValue, cal: &CalibrationResult, statistic_id: &str) -> Result<f64> {
    if statistic_id != cal.statistic_id {
        return Err(Error::StatisticMismatch {
            expected: cal.statistic_id.clone(),
            got: statistic_id.to_string(),
        });
    }
    if observed.degenerate {
        return Ok(1.0);
    }
    Ok((1 + cal.count_at_least(observed.value)) as f64 / (cal.m_draws + 1) as f64)
}

/// Calibration of the composite max-ratio test.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeCalibration {
    pub cal_1: CalibrationResult,
    pub cal_2: CalibrationResult,
    /// Sorted composite null values from the second, independent batch.
    pub sorted_composite: Vec<f64>,
    pub kappa_alpha: f64,
    pub alpha: f64,
}

impl CompositeCalibration {
    /// `max(λ0⁽¹⁾/λ_α⁽¹⁾, λ0⁽²⁾/λ_α⁽²⁾)`; a degenerate component yields `None`.
    pub fn composite_value(&self, v1: StatValue, v2: StatValue) -> Option<f64> {
        if v1.degenerate || v2.degenerate {
            return None;
        }
        Some(composite_ratio(v1.value, v2.value, self.cal_1.lambda_alpha, self.cal_2.lambda_alpha))
    }

    pub fn p_value(&self, composite: f64) -> f64 {
        let m = self.sorted_composite.len();
        let at_least = m - self.sorted_composite.partition_point(|&s| s < composite);
        (1 + at_least) as f64 / (m + 1) as f64
    }
}

fn composite_ratio(v1: f64, v2: f64, l1: f64, l2: f64) -> f64 {
    (v1 / l1).max(v2 / l2)
}

/// Batch 1 (streams `0..M`) calibrates both components on shared draws;
/// batch 2 (streams `M..2M`) calibrates the composite statistic.
pub fn calibrate_composite(
    stat1: &PreparedStatistic,
    stat2: &PreparedStatistic,
    model: &NullModel,
    m: usize,
    alpha: f64,
    seed: u64,
) -> Result<CompositeCalibration> {
    check_level(m, alpha)?;
    let mut batch1 = simulate_stats(&[stat1, stat2], model, m, 0, seed)?;
    let d2 = batch1.pop().expect("two statistics");
    let d1 = batch1.pop().expect("two statistics");
    let cal_1 = CalibrationResult::from_draws(d1, alpha, seed, stat1.spec().id())?;
    let cal_2 = CalibrationResult::from_draws(d2, alpha, seed, stat2.spec().id())?;
    composite_from_components(stat1, stat2, model, cal_1, cal_2, m, seed)
}

fn composite_from_components(
    stat1: &PreparedStatistic,
    stat2: &PreparedStatistic,
    model: &NullModel,
    cal_1: CalibrationResult,
    cal_2: CalibrationResult,
    m: usize,
    seed: u64,
) -> Result<CompositeCalibration> {
    let alpha = cal_1.alpha;
    let batch2 = simulate_stats(&[stat1, stat2], model, m, m as u64, seed)?;
    let composite: Vec<f64> = batch2[0]
        .iter()
        .zip(&batch2[1])
        .map(|(&a, &b)| composite_ratio(a, b, cal_1.lambda_alpha, cal_2.lambda_alpha))
        .collect();
    let id = format!("composite({},{})", cal_1.statistic_id, cal_2.statistic_id);
    let comp = CalibrationResult::from_draws(composite, alpha, seed, id)?;
    Ok(CompositeCalibration {
        cal_1,
        cal_2,
        kappa_alpha: comp.lambda_alpha,
        sorted_composite: comp.sorted_null_stats,
        alpha,
    })
}

/// Key under which null draws are cached: design, hypothesis matrix (without
/// `c`), statistic, null model, `M` and seed. The level is not part of the
/// key; thresholds are recomputed from the stored draws.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub x_fingerprint: u64,
    pub a_fingerprint: u64,
    pub statistic_id: String,
    pub null_fingerprint: u64,
    pub m: usize,
    pub seed: u64,
}

impl CacheKey {
    pub fn new(stat: &PreparedStatistic, hyp: &LinearHypothesis, model: &NullModel, m: usize, seed: u64) -> Self {
        Self {
            x_fingerprint: stat.design().fingerprint(),
            a_fingerprint: hyp.fingerprint(),
            statistic_id: stat.spec().id(),
            null_fingerprint: model.fingerprint(),
            m,
            seed,
        }
    }

    /// File-name-safe digest.
    pub fn digest(&self) -> String {
        let mut h = Fnv::new();
        h.write_u64(self.x_fingerprint);
        h.write_u64(self.a_fingerprint);
        h.write_str(&self.statistic_id);
        h.write_u64(self.null_fingerprint);
        h.write_u64(self.m as u64);
        h.write_u64(self.seed);
        format!("{:016x}", h.finish())
    }
}

/// Install-once store of calibrations shared across tests, optionally
/// mirrored to a directory.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    single: RwLock<HashMap<CacheKey, Arc<CalibrationResult>>>,
    composite: RwLock<HashMap<(CacheKey, CacheKey, u64), Arc<CompositeCalibration>>>,
    dir: Option<PathBuf>,
}

impl CalibrationCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cache persisted under `dir` (created on first write).
    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// Cache backed by `$THRESHTEST_CACHE_DIR` when set.
    pub fn from_env() -> Self {
        match std::env::var_os("THRESHTEST_CACHE_DIR") {
            Some(d) if !d.is_empty() => Self::with_dir(PathBuf::from(d)),
            _ => Self::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.single.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("cal-{}.csv", key.digest())))
    }

    /// Calibration at level `alpha`, simulated at most once per key.
    pub fn calibrate(
        &self,
        stat: &PreparedStatistic,
        hyp: &LinearHypothesis,
        model: &NullModel,
        m: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<CalibrationResult> {
        check_level(m, alpha)?;
        let key = CacheKey::new(stat, hyp, model, m, seed);
        let draws = self.draws(&key, || calibrate(stat, model, m, alpha, seed))?;
        if draws.alpha == alpha {
            Ok((*draws).clone())
        } else {
            draws.at_level(alpha)
        }
    }

    fn draws(&self, key: &CacheKey, compute: impl FnOnce() -> Result<CalibrationResult>) -> Result<Arc<CalibrationResult>> {
        if let Some(hit) = self.single.read().expect("cache lock").get(key) {
            return Ok(Arc::clone(hit));
        }
        let loaded = self
            .path_for(key)
            .filter(|p| p.exists())
            .and_then(|p| fs::File::open(p).ok())
            .and_then(|f| CalibrationResult::read_from(f).ok())
            .filter(|c| c.statistic_id == key.statistic_id && c.m_draws == key.m && c.seed == key.seed);
        let fresh = loaded.is_none();
        let value = Arc::new(match loaded {
            Some(c) => c,
            None => compute()?,
        });
        let mut map = self.single.write().expect("cache lock");
        let installed = Arc::clone(map.entry(key.clone()).or_insert(value));
        drop(map);
        if fresh {
            if let Some(path) = self.path_for(key) {
                // best effort: a failed write only costs a recomputation later
                let _ = path
                    .parent()
                    .map(fs::create_dir_all)
                    .transpose()
                    .and_then(|_| fs::File::create(&path))
                    .and_then(|f| installed.write_to(std::io::BufWriter::new(f)));
            }
        }
        Ok(installed)
    }

    /// Composite calibration; component draws are shared with single-statistic
    /// calibrations under the same keys.
    pub fn calibrate_composite(
        &self,
        stat1: &PreparedStatistic,
        stat2: &PreparedStatistic,
        hyp: &LinearHypothesis,
        model: &NullModel,
        m: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<CompositeCalibration> {
        check_level(m, alpha)?;
        let k1 = CacheKey::new(stat1, hyp, model, m, seed);
        let k2 = CacheKey::new(stat2, hyp, model, m, seed);
        let ckey = (k1, k2, alpha.to_bits());
        if let Some(hit) = self.composite.read().expect("cache lock").get(&ckey) {
            return Ok((**hit).clone());
        }
        let fresh = calibrate_composite(stat1, stat2, model, m, alpha, seed)?;
        let mut map = self.composite.write().expect("cache lock");
        Ok((**map.entry(ckey).or_insert_with(|| Arc::new(fresh))).clone())
    }
}
