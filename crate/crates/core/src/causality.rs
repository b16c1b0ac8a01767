//! Causality scores, significance tests and the block-pair scan.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cca::{floored_cholesky, pcca, CanonicalSpectrum, PccaContext};
use crate::embedding::{aggregate_rank_score, DesignSource, LaggedDesign};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::{low_rank_centered_gram, KernelPartialContext, KernelSpec};
use crate::numerics::{
    center_columns, cross_covariance, hstack, log_det_from_cholesky, partial_covariance,
};

/// Determinant ratios above this are reported as saturated.
pub const GENVAR_RATIO_CAP: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cc,
    Kcc,
    GenVar,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cc => "cc",
            Method::Kcc => "kcc",
            Method::GenVar => "genvar",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cc" => Ok(Method::Cc),
            "kcc" => Ok(Method::Kcc),
            "genvar" => Ok(Method::GenVar),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

fn log_score(squared: impl IntoIterator<Item = f64>) -> Result<f64> {
    let mut total = 0.0;
    for r2 in squared {
        if !(0.0..1.0).contains(&r2) {
            return Err(Error::DomainError(format!(
                "canonical correlation {} outside [0, 1)",
                r2.sqrt()
            )));
        }
        total -= 0.5 * (-r2).ln_1p();
    }
    Ok(total)
}

/// `−½·Σ ln(1 − ρᵢ²)` over partial canonical correlations.
pub fn cc_score(spec: &CanonicalSpectrum) -> Result<f64> {
    if spec.correlations.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::DomainError("negative or NaN correlation".into()));
    }
    log_score(spec.correlations.iter().map(|r| r * r))
}

/// Same formula over kernel partial canonical correlations.
pub fn kcc_score(spec: &CanonicalSpectrum) -> Result<f64> {
    cc_score(spec)
}

/// Geweke's statistic with its saturation flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenVarScore {
    pub score: f64,
    pub saturated: bool,
}

fn residual_log_det(
    x: &crate::numerics::Matrix,
    w: &crate::numerics::Matrix,
) -> Result<Option<f64>> {
    let sxx = cross_covariance(x, x);
    let resid = if w.ncols() == 0 {
        sxx
    } else {
        let (sww, _, _) = floored_cholesky(&cross_covariance(w, w), "regressor")?;
        let sxw = cross_covariance(x, w);
        partial_covariance(&sxx, &sxw, &sww, &sxw.transpose(), 0.0)?
    };
    let resid = (&resid + resid.transpose()) * 0.5;
    match crate::numerics::cholesky(&resid) {
        Ok(l) => Ok(Some(log_det_from_cholesky(&l))),
        Err(Error::NotPositiveDefinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `ln(|Σ_X|Z| / |Σ_X|YZ|)` from the residual covariances of the
/// regressions of `X` on `Z` and on `[Y, Z]`.
pub fn genvar_score(design: &LaggedDesign) -> Result<GenVarScore> {
    let (x, y, z) = (&design.x, &design.y, &design.z);
    let n = x.nrows();
    let needed = x.ncols() + y.ncols() + z.ncols();
    if n <= needed {
        return Err(Error::RankDeficient(format!(
            "{n} samples cannot support {needed} variables"
        )));
    }
    let (x, y, z) = (center_columns(x), center_columns(y), center_columns(z));
    let restricted = residual_log_det(&x, &z)?.ok_or_else(|| {
        Error::RankDeficient("target is fully determined by its conditioning set".into())
    })?;
    let full = residual_log_det(&x, &hstack(&[&y, &z], n))?;
    let cap = GENVAR_RATIO_CAP.ln();
    Ok(match full {
        Some(full) if restricted - full <= cap => GenVarScore {
            score: (restricted - full).max(0.0),
            saturated: false,
        },
        _ => GenVarScore {
            score: cap,
            saturated: true,
        },
    })
}

/// `(−½·ln(1−ρ_max²), d_min·that)`.
pub fn te_bounds(spec: &CanonicalSpectrum, d_min: usize) -> (f64, f64) {
    let r = spec.max().clamp(0.0, 1.0);
    let lower = -0.5 * (-r * r).ln_1p();
    (lower, d_min as f64 * lower)
}

/// Upper-tail χ² probability of `2·N·score` with `df` degrees of freedom,
/// for a score on the CC scale (`½` of GenVar).
pub fn chi2_pvalue(score: f64, n: usize, df: usize) -> f64 {
    if !(score > 0.0) || df == 0 {
        return 1.0;
    }
    match ChiSquared::new(df as f64) {
        Ok(dist) => dist.sf(2.0 * n as f64 * score).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermScheme {
    /// Uniform random permutation of the rows.
    Iid,
    /// Rotation of the rows by a random offset of at least `k`.
    Circular,
}

impl std::str::FromStr for PermScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iid" => Ok(PermScheme::Iid),
            "circular" => Ok(PermScheme::Circular),
            other => Err(Error::Config(format!(
                "unknown permutation scheme `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_perm: usize,
    pub scheme: PermScheme,
    pub seed: u64,
    /// Stop once this many null values reach the observed score.
    pub early_stop: Option<usize>,
}

impl PermutationConfig {
    pub fn new(n_perm: usize, seed: u64) -> Self {
        Self {
            n_perm,
            scheme: PermScheme::Iid,
            seed,
            early_stop: None,
        }
    }
}

/// A statistic that can be re-evaluated with the source rows permuted.
pub trait PermutationStatistic: Sync {
    fn rows(&self) -> usize;
    /// The statistic with row `i` of the source replaced by row `perm[i]`.
    fn evaluate(&self, perm: Option<&[usize]>) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub observed: f64,
    pub p_value: f64,
    pub quantile_99: f64,
    pub null: Vec<f64>,
    pub stopped_early: bool,
}

/// The permutation used by replicate `index`; depends only on
/// `(seed, index)`.
pub fn replicate_permutation(
    n: usize,
    scheme: PermScheme,
    min_shift: usize,
    seed: u64,
    index: usize,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    match scheme {
        PermScheme::Iid => {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        }
        PermScheme::Circular => {
            let offset = rng.gen_range(min_shift..=n - min_shift);
            (0..n).map(|i| (i + offset) % n).collect()
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

const BATCH: usize = 32;

/// Permutation p-value `(1 + #{null ≥ observed}) / (1 + n)`.
///
/// `min_shift` is the smallest circular offset (the lag count). With
/// `early_stop = Some(h)` replicates are consumed in index order and the
/// test stops at the `h`-th exceedance; `n` is then the number consumed.
pub fn permutation_test(
    stat: &dyn PermutationStatistic,
    cfg: &PermutationConfig,
    min_shift: usize,
    exec: Execution,
) -> Result<PermutationOutcome> {
    if cfg.n_perm < 19 {
        return Err(Error::Config(format!(
            "at least 19 permutations are needed, got {}",
            cfg.n_perm
        )));
    }
    if cfg.early_stop == Some(0) {
        return Err(Error::Config("early-stop count must be at least 1".into()));
    }
    let n = stat.rows();
    if cfg.scheme == PermScheme::Circular && n < 2 * min_shift.max(1) {
        return Err(Error::Config(format!(
            "circular shifts of at least {min_shift} need at least {} rows",
            2 * min_shift.max(1)
        )));
    }
    let min_shift = min_shift.max(1);
    let observed = stat.evaluate(None)?;
    let mut null = Vec::with_capacity(cfg.n_perm);
    let mut exceed = 0usize;
    let mut stopped_early = false;
    let batch = if cfg.early_stop.is_some() {
        BATCH
    } else {
        cfg.n_perm
    };
    'outer: while null.len() < cfg.n_perm {
        let start = null.len();
        let count = batch.min(cfg.n_perm - start);
        let values = exec.map(count, |i| {
            let perm = replicate_permutation(n, cfg.scheme, min_shift, cfg.seed, start + i);
            stat.evaluate(Some(&perm))
        });
        for v in values {
            let v = v?;
            null.push(v);
            if v >= observed {
                exceed += 1;
                if cfg.early_stop.is_some_and(|h| exceed >= h) && null.len() < cfg.n_perm {
                    stopped_early = true;
                    break 'outer;
                }
            }
        }
    }
    Ok(PermutationOutcome {
        observed,
        p_value: (1 + exceed) as f64 / (1 + null.len()) as f64,
        quantile_99: quantile(&null, 0.99),
        null,
        stopped_early,
    })
}

/// Settings shared by every test of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub method: Method,
    pub kernel: KernelSpec,
    /// Ridge on the conditioning covariance for the linear methods.
    pub linear_ridge: f64,
    pub permutations: Option<PermutationConfig>,
    pub alpha: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl TestConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            kernel: KernelSpec::recommended(),
            linear_ridge: 0.0,
            permutations: None,
            alpha: 0.001,
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.linear_ridge >= 0.0) {
            return Err(Error::Config("linear ridge must be nonnegative".into()));
        }
        if self.method == Method::Kcc {
            self.kernel.validate()?;
            if self.kernel.ridge <= 0.0 {
                return Err(Error::IllPosed(
                    "kernel partial CCA needs a positive ridge ζ".into(),
                ));
            }
        }
        if let Some(p) = &self.permutations {
            if p.n_perm < 19 {
                return Err(Error::Config(format!(
                    "at least 19 permutations are needed, got {}",
                    p.n_perm
                )));
            }
        }
        Ok(())
    }
}

/// Summary of the canonical spectrum behind a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub d: usize,
    pub max: f64,
    /// Up to the five leading correlations.
    pub leading: Vec<f64>,
    pub regularized: bool,
    /// Factor ranks `(c_X, c_Y, c_Z)` for the kernel method.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_ranks: Option<[usize; 3]>,
    /// A factor stopped at its rank cap before reaching τ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
}

impl SpectrumSummary {
    fn new(correlations: &[f64], regularized: bool) -> Self {
        Self {
            d: correlations.len(),
            max: correlations.first().copied().unwrap_or(0.0),
            leading: correlations.iter().take(5).copied().collect(),
            regularized,
            factor_ranks: None,
            truncated: None,
        }
    }
}

/// One tested hypothesis `source → target` at lag count `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalResult {
    pub source: String,
    pub target: String,
    pub k: usize,
    pub method: Method,
    pub score: f64,
    pub p_chi2: Option<f64>,
    pub p_perm: Option<f64>,
    pub null_quantile_99: Option<f64>,
    /// Permutations actually evaluated.
    pub n_null: Option<usize>,
    pub significant: bool,
    pub spectrum: SpectrumSummary,
    pub rank_score: Option<f64>,
    pub saturated: bool,
}

impl CausalResult {
    /// `(score − q99) / q99`, the relative distance from the null's 99th
    /// percentile.
    pub fn null_distance(&self) -> Option<f64> {
        self.null_quantile_99.map(|q| {
            if q > 0.0 {
                (self.score - q) / q
            } else {
                f64::INFINITY
            }
        })
    }
}

struct LinearStatistic {
    ctx: PccaContext,
    rows: usize,
    factor: f64,
}

impl PermutationStatistic for LinearStatistic {
    fn rows(&self) -> usize {
        self.rows
    }
    fn evaluate(&self, perm: Option<&[usize]>) -> Result<f64> {
        let rho = self.ctx.correlations(perm)?;
        let cap = crate::kernel::RHO_CAP * crate::kernel::RHO_CAP;
        Ok(self.factor * log_score(rho.iter().map(|r| (r * r).min(cap)))?)
    }
}

struct KernelStatistic {
    ctx: KernelPartialContext,
    rows: usize,
}

impl PermutationStatistic for KernelStatistic {
    fn rows(&self) -> usize {
        self.rows
    }
    fn evaluate(&self, perm: Option<&[usize]>) -> Result<f64> {
        log_score(self.ctx.squared_correlations(perm)?)
    }
}

/// 64-bit FNV-1a; used to derive per-test seeds that do not depend on the
/// order in which tests are enumerated.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the permutations of one `(source, target, k)` test.
pub fn test_seed(seed: u64, source: &str, target: &str, k: usize) -> u64 {
    stable_hash(&[
        &seed.to_le_bytes(),
        source.as_bytes(),
        target.as_bytes(),
        &(k as u64).to_le_bytes(),
    ])
}

fn rank_annotation(design: &LaggedDesign) -> Option<f64> {
    let d = design.source_dims();
    let last = design.y.columns((design.k - 1) * d, d).into_owned();
    aggregate_rank_score(&design.x, &last).ok()
}

/// Score and test one hypothesis on a prepared design.
pub fn test_design(design: &LaggedDesign, cfg: &TestConfig) -> Result<CausalResult> {
    cfg.validate()?;
    let n = design.n;
    let df = design.x.ncols() * design.y.ncols();
    let perm_cfg = cfg.permutations.map(|p| PermutationConfig {
        seed: test_seed(p.seed, &design.source, &design.target, design.k),
        ..p
    });
    let (score, p_chi2, spectrum, saturated, stat): (_, _, _, _, Box<dyn PermutationStatistic>) =
        match cfg.method {
            Method::Cc | Method::GenVar => {
                let spec = pcca(&design.x, &design.y, &design.z, cfg.linear_ridge)?;
                let summary = SpectrumSummary::new(&spec.correlations, spec.regularized);
                let (score, saturated, factor) = if cfg.method == Method::Cc {
                    (cc_score(&spec)?, false, 1.0)
                } else {
                    let g = genvar_score(design)?;
                    (g.score, g.saturated, 2.0)
                };
                let stat = LinearStatistic {
                    ctx: PccaContext::new(&design.x, &design.y, &design.z, cfg.linear_ridge)?,
                    rows: n,
                    factor,
                };
                (
                    score,
                    Some(chi2_pvalue(score / factor, n, df)),
                    summary,
                    saturated,
                    Box::new(stat),
                )
            }
            Method::Kcc => {
                let k = &cfg.kernel;
                let fx = low_rank_centered_gram(&design.x, &design.target, k, cfg.exec)?;
                let fy = low_rank_centered_gram(&design.y, &design.source, k, cfg.exec)?;
                let fz = if design.z.ncols() > 0 {
                    Some(low_rank_centered_gram(
                        &design.z,
                        "conditioning",
                        k,
                        cfg.exec,
                    )?)
                } else {
                    None
                };
                let ctx = KernelPartialContext::new(&fx, &fy, fz.as_ref(), k.ridge, k.z_ridge)?;
                let rho = ctx.correlations(None)?;
                let mut summary = SpectrumSummary::new(&rho, ctx.regularized());
                summary.factor_ranks = Some([fx.rank, fy.rank, fz.as_ref().map_or(0, |f| f.rank)]);
                summary.truncated =
                    Some(fx.truncated || fy.truncated || fz.as_ref().is_some_and(|f| f.truncated));
                let stat = KernelStatistic { ctx, rows: n };
                let score = stat.evaluate(None)?;
                (score, None, summary, false, Box::new(stat))
            }
        };
    let outcome = match &perm_cfg {
        Some(p) => Some(permutation_test(stat.as_ref(), p, design.k, cfg.exec)?),
        None => None,
    };
    let p_perm = outcome.as_ref().map(|o| o.p_value);
    let decisive = p_perm.or(p_chi2).unwrap_or(1.0);
    Ok(CausalResult {
        source: design.source.clone(),
        target: design.target.clone(),
        k: design.k,
        method: cfg.method,
        score,
        p_chi2,
        p_perm,
        null_quantile_99: outcome.as_ref().map(|o| o.quantile_99),
        n_null: outcome.as_ref().map(|o| o.null.len()),
        significant: decisive < cfg.alpha,
        spectrum,
        rank_score: rank_annotation(design),
        saturated,
    })
}

/// Test `source → target` at lag count `k`, conditioning on the target's
/// own history and on `conditioning` (order is normalized by name).
pub fn causal_test(
    data: &dyn DesignSource,
    target: &str,
    source: &str,
    conditioning: &[&str],
    k: usize,
    cfg: &TestConfig,
) -> Result<CausalResult> {
    let mut cond = conditioning.to_vec();
    cond.sort_unstable();
    let design = data.design(target, source, &cond, k)?;
    test_design(&design, cfg)
}

/// Every ordered block pair at every lag `1..=k`, with all remaining blocks
/// conditioned on. Results are ordered by `(source, target, k)`.
pub fn causal_scan(
    data: &dyn DesignSource,
    k: usize,
    cfg: &TestConfig,
) -> Result<Vec<CausalResult>> {
    let mut names = data.block_names();
    if names.len() < 2 {
        return Err(Error::Config("a scan needs at least two blocks".into()));
    }
    names.sort();
    let mut out = Vec::new();
    for source in &names {
        for target in &names {
            if source == target {
                continue;
            }
            let cond: Vec<&str> = names
                .iter()
                .filter(|b| *b != source && *b != target)
                .map(String::as_str)
                .collect();
            for lag in 1..=k {
                out.push(causal_test(data, target, source, &cond, lag, cfg)?);
            }
        }
    }
    Ok(out)
}
