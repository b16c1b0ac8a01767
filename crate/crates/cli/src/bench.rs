//! Repeated generate-and-test runs on the synthetic benchmark.

use kcc_core::causality::{causal_test, stable_hash, Method, TestConfig};
use kcc_core::synth::{generate, generate_null, BLOCK_NAMES, ONSET};
use kcc_core::{KernelSpec, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const BENCH_FORMAT: &str = "kcc-bench/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub source: String,
    pub target: String,
    pub lag: usize,
}

impl Link {
    pub fn new(source: &str, target: &str, lag: usize) -> Self {
        Self {
            source: source.to_string(),
            target: target.to_string(),
            lag,
        }
    }

    /// Whether the generator plants a dependence for this link.
    pub fn planted(&self) -> bool {
        self.target == "X"
            && ONSET
                .iter()
                .any(|(b, onset)| *b == self.source && self.lag >= *onset)
    }
}

/// `Y^(j) → X` at every lag `1..=k` plus the reverse `X → Y^(j)` at lag 1.
pub fn default_links(k: usize) -> Vec<Link> {
    let mut links = Vec::new();
    for (y, _) in ONSET {
        for lag in 1..=k {
            links.push(Link::new(y, "X", lag));
        }
    }
    for (y, _) in ONSET {
        links.push(Link::new("X", y, 1));
    }
    links
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub synth: SynthConfig,
    pub replicates: usize,
    pub test: TestConfig,
    pub links: Vec<Link>,
    /// Draw from the matched null system instead.
    pub null: bool,
}

impl BenchConfig {
    pub fn new(synth: SynthConfig, replicates: usize, test: TestConfig) -> Self {
        Self {
            links: default_links(synth.lags),
            synth,
            replicates,
            test,
            null: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.replicates < 2 {
            return Err(CliError::Config(format!(
                "bench needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        self.synth.validate()?;
        self.test.validate()?;
        for l in &self.links {
            if !BLOCK_NAMES.contains(&l.source.as_str())
                || !BLOCK_NAMES.contains(&l.target.as_str())
            {
                return Err(CliError::Config(format!(
                    "unknown benchmark block in link {} -> {}",
                    l.source, l.target
                )));
            }
            if l.source == l.target || l.lag == 0 || l.lag > self.synth.lags {
                return Err(CliError::Config(format!(
                    "invalid link {} -> {} at lag {}",
                    l.source, l.target, l.lag
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkReport {
    pub source: String,
    pub target: String,
    pub lag: usize,
    pub planted: bool,
    /// Replicates flagged significant at the configured α.
    pub discoveries: usize,
    pub f: f64,
    pub mean_score: f64,
    pub sd_score: f64,
    /// `sd / mean`; absent when the mean is zero.
    pub cov: Option<f64>,
    pub scores: Vec<f64>,
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub method: Method,
    pub n_samples: usize,
    pub dims: usize,
    pub lags: usize,
    pub noise_scale: f64,
    pub null: bool,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub permutations: Option<usize>,
    pub early_stop: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub config: BenchSummary,
    pub links: Vec<LinkReport>,
}

impl BenchReport {
    pub fn link(&self, source: &str, target: &str, lag: usize) -> Option<&LinkReport> {
        self.links
            .iter()
            .find(|l| l.source == source && l.target == target && l.lag == lag)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("serializing bench report: {e}")))?;
        s.push('\n');
        Ok(s)
    }
}

/// Seed of replicate `r`, used for both data generation and permutations.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), b"replicate", &(r as u64).to_le_bytes()])
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, CliError> {
    run_bench_with(cfg, |_, _| {})
}

/// As [`run_bench`], calling `progress(replicate, replicates)` after each
/// replicate.
pub fn run_bench_with(
    cfg: &BenchConfig,
    mut progress: impl FnMut(usize, usize),
) -> Result<BenchReport, CliError> {
    cfg.validate()?;
    let n_links = cfg.links.len();
    let mut scores = vec![Vec::with_capacity(cfg.replicates); n_links];
    let mut pvals = vec![Vec::with_capacity(cfg.replicates); n_links];
    let mut hits = vec![0usize; n_links];
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg.synth.seed, r);
        let synth = SynthConfig { seed, ..cfg.synth };
        let panel = if cfg.null {
            generate_null(&synth, cfg.test.exec)?
        } else {
            generate(&synth, cfg.test.exec)?
        }
        .standardize()?;
        let mut test = cfg.test;
        if let Some(p) = test.permutations.as_mut() {
            p.seed = seed;
        }
        for (i, link) in cfg.links.iter().enumerate() {
            let cond: Vec<&str> = BLOCK_NAMES
                .iter()
                .copied()
                .filter(|b| *b != link.source && *b != link.target)
                .collect();
            let res = causal_test(&panel, &link.target, &link.source, &cond, link.lag, &test)?;
            scores[i].push(res.score);
            pvals[i].push(res.p_perm.or(res.p_chi2).unwrap_or(f64::NAN));
            hits[i] += res.significant as usize;
        }
        progress(r + 1, cfg.replicates);
    }
    let links = cfg
        .links
        .iter()
        .enumerate()
        .map(|(i, link)| {
            let s = &scores[i];
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            LinkReport {
                source: link.source.clone(),
                target: link.target.clone(),
                lag: link.lag,
                planted: !cfg.null && link.planted(),
                discoveries: hits[i],
                f: hits[i] as f64 / n,
                mean_score: mean,
                sd_score: sd,
                cov: (mean != 0.0).then(|| sd / mean),
                scores: scores[i].clone(),
                p_values: pvals[i].clone(),
            }
        })
        .collect();
    Ok(BenchReport {
        format: BENCH_FORMAT.to_string(),
        config: BenchSummary {
            method: cfg.test.method,
            n_samples: cfg.synth.n_samples,
            dims: cfg.synth.dims,
            lags: cfg.synth.lags,
            noise_scale: cfg.synth.noise_scale,
            null: cfg.null,
            replicates: cfg.replicates,
            seed: cfg.synth.seed,
            alpha: cfg.test.alpha,
            permutations: cfg.test.permutations.map(|p| p.n_perm),
            early_stop: cfg.test.permutations.and_then(|p| p.early_stop),
            kernel: (cfg.test.method == Method::Kcc).then_some(cfg.test.kernel),
        },
        links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_links() {
        assert!(Link::new("Y1", "X", 1).planted());
        assert!(Link::new("Y4", "X", 4).planted());
        assert!(!Link::new("Y4", "X", 3).planted());
        assert!(!Link::new("X", "Y1", 1).planted());
        assert_eq!(default_links(4).len(), 20);
    }

    #[test]
    fn zero_replicates_rejected() {
        let cfg = BenchConfig::new(SynthConfig::new(100, 1), 0, TestConfig::new(Method::Cc));
        assert!(matches!(run_bench(&cfg), Err(CliError::Config(_))));
    }

    #[test]
    fn small_linear_bench() {
        let mut synth = SynthConfig::new(300, 3);
        synth.dims = 2;
        let mut cfg = BenchConfig::new(synth, 3, TestConfig::new(Method::GenVar));
        cfg.links = vec![Link::new("Y4", "X", 4), Link::new("X", "Y1", 1)];
        let rep = run_bench(&cfg).unwrap();
        assert_eq!(rep.links.len(), 2);
        let y4 = rep.link("Y4", "X", 4).unwrap();
        assert!(y4.planted);
        assert_eq!(y4.scores.len(), 3);
        assert_eq!(y4.p_values.len(), 3);
        let hits = y4.p_values.iter().filter(|p| **p < 0.001).count();
        assert_eq!(y4.discoveries, hits);
        assert_eq!(y4.f, hits as f64 / 3.0);
        let cov = y4.cov.unwrap();
        assert!((cov - y4.sd_score / y4.mean_score).abs() < 1e-15);
        assert!(rep.to_json().unwrap().contains(BENCH_FORMAT));
    }
}
