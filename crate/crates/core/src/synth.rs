//! Synthetic benchmark with one non-monotone causal signal per source.
//!
//! Each row is an independent realization. With `s` and `ε` fresh standard
//! normals per entry (`c` the noise scale):
//!
//! | block | lag `i` value |
//! |-------|---------------|
//! | X  | `s` at lag 0, `s + 0.1·c·i·ε` at lag `i ≥ 1` |
//! | Y1 | `sin(5s) + 0.1·c·i·ε` at `i ≥ 1` |
//! | Y2 | `ln|s + 0.25·c·(i−1)·ε|` at `i ≥ 2` |
//! | Y3 | `±s + 0.2·c·(i−2)·ε` at `i ≥ 3`, sign drawn per entry |
//! | Y4 | `exp(s) + 1.3·c·(i−3)·ε` at `i ≥ 4` |
//!
//! All other lag positions are independent standard noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::LaggedPanel;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::Matrix;

pub const BLOCK_NAMES: [&str; 5] = ["X", "Y1", "Y2", "Y3", "Y4"];

/// Lag at which each `Y` block starts to carry the signal.
pub const ONSET: [(&str, usize); 4] = [("Y1", 1), ("Y2", 2), ("Y3", 3), ("Y4", 4)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub lags: usize,
    pub dims: usize,
    pub seed: u64,
    /// Multiplies every additive noise coefficient.
    pub noise_scale: f64,
}

impl SynthConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            lags: 4,
            dims: 20,
            seed,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lags < 4 {
            return Err(Error::Config(format!(
                "the benchmark needs at least 4 lags, got {}",
                self.lags
            )));
        }
        if self.dims == 0 {
            return Err(Error::Config("dims must be at least 1".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("need at least 2 samples".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise scale must be nonnegative".into()));
        }
        Ok(())
    }
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// Values of one row, laid out `[block][lag][dim]`.
fn planted_row(cfg: &SynthConfig, row: usize) -> Vec<f64> {
    let (k, d, c) = (cfg.lags, cfg.dims, cfg.noise_scale);
    let mut rng = row_rng(cfg.seed, row);
    let rng = &mut rng;
    let g = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let s: Vec<f64> = (0..d).map(|_| g(rng)).collect();
    let mut out = Vec::with_capacity(5 * (k + 1) * d);
    // X
    out.extend_from_slice(&s);
    for i in 1..=k {
        for &sv in &s {
            out.push(sv + 0.1 * c * i as f64 * g(rng));
        }
    }
    // Y1
    for i in 0..=k {
        for &sv in &s {
            out.push(if i >= 1 {
                (5.0 * sv).sin() + 0.1 * c * i as f64 * g(rng)
            } else {
                g(rng)
            });
        }
    }
    // Y2
    for j in 0..=k {
        for &sv in &s {
            out.push(if j >= 2 {
                (sv + 0.25 * c * (j - 1) as f64 * g(rng))
                    .abs()
                    .max(1e-300)
                    .ln()
            } else {
                g(rng)
            });
        }
    }
    // Y3: sign (−1)^ω with ω uniform on {1, 2}
    for j in 0..=k {
        for &sv in &s {
            out.push(if j >= 3 {
                let omega: u8 = rng.gen_range(1..=2);
                let sign = if omega == 1 { -1.0 } else { 1.0 };
                sign * sv + 0.2 * c * (j - 2) as f64 * g(rng)
            } else {
                g(rng)
            });
        }
    }
    // Y4
    for j in 0..=k {
        for &sv in &s {
            out.push(if j >= 4 {
                sv.exp() + 1.3 * c * (j - 3) as f64 * g(rng)
            } else {
                g(rng)
            });
        }
    }
    out
}

fn null_row(cfg: &SynthConfig, row: usize) -> Vec<f64> {
    let mut rng = row_rng(cfg.seed, row);
    (0..5 * (cfg.lags + 1) * cfg.dims)
        .map(|_| rng.sample(StandardNormal))
        .collect()
}

fn assemble(cfg: &SynthConfig, rows: Vec<Vec<f64>>) -> Result<LaggedPanel> {
    let (n, k, d) = (cfg.n_samples, cfg.lags, cfg.dims);
    let blocks = BLOCK_NAMES
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let lags = (0..=k)
                .map(|l| {
                    let base = (b * (k + 1) + l) * d;
                    Matrix::from_fn(n, d, |i, j| rows[i][base + j])
                })
                .collect();
            (name.to_string(), lags)
        })
        .collect();
    LaggedPanel::new(blocks)
}

/// The planted system.
pub fn generate(cfg: &SynthConfig, exec: Execution) -> Result<LaggedPanel> {
    cfg.validate()?;
    let rows = exec.map(cfg.n_samples, |r| planted_row(cfg, r));
    assemble(cfg, rows)
}

/// Same shapes, every entry independent standard noise.
pub fn generate_null(cfg: &SynthConfig, exec: Execution) -> Result<LaggedPanel> {
    cfg.validate()?;
    let rows = exec.map(cfg.n_samples, |r| null_row(cfg, r));
    assemble(cfg, rows)
}
