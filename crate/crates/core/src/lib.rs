//! Canonical and kernel canonical Wiener-Granger causality.
//!
//! Scores are built from partial canonical correlations between a target's
//! present (`X`), a source's past (`Y`) and a conditioning history (`Z`):
//!
//! * [`causality::cc_score`] over linear partial CCA,
//! * [`causality::kcc_score`] over a regularized, low-rank kernel partial CCA,
//! * [`causality::genvar_score`], Geweke's generalized-variance statistic.
//!
//! Significance comes from a χ² approximation or from permutation
//! resampling of the source rows.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod causality;
pub mod cca;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod kernel;
pub mod numerics;
pub mod synth;

pub use causality::{
    causal_scan, causal_test, CausalResult, Method, PermScheme, PermutationConfig,
    PermutationOutcome, TestConfig,
};
pub use cca::CanonicalSpectrum;
pub use embedding::{DesignSource, LaggedDesign, LaggedPanel, TimeSeriesTable};
pub use error::{Error, Result};
pub use exec::Execution;
pub use kernel::{CenteredFactor, KernelKind, KernelSpec};
pub use numerics::{LowRankFactor, Matrix, SymSpectrum};
pub use synth::SynthConfig;
