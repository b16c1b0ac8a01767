//! Gaussian Gram factors and regularized low-rank kernel partial CCA.
//!
//! Gram matrices are never materialized: each block is represented by a
//! centered incomplete-Cholesky factor `G` with `HKH ≈ G·Gᵀ`. Kernel partial
//! CCA is then solved in the spectral coordinates of the factors, which is
//! an exact reduction of the `N`-dimensional dual problem
//!
//! ```text
//! [0, K_xy|z; K_yx|z, 0]·(γ;δ) = ρ·[K_xx|z + ζI, 0; 0, K_yy|z + ζI]·(γ;δ)
//! K_ab|z = K_a·(I − K_z·(K_z² + εI)⁻¹·K_z)·K_b
//! ```

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cca::{floored_cholesky, CanonicalSpectrum};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{
    incomplete_cholesky, permute_rows, solve_lower, sym_eigenvalues, IcdOptions, Matrix,
};

/// Correlations are clipped to `[0, RHO_CAP]`.
pub const RHO_CAP: f64 = 1.0 - 1e-12;

/// Factor directions with `λ ≤ SPECTRAL_FLOOR·λ_max` are dropped.
pub const SPECTRAL_FLOOR: f64 = 1e-12;

/// Rows evaluated per work item when filling a Gram column.
const COLUMN_CHUNK: usize = 512;
/// Relative size of `diag(M_YY)` below which the fast permutation form is
/// recomputed.
const CANCELLATION_LIMIT: f64 = 1e-6;

/// How a multi-column block is turned into a Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `exp(−‖a−b‖² / 2σ²)` over the whole sample vector.
    Radial,
    /// Mean over variables of `exp(−(a_v−b_v)² / 2σ²)`.
    Additive,
}

/// Kernel and regularization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Gaussian width σ.
    pub width: f64,
    /// Penalty ζ on the diagonal blocks.
    pub ridge: f64,
    /// Trace threshold τ for the incomplete Cholesky.
    pub chol_tolerance: f64,
    /// Ridge ε on the conditioning-Gram inverse.
    pub z_ridge: f64,
    /// Optional cap on the factor rank.
    pub max_rank: Option<usize>,
    pub kind: KernelKind,
}

impl KernelSpec {
    /// σ = 1, ζ = 1e−7, τ = 1e−6, ε = ζ, additive kernel, rank ≤ 200.
    pub fn recommended() -> Self {
        Self {
            width: 1.0,
            ridge: 1e-7,
            chol_tolerance: 1e-6,
            z_ridge: 1e-7,
            max_rank: Some(200),
            kind: KernelKind::Additive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!(
                "kernel width must be positive, got {}",
                self.width
            )));
        }
        for (name, v) in [
            ("ridge", self.ridge),
            ("cholesky tolerance", self.chol_tolerance),
            ("conditioning ridge", self.z_ridge),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.max_rank == Some(0) {
            return Err(Error::Config("rank cap must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::recommended()
    }
}

fn gram_rows(m: &Matrix, width: f64, kind: KernelKind, j: usize, start: usize, out: &mut [f64]) {
    let n = m.nrows();
    let d = m.ncols();
    let g = -0.5 / (width * width);
    let data = m.as_slice();
    out.fill(0.0);
    for v in 0..d {
        let col = &data[v * n..(v + 1) * n];
        let c = col[j];
        let rows = &col[start..start + out.len()];
        match kind {
            KernelKind::Radial => {
                for (o, &a) in out.iter_mut().zip(rows) {
                    let t = a - c;
                    *o += t * t;
                }
            }
            KernelKind::Additive => {
                for (o, &a) in out.iter_mut().zip(rows) {
                    let t = a - c;
                    *o += (g * t * t).exp();
                }
            }
        }
    }
    match kind {
        KernelKind::Radial => out.iter_mut().for_each(|o| *o = (g * *o).exp()),
        KernelKind::Additive => {
            let inv = 1.0 / d.max(1) as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
    }
}

/// Column `j` of the Gaussian Gram matrix of the rows of `m`.
pub fn gaussian_gram_column(m: &Matrix, width: f64, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    gram_rows(m, width, KernelKind::Radial, j, 0, &mut out);
    out
}

/// Column `j` of the Gram matrix for `kind`.
pub fn gram_column(m: &Matrix, width: f64, kind: KernelKind, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    gram_rows(m, width, kind, j, 0, &mut out);
    out
}

/// The full Gram matrix; intended for small `N` and tests.
pub fn dense_gram(m: &Matrix, width: f64, kind: KernelKind) -> Matrix {
    let n = m.nrows();
    let mut data = vec![0.0; n * n];
    for (j, col) in data.chunks_mut(n).enumerate() {
        gram_rows(m, width, kind, j, 0, col);
    }
    Matrix::from_vec(n, n, data)
}

/// Centered low-rank factor of one block's Gram matrix.
#[derive(Debug, Clone)]
pub struct CenteredFactor {
    pub factor: Matrix,
    pub name: String,
    pub rank: usize,
    /// Residual trace of the uncentered factorization.
    pub residual_trace: f64,
    pub truncated: bool,
}

/// Incomplete Cholesky of the implicit Gram of `m`, then column centering
/// (`H·G` with `H = I − 11ᵀ/N`).
pub fn low_rank_centered_gram(
    m: &Matrix,
    name: &str,
    spec: &KernelSpec,
    exec: Execution,
) -> Result<CenteredFactor> {
    spec.validate()?;
    let n = m.nrows();
    if n < 2 {
        return Err(Error::InsufficientLength { length: n, lags: 0 });
    }
    crate::numerics::ensure_finite(m, name)?;
    let diag = vec![1.0; n];
    let data = m.as_slice();
    let d = m.ncols();
    let lexicographic = |a: usize, b: usize| -> Ordering {
        for v in 0..d {
            match data[v * n + a].partial_cmp(&data[v * n + b]) {
                Some(Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        a.cmp(&b)
    };
    let options = IcdOptions {
        max_rank: spec.max_rank,
        tie_break: Some(&lexicographic),
    };
    let lr = incomplete_cholesky(
        |j, out| {
            exec.fill_chunks(out, COLUMN_CHUNK, |start, chunk| {
                gram_rows(m, spec.width, spec.kind, j, start, chunk)
            })
        },
        &diag,
        spec.chol_tolerance,
        &options,
    )?;
    if lr.truncated {
        log::debug!(
            "factor for `{name}` stopped at rank {} with residual trace {:e}",
            lr.rank(),
            lr.residual_trace
        );
    }
    let factor = crate::numerics::center_columns(&lr.factor);
    Ok(CenteredFactor {
        rank: factor.ncols(),
        factor,
        name: name.to_string(),
        residual_trace: lr.residual_trace,
        truncated: lr.truncated,
    })
}

/// Orthonormal spectral coordinates of a factor: `F = U·diag(√λ)·Vᵀ`, so
/// `F·Fᵀ = U·diag(λ)·Uᵀ`.
struct Spectral {
    u: Matrix,
    lambda: Vec<f64>,
}

impl Spectral {
    fn new(f: &Matrix) -> Self {
        if f.ncols() == 0 {
            return Self {
                u: Matrix::zeros(f.nrows(), 0),
                lambda: Vec::new(),
            };
        }
        // A thin SVD keeps U orthonormal to working precision even for
        // directions with tiny λ, which the permutation identities rely on.
        let svd = f.clone().svd(true, false);
        let u_all = svd.u.expect("requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap_or(Ordering::Equal)
        });
        let top = svd.singular_values[order[0]].powi(2);
        let order: Vec<usize> = order
            .into_iter()
            .take_while(|&i| {
                let l = svd.singular_values[i].powi(2);
                l > SPECTRAL_FLOOR * top && l > 0.0
            })
            .collect();
        let lambda = order
            .iter()
            .map(|&i| svd.singular_values[i].powi(2))
            .collect();
        let u = Matrix::from_fn(f.nrows(), order.len(), |r, c| u_all[(r, order[c])]);
        Self { u, lambda }
    }

    /// `U·diag(λ)`, the factor of `K` in the sense `K = T·Uᵀ`.
    fn scaled(&self) -> Matrix {
        let mut t = self.u.clone();
        for (mut col, l) in t.column_iter_mut().zip(&self.lambda) {
            col *= *l;
        }
        t
    }

    fn rank(&self) -> usize {
        self.lambda.len()
    }
}

struct Conditioning {
    u: Matrix,
    /// `λ²/(λ²+ε)`
    f: Vec<f64>,
    /// `ε/(λ²+ε)`, computed directly for accuracy.
    one_minus_f: Vec<f64>,
}

impl Conditioning {
    fn new(fz: &Matrix, eps: f64) -> Self {
        let s = Spectral::new(fz);
        let f = s.lambda.iter().map(|l| l * l / (l * l + eps)).collect();
        let one_minus_f = s.lambda.iter().map(|l| eps / (l * l + eps)).collect();
        Self {
            u: s.u,
            f,
            one_minus_f,
        }
    }

    /// `Aᵀ·(I − U·diag(f)·Uᵀ)·B` in the form
    /// `(A − U·Uᵀ·A)ᵀ(B − U·Uᵀ·B) + (UᵀA)ᵀ·diag(1−f)·(UᵀB)`, which stays
    /// positive semidefinite when `A = B`.
    fn partial(&self, a: &Matrix, b: &Matrix) -> Matrix {
        let ua = self.u.transpose() * a;
        let ub = self.u.transpose() * b;
        let pa = a - &self.u * &ua;
        let pb = b - &self.u * &ub;
        pa.transpose() * pb + ua.transpose() * scale_rows(&ub, &self.one_minus_f)
    }
}

fn scale_rows(m: &Matrix, s: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (i, &w) in s.iter().enumerate() {
        out.row_mut(i).scale_mut(w);
    }
    out
}

fn regularized_diagonal(m: Matrix, zeta: f64) -> Matrix {
    let mut m = (&m + m.transpose()) * 0.5;
    for i in 0..m.nrows() {
        m[(i, i)] += zeta;
    }
    m
}

fn check_factors(
    fx: &CenteredFactor,
    fy: &CenteredFactor,
    fz: Option<&CenteredFactor>,
    zeta: f64,
    eps: f64,
) -> Result<usize> {
    if zeta <= 0.0 {
        return Err(Error::IllPosed(
            "kernel partial CCA needs a positive ridge ζ".into(),
        ));
    }
    if !(eps >= 0.0) {
        return Err(Error::Config(format!(
            "conditioning ridge must be nonnegative, got {eps}"
        )));
    }
    let n = fx.factor.nrows();
    if fy.factor.nrows() != n || fz.is_some_and(|z| z.factor.nrows() != n) {
        return Err(Error::DimensionMismatch(
            "factors have different sample counts".into(),
        ));
    }
    Ok(n)
}

/// Regularized kernel partial canonical correlations.
///
/// Returns `min(c_X, c_Y)` correlations, descending, clipped to
/// `[0, 1−1e−12]`. Coefficients are expressed in the orthonormal spectral
/// coordinates of each factor.
pub fn kpcca(
    fx: &CenteredFactor,
    fy: &CenteredFactor,
    fz: Option<&CenteredFactor>,
    zeta: f64,
    eps: f64,
) -> Result<CanonicalSpectrum> {
    check_factors(fx, fy, fz, zeta, eps)?;
    let (sx, sy) = (Spectral::new(&fx.factor), Spectral::new(&fy.factor));
    let (tx, ty) = (sx.scaled(), sy.scaled());
    let cond = fz.map(|z| Conditioning::new(&z.factor, eps));
    let m = |a: &Matrix, b: &Matrix| match &cond {
        Some(c) => c.partial(a, b),
        None => a.transpose() * b,
    };
    let mxx = regularized_diagonal(m(&tx, &tx), zeta);
    let myy = regularized_diagonal(m(&ty, &ty), zeta);
    let mxy = m(&tx, &ty);
    let (_, lx, rx) = floored_cholesky(&mxx, "kernel left")?;
    let (_, ly, ry) = floored_cholesky(&myy, "kernel right")?;
    let t = solve_lower(&ly, &solve_lower(&lx, &mxy).transpose()).transpose();
    let d = fx.rank.min(fy.rank);
    let (p, q) = (sx.rank(), sy.rank());
    let mut correlations = vec![0.0; d];
    let mut left = Matrix::zeros(p, d);
    let mut right = Matrix::zeros(q, d);
    if p > 0 && q > 0 {
        let svd = t.svd(true, true);
        let u = svd.u.expect("requested");
        let vt = svd.v_t.expect("requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap_or(Ordering::Equal)
        });
        let a = crate::numerics::solve_lower_transpose(&lx, &u);
        let b = crate::numerics::solve_lower_transpose(&ly, &vt.transpose());
        for (slot, &i) in order.iter().take(d).enumerate() {
            correlations[slot] = svd.singular_values[i].clamp(0.0, RHO_CAP);
            left.set_column(slot, &a.column(i));
            right.set_column(slot, &b.column(i));
        }
    }
    Ok(CanonicalSpectrum {
        correlations,
        left_coeffs: left,
        right_coeffs: right,
        d,
        regularized: rx || ry,
    })
}

/// Kernel partial CCA with the `X` and `Z` factors prepared once, so that
/// each row permutation of `Y` costs one `N×(c_X+c_Z)×c_Y` product.
pub struct KernelPartialContext {
    /// `[T_X | U_Z]`
    fixed: Matrix,
    ty: Matrix,
    /// `diag(λ_Y²)`
    tyty: Vec<f64>,
    /// `U_Zᵀ·T_X`
    a: Matrix,
    cond: Conditioning,
    lx: Matrix,
    cx: usize,
    d: usize,
    zeta: f64,
    regularized: bool,
}

impl KernelPartialContext {
    pub fn new(
        fx: &CenteredFactor,
        fy: &CenteredFactor,
        fz: Option<&CenteredFactor>,
        zeta: f64,
        eps: f64,
    ) -> Result<Self> {
        let n = check_factors(fx, fy, fz, zeta, eps)?;
        let (sx, sy) = (Spectral::new(&fx.factor), Spectral::new(&fy.factor));
        let tx = sx.scaled();
        let cond = match fz {
            Some(z) => Conditioning::new(&z.factor, eps),
            None => Conditioning {
                u: Matrix::zeros(n, 0),
                f: Vec::new(),
                one_minus_f: Vec::new(),
            },
        };
        let mxx = regularized_diagonal(cond.partial(&tx, &tx), zeta);
        let (_, lx, regularized) = floored_cholesky(&mxx, "kernel left")?;
        let a = cond.u.transpose() * &tx;
        Ok(Self {
            fixed: crate::numerics::hstack(&[&tx, &cond.u], n),
            ty: sy.scaled(),
            tyty: sy.lambda.iter().map(|l| l * l).collect(),
            a,
            cond,
            lx,
            cx: sx.rank(),
            d: fx.rank.min(fy.rank),
            zeta,
            regularized,
        })
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    /// Squared correlations (descending, `d` entries) with row `i` of the
    /// `Y` factor replaced by row `perm[i]`.
    pub fn squared_correlations(&self, perm: Option<&[usize]>) -> Result<Vec<f64>> {
        let cy = self.tyty.len();
        let mut out = vec![0.0; self.d];
        if self.cx == 0 || cy == 0 {
            return Ok(out);
        }
        let ty = match perm {
            Some(p) => permute_rows(&self.ty, p),
            None => self.ty.clone(),
        };
        let g = self.fixed.transpose() * &ty;
        let cz = self.cond.f.len();
        let gx = g.rows(0, self.cx);
        let b = g.rows(self.cx, cz).into_owned();
        let fb = scale_rows(&b, &self.cond.f);
        let mxy = gx - self.a.transpose() * &fb;
        let mut myy = -(b.transpose() * &fb);
        for (i, v) in self.tyty.iter().enumerate() {
            myy[(i, i)] += v;
        }
        // The subtraction loses precision when Z nearly spans Y; fall back
        // to the form that is a sum of two PSD terms.
        let cancelled = self
            .tyty
            .iter()
            .enumerate()
            .any(|(i, v)| myy[(i, i)] < CANCELLATION_LIMIT * v);
        if cancelled {
            myy = self.cond.partial(&ty, &ty);
        }
        let myy = regularized_diagonal(myy, self.zeta);
        let (_, ly, _) = floored_cholesky(&myy, "kernel right")?;
        let t = solve_lower(&self.lx, &mxy);
        let t = solve_lower(&ly, &t.transpose());
        // ρ² are the eigenvalues of TᵀT (or TTᵀ), whichever is smaller.
        let small = if t.nrows() <= t.ncols() {
            &t * t.transpose()
        } else {
            t.transpose() * &t
        };
        let cap = RHO_CAP * RHO_CAP;
        for (o, v) in out.iter_mut().zip(sym_eigenvalues(&small)) {
            *o = v.clamp(0.0, cap);
        }
        Ok(out)
    }

    pub fn correlations(&self, perm: Option<&[usize]>) -> Result<Vec<f64>> {
        Ok(self
            .squared_correlations(perm)?
            .into_iter()
            .map(f64::sqrt)
            .collect())
    }
}
