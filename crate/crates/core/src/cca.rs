//! Classical and partial canonical correlation analysis.
//!
//! Covariances use the `1/N` normalization throughout; it cancels in every
//! correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    center_columns, cholesky, cross_covariance, hstack, partial_covariance, solve_lower,
    sym_generalized_eig, Matrix,
};

/// Relative ridge added to a within-set covariance whose Cholesky fails.
pub const RIDGE_FLOOR: f64 = 1e-10;

/// Canonical correlations in descending order with the coefficient vectors
/// that attain them (column `i` of each coefficient matrix pairs with
/// `correlations[i]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalSpectrum {
    pub correlations: Vec<f64>,
    #[serde(skip)]
    pub left_coeffs: Matrix,
    #[serde(skip)]
    pub right_coeffs: Matrix,
    pub d: usize,
    /// A ridge floor had to be added to make a covariance block definite.
    pub regularized: bool,
}

impl CanonicalSpectrum {
    pub fn from_correlations(correlations: Vec<f64>, regularized: bool) -> Self {
        let d = correlations.len();
        Self {
            correlations,
            left_coeffs: Matrix::zeros(0, d),
            right_coeffs: Matrix::zeros(0, d),
            d,
            regularized,
        }
    }

    pub fn max(&self) -> f64 {
        self.correlations.first().copied().unwrap_or(0.0)
    }
}

fn add_diagonal(m: &Matrix, v: f64) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += v;
    }
    out
}

fn floor_ridge(s: &Matrix) -> f64 {
    let n = s.nrows().max(1) as f64;
    let scale = s.trace() / n;
    RIDGE_FLOOR * if scale > 0.0 { scale } else { 1.0 }
}

/// Cholesky with one retry after adding the ridge floor. Returns the
/// (possibly regularized) matrix, its factor, and whether the floor was used.
pub(crate) fn floored_cholesky(s: &Matrix, what: &str) -> Result<(Matrix, Matrix, bool)> {
    match cholesky(s) {
        Ok(l) => Ok((s.clone(), l, false)),
        Err(Error::NotPositiveDefinite { .. }) => {
            let reg = add_diagonal(s, floor_ridge(s));
            match cholesky(&reg) {
                Ok(l) => {
                    log::warn!("{what} covariance is singular; added ridge floor");
                    Ok((reg, l, true))
                }
                Err(Error::NotPositiveDefinite { .. }) => Err(Error::RankDeficient(format!(
                    "{what} covariance is singular beyond the ridge floor"
                ))),
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

/// Solve the canonical eigenproblem for given (partial) covariance blocks:
/// `[0, Sxy; Syx, 0]·(α;β) = ρ·[Sxx, 0; 0, Syy]·(α;β)`.
pub fn canonical_from_covariances(
    sxx: &Matrix,
    syy: &Matrix,
    sxy: &Matrix,
) -> Result<CanonicalSpectrum> {
    let (p, q) = (sxx.nrows(), syy.nrows());
    if sxy.shape() != (p, q) || sxx.ncols() != p || syy.ncols() != q {
        return Err(Error::DimensionMismatch(format!(
            "canonical blocks {:?}, {:?}, {:?}",
            sxx.shape(),
            syy.shape(),
            sxy.shape()
        )));
    }
    let (sxx, _, rx) = floored_cholesky(sxx, "left")?;
    let (syy, _, ry) = floored_cholesky(syy, "right")?;
    let (c, dm) = block_system(&sxx, &syy, sxy);
    let spectrum = sym_generalized_eig(&c, &dm)?;
    let d = p.min(q);
    // Eigenvectors are normalized so αᵀSxxα + βᵀSyyβ = 1; each half carries
    // 1/2 when ρ > 0, so √2 gives unit-variance canonical variates.
    let scale = std::f64::consts::SQRT_2;
    let v = &spectrum.eigenvectors;
    Ok(CanonicalSpectrum {
        correlations: spectrum.eigenvalues[..d]
            .iter()
            .map(|r| r.clamp(0.0, 1.0))
            .collect(),
        left_coeffs: v.view((0, 0), (p, d)) * scale,
        right_coeffs: v.view((p, 0), (q, d)) * scale,
        d,
        regularized: rx || ry,
    })
}

fn block_system(sxx: &Matrix, syy: &Matrix, sxy: &Matrix) -> (Matrix, Matrix) {
    let (p, q) = (sxx.nrows(), syy.nrows());
    let mut c = Matrix::zeros(p + q, p + q);
    let mut d = Matrix::zeros(p + q, p + q);
    c.view_mut((0, p), (p, q)).copy_from(sxy);
    c.view_mut((p, 0), (q, p)).copy_from(&sxy.transpose());
    d.view_mut((0, 0), (p, p)).copy_from(sxx);
    d.view_mut((p, p), (q, q)).copy_from(syy);
    (c, d)
}

/// All `p+q` eigenvalues of the canonical block system, descending. The
/// spectrum is `±ρ` pairs plus `|p−q|` zeros.
pub fn canonical_system_eigenvalues(sxx: &Matrix, syy: &Matrix, sxy: &Matrix) -> Result<Vec<f64>> {
    let (c, d) = block_system(sxx, syy, sxy);
    Ok(sym_generalized_eig(&c, &d)?.eigenvalues)
}

fn check_rows(blocks: &[&Matrix]) -> Result<usize> {
    let n = blocks[0].nrows();
    if blocks.iter().any(|b| b.nrows() != n) {
        return Err(Error::DimensionMismatch(format!(
            "row counts differ: {:?}",
            blocks.iter().map(|b| b.nrows()).collect::<Vec<_>>()
        )));
    }
    Ok(n)
}

/// Canonical correlations between `X` and `Y`.
pub fn cca(x: &Matrix, y: &Matrix) -> Result<CanonicalSpectrum> {
    check_rows(&[x, y])?;
    let (x, y) = (center_columns(x), center_columns(y));
    canonical_from_covariances(
        &cross_covariance(&x, &x),
        &cross_covariance(&y, &y),
        &cross_covariance(&x, &y),
    )
}

/// Partial covariance blocks `(Σ_XX|Z, Σ_YY|Z, Σ_XY|Z)` from the joint
/// covariance blocks. A singular `Σ_ZZ + ridge·I` gets the ridge floor.
#[allow(clippy::too_many_arguments)]
pub fn partial_blocks(
    sxx: &Matrix,
    syy: &Matrix,
    sxy: &Matrix,
    sxz: &Matrix,
    syz: &Matrix,
    szz: &Matrix,
    ridge: f64,
) -> Result<(Matrix, Matrix, Matrix, bool)> {
    if szz.nrows() == 0 {
        return Ok((sxx.clone(), syy.clone(), sxy.clone(), false));
    }
    let (szz, _, regularized) = floored_cholesky(&add_diagonal(szz, ridge), "conditioning")?;
    let pxx = partial_covariance(sxx, sxz, &szz, &sxz.transpose(), 0.0)?;
    let pyy = partial_covariance(syy, syz, &szz, &syz.transpose(), 0.0)?;
    let pxy = partial_covariance(sxy, sxz, &szz, &syz.transpose(), 0.0)?;
    Ok((pxx, pyy, pxy, regularized))
}

/// Partial canonical correlations of `X` and `Y` given `Z`.
pub fn pcca(x: &Matrix, y: &Matrix, z: &Matrix, ridge: f64) -> Result<CanonicalSpectrum> {
    check_rows(&[x, y, z])?;
    if ridge < 0.0 {
        return Err(Error::Config(format!(
            "ridge must be nonnegative, got {ridge}"
        )));
    }
    if z.ncols() == 0 {
        return cca(x, y);
    }
    let (x, y, z) = (center_columns(x), center_columns(y), center_columns(z));
    let cov = cross_covariance;
    let (pxx, pyy, pxy, reg) = partial_blocks(
        &cov(&x, &x),
        &cov(&y, &y),
        &cov(&x, &y),
        &cov(&x, &z),
        &cov(&y, &z),
        &cov(&z, &z),
        ridge,
    )?;
    let mut spectrum = canonical_from_covariances(&pxx, &pyy, &pxy)?;
    spectrum.regularized |= reg;
    Ok(spectrum)
}

/// Partial CCA with the `X` and `Z` sides prepared once, so that the
/// correlations under row permutations of `Y` cost one `N×(d_X+d_Z)×d_Y`
/// product each.
pub struct PccaContext {
    /// `[R_X | Z]`, with `R_X` the ridge residual of `X` on `Z`.
    fixed: Matrix,
    y: Matrix,
    lz: Matrix,
    lx: Matrix,
    syy: Matrix,
    dx: usize,
    n: f64,
    regularized: bool,
}

impl PccaContext {
    pub fn new(x: &Matrix, y: &Matrix, z: &Matrix, ridge: f64) -> Result<Self> {
        let n = check_rows(&[x, y, z])?;
        let (x, y, z) = (center_columns(x), center_columns(y), center_columns(z));
        let cov = cross_covariance;
        let (lz, rx, regz) = if z.ncols() > 0 {
            let (_, lz, reg) =
                floored_cholesky(&add_diagonal(&cov(&z, &z), ridge), "conditioning")?;
            // R_X = X − Z·(Szz + rI)⁻¹·Szx
            let w = solve_lower(&lz, &cov(&z, &x));
            let b = crate::numerics::solve_lower_transpose(&lz, &w);
            (lz, &x - &z * b, reg)
        } else {
            (Matrix::zeros(0, 0), x.clone(), false)
        };
        let sxx = cov(&rx, &x);
        let sxx = (&sxx + sxx.transpose()) * 0.5;
        let (_, lx, regx) = floored_cholesky(&sxx, "left")?;
        Ok(Self {
            fixed: hstack(&[&rx, &z], n),
            syy: cov(&y, &y),
            y,
            lz,
            lx,
            dx: x.ncols(),
            n: n as f64,
            regularized: regz || regx,
        })
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    /// Canonical correlations with row `i` of `Y` replaced by row `perm[i]`
    /// (identity when `perm` is `None`).
    pub fn correlations(&self, perm: Option<&[usize]>) -> Result<Vec<f64>> {
        let y = match perm {
            Some(p) => crate::numerics::permute_rows(&self.y, p),
            None => self.y.clone(),
        };
        let g = self.fixed.transpose() * &y / self.n;
        let dz = self.lz.nrows();
        let sxy = g.rows(0, self.dx).into_owned();
        let syy = if dz > 0 {
            let w = solve_lower(&self.lz, &g.rows(self.dx, dz).into_owned());
            &self.syy - w.transpose() * &w
        } else {
            self.syy.clone()
        };
        let syy = (&syy + syy.transpose()) * 0.5;
        let (_, ly, _) = floored_cholesky(&syy, "right")?;
        let t = solve_lower(&self.lx, &sxy);
        let t = solve_lower(&ly, &t.transpose());
        let mut rho: Vec<f64> = t
            .singular_values()
            .iter()
            .map(|r| r.clamp(0.0, 1.0))
            .collect();
        rho.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        rho.truncate(self.dx.min(self.y.ncols()));
        Ok(rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    /// Correlated three-block sample.
    fn system(
        rng: &mut ChaCha8Rng,
        n: usize,
        dx: usize,
        dy: usize,
        dz: usize,
    ) -> (Matrix, Matrix, Matrix) {
        let d = dx + dy + dz;
        let mix = randn(rng, d, d);
        let data = randn(rng, n, d) * mix;
        (
            data.columns(0, dx).into_owned(),
            data.columns(dx, dy).into_owned(),
            data.columns(dx + dy, dz).into_owned(),
        )
    }

    /// Ordinary least-squares residuals of `t` on `[1, z]` by normal equations.
    fn residualize(t: &Matrix, z: &Matrix) -> Matrix {
        let n = t.nrows();
        let mut zz = Matrix::from_element(n, z.ncols() + 1, 1.0);
        zz.view_mut((0, 1), (n, z.ncols())).copy_from(z);
        let beta = (zz.transpose() * &zz).try_inverse().unwrap() * (zz.transpose() * t);
        t - zz * beta
    }

    #[test]
    fn cca_of_identical_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 50, 1);
        let s = cca(&x, &x).unwrap();
        assert_abs_diff_eq!(s.correlations[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cca_rotation_gives_unit_correlations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, 100, 2);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let sp = cca(&x, &(&x * r)).unwrap();
        for rho in sp.correlations {
            assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cca_independent_is_small() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sp = cca(&randn(&mut rng, 10000, 2), &randn(&mut rng, 10000, 2)).unwrap();
            assert!(
                sp.correlations.iter().all(|&r| r < 0.05),
                "{:?}",
                sp.correlations
            );
        }
    }

    #[test]
    fn cca_coefficients_attain_correlations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y, _) = system(&mut rng, 400, 3, 2, 0);
        let sp = cca(&x, &y).unwrap();
        let (xc, yc) = (center_columns(&x), center_columns(&y));
        let u = &xc * &sp.left_coeffs;
        let v = &yc * &sp.right_coeffs;
        for i in 0..sp.d {
            let (a, b) = (u.column(i), v.column(i));
            let r = a.dot(&b) / (a.norm() * b.norm());
            assert_abs_diff_eq!(r, sp.correlations[i], epsilon = 1e-9);
            assert_abs_diff_eq!(a.norm_squared() / 400.0, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn pcca_empty_conditioning_matches_cca() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y, _) = system(&mut rng, 300, 3, 3, 0);
        let a = pcca(&x, &y, &Matrix::zeros(300, 0), 0.0).unwrap();
        let b = cca(&x, &y).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn pcca_source_equal_to_conditioning_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y, _) = system(&mut rng, 300, 2, 3, 0);
        let sp = pcca(&x, &y, &y, 0.0).unwrap();
        assert!(
            sp.correlations.iter().all(|&r| r < 1e-10),
            "{:?}",
            sp.correlations
        );
    }

    #[test]
    fn pcca_matches_residualized_cca() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, z) = system(&mut rng, 500, 3, 2, 4);
            let got = pcca(&x, &y, &z, 0.0).unwrap();
            let want = cca(&residualize(&x, &z), &residualize(&y, &z)).unwrap();
            for (p, q) in got.correlations.iter().zip(&want.correlations) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn canonical_system_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, y, _) = system(&mut rng, 200, 4, 2, 0);
        let (x, y) = (center_columns(&x), center_columns(&y));
        let ev = canonical_system_eigenvalues(
            &cross_covariance(&x, &x),
            &cross_covariance(&y, &y),
            &cross_covariance(&x, &y),
        )
        .unwrap();
        assert_eq!(ev.len(), 6);
        for i in 0..3 {
            assert_abs_diff_eq!(ev[i], -ev[5 - i], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(ev[2], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn singular_within_set_gets_ridge_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randn(&mut rng, 100, 1);
        let x = hstack(&[&a, &a], 100);
        let y = randn(&mut rng, 100, 2);
        let sp = cca(&x, &y).unwrap();
        assert!(sp.regularized);
        assert!(sp.correlations.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn context_matches_direct_pcca() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y, z) = system(&mut rng, 400, 3, 4, 5);
        let ctx = PccaContext::new(&x, &y, &z, 0.0).unwrap();
        let direct = pcca(&x, &y, &z, 0.0).unwrap();
        let fast = ctx.correlations(None).unwrap();
        for (a, b) in fast.iter().zip(&direct.correlations) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        let perm: Vec<usize> = (0..400).map(|i| (i * 7 + 3) % 400).collect();
        let yp = crate::numerics::permute_rows(&y, &perm);
        let direct = pcca(&x, &yp, &z, 0.0).unwrap();
        let fast = ctx.correlations(Some(&perm)).unwrap();
        for (a, b) in fast.iter().zip(&direct.correlations) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn invariant_under_linear_maps(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, z) = system(&mut rng, 200, 3, 2, 2);
            let a = randn(&mut rng, 3, 3) + Matrix::identity(3, 3) * 4.0;
            let b = randn(&mut rng, 2, 2) + Matrix::identity(2, 2) * 4.0;
            let base = pcca(&x, &y, &z, 0.0).unwrap();
            let moved = pcca(&(&x * a), &(&y * b), &z, 0.0).unwrap();
            for (p, q) in base.correlations.iter().zip(&moved.correlations) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }

        #[test]
        fn correlations_bounded_and_sorted(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, z) = system(&mut rng, 60, 2, 3, 3);
            let sp = pcca(&x, &y, &z, 0.0).unwrap();
            prop_assert_eq!(sp.d, 2);
            prop_assert!(sp.correlations.iter().all(|&r| (0.0..=1.0).contains(&r)));
            prop_assert!(sp.correlations.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
