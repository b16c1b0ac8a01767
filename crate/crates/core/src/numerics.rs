//! Dense symmetric linear algebra.
//!
//! Storage and the standard symmetric eigensolver come from `nalgebra`; the
//! Cholesky factorization (with an explicit definiteness floor), the greedy
//! incomplete Cholesky, the whitening route for generalized eigenproblems and
//! partial covariances are implemented here.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense column-major matrix of `f64`.
pub type Matrix = DMatrix<f64>;

/// Relative pivot floor: a Cholesky pivot at or below
/// `DEFINITENESS_FLOOR * trace / n` is treated as zero.
pub const DEFINITENESS_FLOOR: f64 = 1e-12;

/// Residual diagonals of the incomplete Cholesky below
/// `-BREAKDOWN_TOLERANCE * max(diag)` mean the input was not PSD.
pub const BREAKDOWN_TOLERANCE: f64 = 1e-8;

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Build a matrix from row-major entries, rejecting non-finite values.
pub fn matrix_from_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if rows * cols != entries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{rows}x{cols} needs {} entries, got {}",
            rows * cols,
            entries.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, entries);
    ensure_finite(&m, "matrix entries")?;
    Ok(m)
}

/// Horizontally concatenate blocks with equal row counts.
pub fn hstack(blocks: &[&Matrix], rows: usize) -> Matrix {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        data.extend_from_slice(b.as_slice());
    }
    Matrix::from_vec(rows, cols, data)
}

/// Subtract each column's mean.
pub fn center_columns(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// `(1/N)·AᵀB` for column-centered `A` and `B`.
pub fn cross_covariance(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.nrows().max(1) as f64;
    (a.transpose() * b) / n
}

/// Copy rows of `m` in the order given by `perm` (row `i` of the result is
/// row `perm[i]` of `m`).
pub fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    let (n, c) = m.shape();
    debug_assert_eq!(perm.len(), n);
    let src = m.as_slice();
    let mut data = vec![0.0; n * c];
    for j in 0..c {
        let from = &src[j * n..(j + 1) * n];
        let to = &mut data[j * n..(j + 1) * n];
        for (dst, &p) in to.iter_mut().zip(perm) {
            *dst = from[p];
        }
    }
    Matrix::from_vec(n, c, data)
}

fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factor `L` (lower triangular) with `L·Lᵀ = S`.
///
/// Only the lower triangle of `s` is read. Fails with
/// [`Error::NotPositiveDefinite`] when a pivot drops to the floor
/// `DEFINITENESS_FLOOR · trace(S) / n`.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            s.ncols()
        )));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    ensure_finite(s, "cholesky input")?;
    let scale = (s.trace() / n as f64).abs();
    let floor = DEFINITENESS_FLOOR * if scale > 0.0 { scale } else { 1.0 };

    // Row-major lower triangle; row i holds L[i, 0..=i].
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            let v = s[(i, j)] - dot;
            if i == j {
                if v <= floor || !v.is_finite() {
                    return Err(Error::NotPositiveDefinite {
                        pivot: i,
                        value: v,
                        floor,
                    });
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = v / l[j * n + j];
            }
        }
    }
    Ok(Matrix::from_row_slice(n, n, &l))
}

/// Solve `L·X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.column_iter_mut() {
        for i in 0..n {
            let mut v = col[i];
            for k in 0..i {
                v -= l[(i, k)] * col[k];
            }
            col[i] = v / l[(i, i)];
        }
    }
    x
}

/// Solve `Lᵀ·X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.column_iter_mut() {
        for i in (0..n).rev() {
            let mut v = col[i];
            for k in (i + 1)..n {
                v -= l[(k, i)] * col[k];
            }
            col[i] = v / l[(i, i)];
        }
    }
    x
}

/// `ln|S|` from its Cholesky factor.
pub fn log_det_from_cholesky(l: &Matrix) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Eigenpairs of a symmetric (or symmetric-definite) problem, sorted by
/// descending eigenvalue; column `i` of `eigenvectors` pairs with
/// `eigenvalues[i]`.
#[derive(Debug, Clone)]
pub struct SymSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

/// Standard symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eig(a: &Matrix) -> SymSpectrum {
    let mut a = a.clone();
    symmetrize(&mut a);
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(Ordering::Equal)
    });
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    SymSpectrum {
        eigenvalues,
        eigenvectors,
    }
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let mut a = a.clone();
    symmetrize(&mut a);
    let mut vals: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap_or(Ordering::Equal));
    vals
}

/// Solve `C·v = λ·D·v` for symmetric `C` and symmetric positive definite `D`.
///
/// With `D = L·Lᵀ` the problem becomes the standard symmetric problem
/// `L⁻¹·C·L⁻ᵀ·w = λ·w`, and `v = L⁻ᵀ·w`. Eigenvectors are
/// `D`-orthonormal.
pub fn sym_generalized_eig(c: &Matrix, d: &Matrix) -> Result<SymSpectrum> {
    if c.shape() != d.shape() || c.nrows() != c.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "generalized eigenproblem needs equal square matrices, got {:?} and {:?}",
            c.shape(),
            d.shape()
        )));
    }
    let l = cholesky(d)?;
    let half = solve_lower(&l, c);
    let whitened = solve_lower(&l, &half.transpose());
    let SymSpectrum {
        eigenvalues,
        eigenvectors,
    } = sym_eig(&whitened);
    Ok(SymSpectrum {
        eigenvalues,
        eigenvectors: solve_lower_transpose(&l, &eigenvectors),
    })
}

/// `S_ab − S_az·(S_zz + ridge·I)⁻¹·S_zb`.
pub fn partial_covariance(
    s_ab: &Matrix,
    s_az: &Matrix,
    s_zz: &Matrix,
    s_zb: &Matrix,
    ridge: f64,
) -> Result<Matrix> {
    let (a, b, z) = (s_ab.nrows(), s_ab.ncols(), s_zz.nrows());
    if s_az.shape() != (a, z) || s_zb.shape() != (z, b) || s_zz.ncols() != z {
        return Err(Error::DimensionMismatch(format!(
            "partial covariance blocks {:?}, {:?}, {:?}, {:?} are not conformable",
            s_ab.shape(),
            s_az.shape(),
            s_zz.shape(),
            s_zb.shape()
        )));
    }
    if z == 0 {
        return Ok(s_ab.clone());
    }
    let mut reg = s_zz.clone();
    for i in 0..z {
        reg[(i, i)] += ridge;
    }
    let l = cholesky(&reg)?;
    let left = solve_lower(&l, &s_az.transpose());
    let right = solve_lower(&l, s_zb);
    Ok(s_ab - left.transpose() * right)
}

/// Low-rank factor `G̃` (N×c) of an implicit PSD matrix, `K ≈ G̃·G̃ᵀ`.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    pub factor: Matrix,
    /// Selected sample indices, in selection order.
    pub pivots: Vec<usize>,
    /// `trace(K − G̃·G̃ᵀ)` at termination.
    pub residual_trace: f64,
    /// True when the factorization stopped before the residual reached τ
    /// (rank cap hit, or every remaining pivot fell under the floor).
    pub truncated: bool,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }
}

/// Options for [`incomplete_cholesky`].
#[derive(Default, Clone, Copy)]
pub struct IcdOptions<'a> {
    /// Stop after this many pivots even if the residual is still above τ.
    pub max_rank: Option<usize>,
    /// Orders samples whose residual diagonals tie exactly; the sample that
    /// compares `Less` is chosen. Lowest index wins when absent.
    pub tie_break: Option<&'a (dyn Fn(usize, usize) -> Ordering + Sync)>,
}

/// Greedy pivoted incomplete Cholesky of an implicit PSD matrix.
///
/// `column(j, out)` writes column `j` of `K` into `out`; `diag` is the
/// diagonal of `K`. Each step picks the sample with the largest remaining
/// diagonal residual. Terminates once the residual trace drops below `tau`,
/// at `c = N`, at the optional rank cap, or when the largest residual is
/// under `DEFINITENESS_FLOOR · trace(K)`.
pub fn incomplete_cholesky<F>(
    mut column: F,
    diag: &[f64],
    tau: f64,
    options: &IcdOptions<'_>,
) -> Result<LowRankFactor>
where
    F: FnMut(usize, &mut [f64]),
{
    let n = diag.len();
    if !(tau >= 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be nonnegative, got {tau}"
        )));
    }
    if diag.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("kernel diagonal".into()));
    }
    let max_diag = diag.iter().copied().fold(0.0_f64, f64::max);
    let neg_tol = BREAKDOWN_TOLERANCE * max_diag.max(f64::MIN_POSITIVE);
    if let Some((index, &value)) = diag.iter().enumerate().find(|(_, d)| **d < -neg_tol) {
        return Err(Error::NumericalBreakdown { index, value });
    }
    let mut residual: Vec<f64> = diag.iter().map(|d| d.max(0.0)).collect();
    let floor = DEFINITENESS_FLOOR * residual.iter().sum::<f64>();
    let limit = options.max_rank.unwrap_or(n).min(n);

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut buf = vec![0.0; n];
    let mut trace: f64 = residual.iter().sum();
    let mut truncated = false;

    while trace >= tau {
        if columns.len() == limit {
            truncated = limit < n;
            break;
        }
        let j = select_pivot(&residual, options.tie_break);
        let pivot = residual[j];
        if pivot <= floor {
            truncated = true;
            break;
        }
        column(j, &mut buf);
        for g in &columns {
            let w = g[j];
            if w != 0.0 {
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b -= w * gi;
                }
            }
        }
        let root = pivot.sqrt();
        for b in buf.iter_mut() {
            *b /= root;
        }
        buf[j] = root;
        for (i, r) in residual.iter_mut().enumerate() {
            let v = *r - buf[i] * buf[i];
            if v < -neg_tol {
                return Err(Error::NumericalBreakdown { index: i, value: v });
            }
            *r = v.max(0.0);
        }
        residual[j] = 0.0;
        trace = residual.iter().sum();
        pivots.push(j);
        columns.push(buf.clone());
    }

    let c = columns.len();
    let mut data = Vec::with_capacity(n * c);
    for g in &columns {
        data.extend_from_slice(g);
    }
    Ok(LowRankFactor {
        factor: Matrix::from_vec(n, c, data),
        pivots,
        residual_trace: trace,
        truncated,
    })
}

fn select_pivot(
    residual: &[f64],
    tie_break: Option<&(dyn Fn(usize, usize) -> Ordering + Sync)>,
) -> usize {
    let mut best = 0;
    for i in 1..residual.len() {
        match residual[i].partial_cmp(&residual[best]) {
            Some(Ordering::Greater) => best = i,
            Some(Ordering::Equal) => {
                if let Some(cmp) = tie_break {
                    if cmp(i, best) == Ordering::Less {
                        best = i;
                    }
                }
            }
            _ => {}
        }
    }
    best
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

    fn spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let a = randn(rng, n, n);
        a.transpose() * &a + Matrix::identity(n, n)
    }

    fn max_abs(m: &Matrix) -> f64 {
        m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(l, Matrix::identity(3, 3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let s = Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let l = cholesky(&s).unwrap();
        assert_eq!(l, Matrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = spd(&mut rng, 8);
        let l = cholesky(&s).unwrap();
        assert!(max_abs(&(&l * l.transpose() - &s)) < 1e-10);
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_rejects_semidefinite() {
        let s = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            cholesky(&s),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn triangular_solves_invert() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = spd(&mut rng, 5);
        let l = cholesky(&s).unwrap();
        let b = randn(&mut rng, 5, 2);
        let x = solve_lower(&l, &b);
        assert!(max_abs(&(&l * &x - &b)) < 1e-12);
        let y = solve_lower_transpose(&l, &b);
        assert!(max_abs(&(l.transpose() * &y - &b)) < 1e-12);
        let ld = log_det_from_cholesky(&l);
        assert_abs_diff_eq!(ld, s.determinant().ln(), epsilon = 1e-9);
    }

    #[test]
    fn icd_identity_is_full_rank() {
        let k = Matrix::identity(3, 3);
        let f = incomplete_cholesky(
            |j, out| out.copy_from_slice(k.column(j).as_slice()),
            &[1.0; 3],
            1e-6,
            &IcdOptions::default(),
        )
        .unwrap();
        assert_eq!(f.rank(), 3);
        assert!(max_abs(&(&f.factor * f.factor.transpose() - &k)) < 1e-15);
        assert!(!f.truncated);
    }

    #[test]
    fn icd_rank_one_after_single_pivot() {
        let f = incomplete_cholesky(
            |_, out| out.fill(1.0),
            &[1.0; 4],
            1e-6,
            &IcdOptions::default(),
        )
        .unwrap();
        assert_eq!(f.rank(), 1);
        assert!(f.residual_trace < 1e-6);
    }

    #[test]
    fn icd_gaussian_gram_matches_dense_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let k = Matrix::from_fn(200, 200, |i, j| (-(pts[i] - pts[j]).powi(2) / 2.0).exp());
        let f = incomplete_cholesky(
            |j, out| out.copy_from_slice(k.column(j).as_slice()),
            &vec![1.0; 200],
            1e-6,
            &IcdOptions::default(),
        )
        .unwrap();
        let dense_residual = (&k - &f.factor * f.factor.transpose()).trace();
        assert!(dense_residual < 1e-6, "residual {dense_residual}");
        assert_abs_diff_eq!(dense_residual, f.residual_trace, epsilon = 1e-9);
        assert!(f.rank() < 50);
    }

    #[test]
    fn icd_rank_cap_flags_truncation() {
        let k = Matrix::identity(10, 10);
        let opts = IcdOptions {
            max_rank: Some(4),
            ..Default::default()
        };
        let f = incomplete_cholesky(
            |j, out| out.copy_from_slice(k.column(j).as_slice()),
            &[1.0; 10],
            1e-6,
            &opts,
        )
        .unwrap();
        assert_eq!(f.rank(), 4);
        assert!(f.truncated);
        assert_abs_diff_eq!(f.residual_trace, 6.0);
    }

    #[test]
    fn icd_detects_indefinite_input() {
        let k = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = incomplete_cholesky(
            |j, out| out.copy_from_slice(k.column(j).as_slice()),
            &[1.0, 1.0],
            0.0,
            &IcdOptions::default(),
        );
        assert!(matches!(r, Err(Error::NumericalBreakdown { .. })));
    }

    #[test]
    fn generalized_eig_trivial_cases() {
        let id = Matrix::identity(3, 3);
        let s = sym_generalized_eig(&id, &id).unwrap();
        for v in s.eigenvalues {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
        }
        let c = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let s = sym_generalized_eig(&c, &Matrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.eigenvalues[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn generalized_eig_matches_nonsymmetric_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = randn(&mut rng, 6, 6);
        let c = &a + a.transpose();
        let d = spd(&mut rng, 6);
        let s = sym_generalized_eig(&c, &d).unwrap();
        // Oracle: eigenvalues of the nonsymmetric D⁻¹C via Schur.
        let dinv_c = d.clone().try_inverse().unwrap() * &c;
        let mut oracle: Vec<f64> = dinv_c.complex_eigenvalues().iter().map(|z| z.re).collect();
        oracle.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (x, y) in s.eigenvalues.iter().zip(&oracle) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        // Eigenvectors satisfy the pencil and are D-orthonormal.
        let v = &s.eigenvectors;
        let lam = Matrix::from_diagonal(&nalgebra::DVector::from_vec(s.eigenvalues.clone()));
        assert!(max_abs(&(&c * v - &d * v * lam)) < 1e-9);
        assert!(max_abs(&(v.transpose() * &d * v - Matrix::identity(6, 6))) < 1e-9);
    }

    #[test]
    fn partial_covariance_without_coupling_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s_ab = randn(&mut rng, 2, 3);
        let s_zz = spd(&mut rng, 4);
        let out = partial_covariance(
            &s_ab,
            &Matrix::zeros(2, 4),
            &s_zz,
            &Matrix::zeros(4, 3),
            0.0,
        )
        .unwrap();
        assert_eq!(out, s_ab);
    }

    #[test]
    fn partial_covariance_self_conditioning_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = spd(&mut rng, 3);
        let out = partial_covariance(&s, &s, &s, &s, 0.0).unwrap();
        assert!(max_abs(&out) < 1e-10);
    }

    #[test]
    fn partial_covariance_matches_regression_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 400;
        let mix = randn(&mut rng, 7, 7);
        let data = center_columns(&(randn(&mut rng, n, 7) * mix));
        let a = data.columns(0, 2).into_owned();
        let b = data.columns(2, 2).into_owned();
        let z = data.columns(4, 3).into_owned();
        let cov = |p: &Matrix, q: &Matrix| cross_covariance(p, q);
        let got = partial_covariance(&cov(&a, &b), &cov(&a, &z), &cov(&z, &z), &cov(&z, &b), 0.0)
            .unwrap();
        // Oracle: ordinary least-squares residuals through the normal equations.
        let resid = |t: &Matrix| {
            let beta = (z.transpose() * &z).try_inverse().unwrap() * (z.transpose() * t);
            t - &z * beta
        };
        let want = cov(&resid(&a), &resid(&b));
        assert!(max_abs(&(got - want)) < 1e-8);
    }

    #[test]
    fn permute_rows_reorders() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = permute_rows(&m, &[2, 0, 1]);
        assert_eq!(
            p,
            Matrix::from_row_slice(3, 2, &[5.0, 6.0, 1.0, 2.0, 3.0, 4.0])
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn generalized_eig_congruence_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = randn(&mut rng, 4, 4);
            let c = &a + a.transpose();
            let d = spd(&mut rng, 4);
            let m = randn(&mut rng, 4, 4) + Matrix::identity(4, 4) * 3.0;
            let base = sym_generalized_eig(&c, &d).unwrap();
            let moved = sym_generalized_eig(&(m.transpose() * &c * &m), &(m.transpose() * &d * &m)).unwrap();
            for (x, y) in base.eigenvalues.iter().zip(&moved.eigenvalues) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn icd_residual_decreases_and_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 12;
            let a = randn(&mut rng, n, 5);
            let k = &a * a.transpose();
            let diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
            let mut traces = Vec::new();
            for cap in 1..=5 {
                let opts = IcdOptions { max_rank: Some(cap), ..Default::default() };
                let f = incomplete_cholesky(|j, out| out.copy_from_slice(k.column(j).as_slice()), &diag, 1e-9, &opts).unwrap();
                traces.push(f.residual_trace);
            }
            for w in traces.windows(2) {
                prop_assert!(w[1] < w[0] || w[1] < 1e-9);
            }
            let perm: Vec<usize> = (0..n).rev().collect();
            let kp = Matrix::from_fn(n, n, |i, j| k[(perm[i], perm[j])]);
            let dp: Vec<f64> = perm.iter().map(|&i| diag[i]).collect();
            let opts = IcdOptions { max_rank: Some(3), ..Default::default() };
            let f = incomplete_cholesky(|j, out| out.copy_from_slice(k.column(j).as_slice()), &diag, 0.0, &opts).unwrap();
            let fp = incomplete_cholesky(|j, out| out.copy_from_slice(kp.column(j).as_slice()), &dp, 0.0, &opts).unwrap();
            prop_assert!((f.residual_trace - fp.residual_trace).abs() < 1e-12 * (1.0 + f.residual_trace));
            for (i, &p) in perm.iter().enumerate() {
                for c in 0..3 {
                    prop_assert!((fp.factor[(i, c)] - f.factor[(p, c)]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn partial_covariance_is_schur_complement_and_psd(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let joint = spd(&mut rng, 5);
            let blk = |r: usize, rn: usize, c: usize, cn: usize| joint.view((r, c), (rn, cn)).into_owned();
            let pc = partial_covariance(&blk(0, 2, 0, 2), &blk(0, 2, 2, 3), &blk(2, 3, 2, 3), &blk(2, 3, 0, 2), 0.0).unwrap();
            let schur = blk(0, 2, 0, 2) - blk(0, 2, 2, 3) * blk(2, 3, 2, 3).try_inverse().unwrap() * blk(2, 3, 0, 2);
            prop_assert!(max_abs(&(&pc - schur)) < 1e-8 * (1.0 + max_abs(&joint)));
            prop_assert!(sym_eigenvalues(&pc).iter().all(|&v| v > -1e-10));
        }
    }
}
