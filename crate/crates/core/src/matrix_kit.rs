//! Dense-matrix utilities and the vectorization operators the identification
//! machinery is built on.
//!
//! Everything here works on `f64` matrices small enough that plain O(n^3)
//! dense routines are the right tool. The vectorization orderings (`vecv`,
//! `vecs`, `vec_cols`) are load-bearing: the layout of the least-squares
//! unknown vector in the learner depends on them, so they are frozen here and
//! unit-tested first.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Relative singular-value threshold for rank decisions: singular values
/// below `RANK_REL_TOL * sigma_max` count as zero.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Margin used when requiring a spectral radius strictly below one.
pub const SCHUR_MARGIN: f64 = 1e-9;

const EIG_MAX_ITER: usize = 10_000;

/// Build a matrix from row-major data.
pub fn mat_from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Mat> {
    if data.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "expected {rows}x{cols}={} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    let m = Mat::from_row_slice(rows, cols, data);
    ensure_finite(&m, "matrix entries")?;
    Ok(m)
}

/// Reject non-finite entries before they enter any numerical routine.
pub fn ensure_finite(m: &Mat, context: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{context}: non-finite entry")))
    }
}

fn ensure_finite_vec(v: &Vector, context: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{context}: non-finite entry")))
    }
}

/// Quadratic-monomial vectorization of a vector:
/// `[v1^2, v1 v2, ..., v1 vn, v2^2, v2 v3, ..., v_{n-1} vn, vn^2]`.
pub fn vecv(v: &Vector) -> Result<Vector> {
    let n = v.len();
    if n == 0 {
        return Err(Error::Dimension("vecv of an empty vector".into()));
    }
    ensure_finite_vec(v, "vecv input")?;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(v[i] * v[j]);
        }
    }
    Ok(Vector::from_vec(out))
}

/// Symmetric-half vectorization of a symmetric matrix:
/// `[p11, 2 p12, ..., 2 p1m, p22, 2 p23, ..., 2 p_{m-1,m}, pmm]`.
///
/// The input is symmetrized as `(P + P^T)/2` first; asymmetry beyond
/// `1e-10` relative is rejected.
pub fn vecs(p: &Mat) -> Result<Vector> {
    let p = checked_symmetrize(p, "vecs input")?;
    let m = p.nrows();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            out.push(if i == j { p[(i, j)] } else { 2.0 * p[(i, j)] });
        }
    }
    Ok(Vector::from_vec(out))
}

/// Inverse of [`vecs`]: rebuild the symmetric `dim x dim` matrix.
pub fn vecs_inverse(v: &Vector, dim: usize) -> Result<Mat> {
    if v.len() != dim * (dim + 1) / 2 {
        return Err(Error::Dimension(format!(
            "vecs_inverse: expected length {}, got {}",
            dim * (dim + 1) / 2,
            v.len()
        )));
    }
    let mut p = Mat::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            if i == j {
                p[(i, j)] = v[k];
            } else {
                p[(i, j)] = v[k] / 2.0;
                p[(j, i)] = v[k] / 2.0;
            }
            k += 1;
        }
    }
    Ok(p)
}

/// Column-stacking vectorization `vec(T) = [t1; t2; ...; tm]`.
pub fn vec_cols(t: &Mat) -> Vector {
    Vector::from_column_slice(t.as_slice())
}

/// Kronecker product.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Symmetrize after checking the asymmetry is within `1e-10` relative.
pub fn checked_symmetrize(p: &Mat, context: &str) -> Result<Mat> {
    if p.nrows() != p.ncols() {
        return Err(Error::Dimension(format!(
            "{context}: expected square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    ensure_finite(p, context)?;
    let asym = (p - p.transpose()).norm();
    if asym > 1e-10 * (1.0 + p.norm()) {
        return Err(Error::Validation(format!(
            "{context}: asymmetry {asym:.3e} exceeds tolerance"
        )));
    }
    Ok((p + p.transpose()) * 0.5)
}

/// Numerical rank via SVD with the crate-wide relative threshold.
pub fn rank(m: &Mat) -> Result<usize> {
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), false, false, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if max_sv == 0.0 {
        return Ok(0);
    }
    Ok(svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_REL_TOL * max_sv)
        .count())
}

/// Rank of the complex matrix `Re + i*Im`, computed on the real embedding
/// `[[Re, -Im], [Im, Re]]` whose real rank is exactly twice the complex one.
pub fn complex_rank(re: &Mat, im: &Mat) -> Result<usize> {
    if re.shape() != im.shape() {
        return Err(Error::Dimension(format!(
            "complex_rank: real part {}x{} vs imaginary part {}x{}",
            re.nrows(),
            re.ncols(),
            im.nrows(),
            im.ncols()
        )));
    }
    let (r, c) = re.shape();
    let mut emb = Mat::zeros(2 * r, 2 * c);
    emb.view_mut((0, 0), (r, c)).copy_from(re);
    emb.view_mut((0, c), (r, c)).copy_from(&(-im));
    emb.view_mut((r, 0), (r, c)).copy_from(im);
    emb.view_mut((r, c), (r, c)).copy_from(re);
    Ok(rank(&emb)? / 2)
}

/// Induced 2-norm (largest singular value).
pub fn induced_two_norm(m: &Mat) -> Result<f64> {
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), false, false, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    Ok(svd.singular_values.iter().cloned().fold(0.0_f64, f64::max))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    let sym = checked_symmetrize(m, "symmetric eigenvalues")?;
    let mut eigs: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().cloned().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eigs)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "spectral radius of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.is_empty() {
        return Err(Error::Dimension(
            "spectral radius of an empty matrix".into(),
        ));
    }
    ensure_finite(a, "spectral radius input")?;
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max))
}

/// `true` iff the spectral radius is strictly below one.
pub fn is_schur(a: &Mat) -> Result<bool> {
    Ok(spectral_radius(a)? < 1.0)
}

/// Complex eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(a: &Mat) -> Result<Vec<(f64, f64)>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "eigenvalue input")?;
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect())
}

/// Least-squares solve of `M theta = b` for a full-column-rank `M`.
///
/// Returns the minimizer together with the residual norm `|M theta - b|`.
pub fn solve_least_squares(m: &Mat, b: &Vector) -> Result<(Vector, f64)> {
    let (s, p) = m.shape();
    if p == 0 || s < p {
        return Err(Error::Dimension(format!(
            "least squares needs at least as many rows as columns, got {s}x{p}"
        )));
    }
    if b.len() != s {
        return Err(Error::Dimension(format!(
            "least squares: matrix has {s} rows but right-hand side has {}",
            b.len()
        )));
    }
    ensure_finite(m, "least-squares matrix")?;
    ensure_finite_vec(b, "least-squares right-hand side")?;
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let found = svd
        .singular_values
        .iter()
        .filter(|&&sv| sv > RANK_REL_TOL * max_sv)
        .count();
    if found < p {
        return Err(Error::RankDeficient {
            required: p,
            found,
            context: "least-squares matrix".into(),
        });
    }
    let theta = svd
        .solve(b, RANK_REL_TOL * max_sv)
        .map_err(|e| Error::Numerical(format!("SVD solve failed: {e}")))?;
    let theta = Vector::from_column_slice(theta.as_slice());
    let residual = (m * &theta - b).norm();
    Ok((theta, residual))
}

/// Solve the discrete Lyapunov equation `A^T P A - P + Q = 0` for a Schur `A`.
///
/// Solved through the Kronecker linearization
/// `(I - A^T (x) A^T) vec(P) = vec(Q)`; the contract is the residual, not the
/// method.
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "Lyapunov equation: A is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let q = checked_symmetrize(q, "Lyapunov right-hand side")?;
    if q.nrows() != n {
        return Err(Error::Dimension(format!(
            "Lyapunov equation: A is {n}x{n} but Q is {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 - SCHUR_MARGIN {
        return Err(Error::NotSchur {
            spectral_radius: rho,
        });
    }
    let at = a.transpose();
    let sys = Mat::identity(n * n, n * n) - kron(&at, &at);
    let rhs = vec_cols(&q);
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Kronecker Lyapunov system is singular".into()))?;
    let p = Mat::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}
