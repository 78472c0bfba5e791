//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex64>;

/// Eigenvalues of a general square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim(format!(
            "eigenvalues of non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let blocks = irreducible_blocks(a);
    if blocks.len() > 1 {
        let mut out = Vec::with_capacity(a.nrows());
        for idx in blocks {
            let sub = Mat::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])]);
            out.extend(dense_eigenvalues(&sub)?);
        }
        return Ok(out);
    }
    dense_eigenvalues(a)
}

/// Index sets of the strongly connected components of the sparsity graph of `a`.
/// A symmetric permutation brings `a` to block-triangular form with these
/// components as diagonal blocks, so their spectra together form the spectrum of `a`.
fn irreducible_blocks(a: &Mat) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let succ: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && a[(i, j)] != 0.0).collect()).collect();
    // Iterative Tarjan.
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0usize;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < succ[v].len() {
                let w = succ[v][*pos];
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

fn dense_eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    if a.nrows() == 1 {
        return Ok(vec![Complex64::new(a[(0, 0)], 0.0)]);
    }
    if let Some(schur) = Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        return Ok(schur.complex_eigenvalues().iter().copied().collect());
    }
    let a = &balance(a);
    // Clustered eigenvalues of non-normal matrices can keep the subdiagonal just
    // above machine epsilon; a slightly looser deflation test settles them.
    for eps in [f64::EPSILON, 1e-15, 1e-14, 1e-13] {
        if let Some(schur) = Schur::try_new(a.clone(), eps, 10_000) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    // The deflation test is relative to the diagonal, so it can stall on zero
    // eigenvalues and on exactly decoupled blocks. A shift plus an orthogonal
    // similarity preserves the spectrum up to the shift and breaks both.
    let n = a.nrows();
    let shift = a.amax().max(1.0);
    for attempt in 1..=4u32 {
        let seed = Mat::from_fn(n, n, |i, j| {
            let x = ((i * 31 + j * 17 + attempt as usize * 7) as f64 * 0.618_033_988_7).fract();
            x - 0.5
        });
        let q = seed.qr().q();
        let sigma = shift * attempt as f64;
        let b = q.transpose() * a * &q + Mat::identity(n, n) * sigma;
        if let Some(schur) = Schur::try_new(b, 1e-14, 10_000) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z - sigma)
                .collect());
        }
    }
    Err(Error::numerical("Schur decomposition did not converge"))
}

/// Diagonal similarity equalizing row and column norms (Parlett-Reinsch, powers of two).
pub fn balance(a: &Mat) -> Mat {
    let n = a.nrows();
    let mut b = a.clone();
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            while c < r / 2.0 {
                c *= 4.0;
                f *= 2.0;
            }
            while c >= r * 2.0 {
                c /= 4.0;
                f /= 2.0;
            }
            if (c + r) / f < 0.95 * total {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    b
}

/// Largest eigenvalue modulus; zero for an empty matrix.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Maximum absolute asymmetry of a square matrix.
pub fn asymmetry(a: &Mat) -> f64 {
    (a - a.transpose()).amax()
}

/// Inverse with an error naming the smallest singular value.
pub fn inverse(a: &Mat, what: &str) -> Result<Mat> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim(format!("{what}: inverse of non-square matrix")));
    }
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    let smin = min_singular_value(a);
    let smax = max_singular_value(a);
    if !(smin > smax * 1e-14) || !smin.is_finite() {
        return Err(Error::numerical(format!(
            "{what} is singular (smallest singular value {smin:e}, largest {smax:e})"
        )));
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical(format!("{what} is singular (smallest singular value {smin:e})")))
}

pub fn singular_values(a: &Mat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    SVD::new(a.clone(), false, false).singular_values.iter().copied().collect()
}

pub fn min_singular_value(a: &Mat) -> f64 {
    singular_values(a).into_iter().fold(f64::INFINITY, f64::min)
}

pub fn max_singular_value(a: &Mat) -> f64 {
    singular_values(a).into_iter().fold(0.0, f64::max)
}

/// Largest singular value of a complex matrix.
pub fn max_singular_value_c(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    SVD::new(a.clone(), false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc: f64, &s| acc.max(s))
}

/// Condition number in the 2-norm.
pub fn condition_number(a: &Mat) -> f64 {
    let smin = min_singular_value(a);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        max_singular_value(a) / smin
    }
}

/// Symmetric eigen-decomposition of the symmetric part of `a`.
pub fn sym_eigen(a: &Mat) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(a))
}

fn sym_fn(a: &Mat, what: &str, f: impl Fn(f64) -> f64, needs_pd: bool) -> Result<Mat> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim(format!("{what}: matrix is not square")));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(a.clone());
    }
    let eig = sym_eigen(a);
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if needs_pd && l <= scale * 1e-14 {
            return Err(Error::numerical(format!(
                "{what} is not positive definite (eigenvalue {l:e})"
            )));
        }
        if !needs_pd && l < -scale * 1e-10 {
            return Err(Error::numerical(format!(
                "{what} is not positive semidefinite (eigenvalue {l:e})"
            )));
        }
        d[i] = f(l.max(0.0));
    }
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&d) * v.transpose())))
}

/// Symmetric square root of a PSD matrix.
pub fn sqrtm_psd(a: &Mat, what: &str) -> Result<Mat> {
    sym_fn(a, what, f64::sqrt, false)
}

/// Inverse symmetric square root of a PD matrix.
pub fn inv_sqrtm_pd(a: &Mat, what: &str) -> Result<Mat> {
    sym_fn(a, what, |l| 1.0 / l.sqrt(), true)
}

/// Lower Cholesky factor of a PSD matrix (symmetric square root fallback when singular).
pub fn psd_factor(a: &Mat, what: &str) -> Result<Mat> {
    if let Some(ch) = nalgebra::Cholesky::new(symmetrize(a)) {
        return Ok(ch.l());
    }
    sqrtm_psd(a, what)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_extreme_eigenvalues(a: &Mat) -> (f64, f64) {
    let eig = sym_eigen(a);
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn to_complex(a: &Mat) -> CMat {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Build a matrix from row-major nested vectors.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::dim("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Row-major nested vectors of a matrix.
pub fn mat_to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Block matrix from a grid of optional blocks; `None` is a zero block.
/// Row heights and column widths are listed explicitly so empty blocks are allowed.
pub fn blocks(heights: &[usize], widths: &[usize], grid: &[&[Option<&Mat>]]) -> Mat {
    let nr: usize = heights.iter().sum();
    let nc: usize = widths.iter().sum();
    let mut out = DMatrix::zeros(nr, nc);
    let mut r0 = 0;
    for (bi, &h) in heights.iter().enumerate() {
        let mut c0 = 0;
        for (bj, &w) in widths.iter().enumerate() {
            if let Some(blk) = grid[bi][bj] {
                debug_assert_eq!((blk.nrows(), blk.ncols()), (h, w));
                out.view_mut((r0, c0), (h, w)).copy_from(blk);
            }
            c0 += w;
        }
        r0 += h;
    }
    out
}
