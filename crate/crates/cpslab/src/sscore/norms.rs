//! H-infinity and H2 norms of stable discrete systems.

use num_complex::Complex64;

use super::linalg::{self, Mat};
use super::{freq_grid, StateSpace, GRID_POINTS};
use crate::error::{Error, Result};

/// Controls for [`hinf_norm_with`].
#[derive(Clone, Copy, Debug)]
pub struct HinfOptions {
    /// Relative width of the final bisection bracket.
    pub rel_tol: f64,
    pub grid_points: usize,
}

impl Default for HinfOptions {
    fn default() -> Self {
        HinfOptions {
            rel_tol: 1e-9,
            grid_points: GRID_POINTS,
        }
    }
}

/// Solution of `X = A X A^T + Q` for Schur-stable `A`, by Smith doubling.
pub fn dlyap(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::dim("dlyap: A and Q must be square of equal size"));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if !super::is_schur(a) {
        return Err(Error::invalid("dlyap: A is not Schur stable"));
    }
    let mut ak = a.clone();
    let mut x = q.clone();
    for _ in 0..80 {
        let inc = &ak * &x * ak.transpose();
        x += &inc;
        ak = &ak * &ak;
        if inc.norm() <= 1e-17 * x.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(linalg::symmetrize(&x))
}

/// `sqrt(trace(C P C^T + D D^T))` with `P = A P A^T + B B^T`.
pub fn h2_norm(model: &StateSpace) -> Result<f64> {
    if !model.is_stable()? {
        return Err(Error::invalid("H2 norm requires a stable system"));
    }
    let bbt = model.b() * model.b().transpose();
    let p = dlyap(model.a(), &bbt)?;
    let val = (model.c() * p * model.c().transpose()).trace()
        + (model.d() * model.d().transpose()).trace();
    Ok(val.max(0.0).sqrt())
}

/// H-infinity norm `sup_w sigma_max(G(e^{jw}))` with default options.
pub fn hinf_norm(model: &StateSpace) -> Result<f64> {
    hinf_norm_with(model, HinfOptions::default())
}

fn sigma_at(model: &StateSpace, z: Complex64) -> Result<f64> {
    Ok(linalg::max_singular_value_c(&model.eval_z(z)?))
}

/// Continuous-time image under `z = (1 + s) / (1 - s)`.
struct Bilinear {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

fn bilinear(model: &StateSpace) -> Result<Bilinear> {
    let n = model.n();
    let inv = linalg::inverse(&(model.a() + Mat::identity(n, n)), "A + I")?;
    let r2 = std::f64::consts::SQRT_2;
    Ok(Bilinear {
        a: &inv * (model.a() - Mat::identity(n, n)),
        b: &inv * model.b() * r2,
        c: model.c() * &inv * r2,
        d: model.d() - model.c() * &inv * model.b(),
    })
}

/// Frequencies `w` (continuous) of imaginary-axis Hamiltonian eigenvalues at level `gamma`.
fn crossings(bl: &Bilinear, gamma: f64) -> Result<Vec<f64>> {
    let n = bl.a.nrows();
    let m = bl.b.ncols();
    let p = bl.c.nrows();
    let r = Mat::identity(m, m) * (gamma * gamma) - bl.d.transpose() * &bl.d;
    let rinv = linalg::inverse(&r, "gamma^2 I - D^T D")?;
    let a11 = &bl.a + &bl.b * &rinv * bl.d.transpose() * &bl.c;
    let a12 = &bl.b * &rinv * bl.b.transpose();
    let a21 = -(bl.c.transpose()
        * (Mat::identity(p, p) + &bl.d * &rinv * bl.d.transpose())
        * &bl.c);
    let a22 = -a11.transpose();
    let h = linalg::blocks(
        &[n, n],
        &[n, n],
        &[&[Some(&a11), Some(&a12)], &[Some(&a21), Some(&a22)]],
    );
    let eig = linalg::eigenvalues(&h)?;
    Ok(eig
        .into_iter()
        .filter(|l| l.re.abs() <= 1e-6 * l.norm().max(1.0))
        .map(|l| l.im.abs())
        .collect())
}

fn z_of(w: f64) -> Complex64 {
    let s = Complex64::new(0.0, w);
    (Complex64::new(1.0, 0.0) + s) / (Complex64::new(1.0, 0.0) - s)
}

/// H-infinity norm by Hamiltonian bisection, seeded from a frequency grid.
///
/// Candidate crossings are confirmed by direct evaluation of the frequency
/// response, so cancelled modes cannot inflate the result.
pub fn hinf_norm_with(model: &StateSpace, opts: HinfOptions) -> Result<f64> {
    if !model.is_stable()? {
        return Err(Error::invalid("H-infinity norm requires a stable system"));
    }
    if model.n() == 0 {
        return Ok(linalg::max_singular_value(model.d()));
    }
    let mut lo = sigma_at(model, Complex64::new(1.0, 0.0))?;
    for w in freq_grid(model.ts(), opts.grid_points.max(2)) {
        lo = lo.max(linalg::max_singular_value_c(&model.freq_response(w)?));
    }
    for lam in linalg::eigenvalues(model.a())? {
        if lam.norm() > 1e-12 {
            lo = lo.max(sigma_at(model, lam / lam.norm())?);
        }
    }
    if lo == 0.0 {
        return Ok(0.0);
    }
    let bl = bilinear(model)?;
    let dnorm = linalg::max_singular_value(&bl.d);
    // Evaluates crossings at gamma and returns the largest confirmed gain there.
    let probe = |gamma: f64| -> Result<Option<f64>> {
        if gamma <= dnorm * (1.0 + 1e-12) {
            return Ok(Some(dnorm));
        }
        let mut best: Option<f64> = None;
        for w in crossings(&bl, gamma)? {
            let sig = sigma_at(model, z_of(w))?;
            if sig >= gamma * (1.0 - 1e-8) {
                best = Some(best.map_or(sig, |b: f64| b.max(sig)));
            }
        }
        Ok(best)
    };
    let mut hi = 10.0 * lo;
    let mut grow = 0;
    while let Some(sig) = probe(hi)? {
        lo = lo.max(sig);
        hi *= 10.0;
        grow += 1;
        if grow > 30 {
            return Err(Error::numerical("H-infinity bracket failed to close"));
        }
    }
    for _ in 0..200 {
        if hi - lo <= opts.rel_tol * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Some(sig) => lo = lo.max(sig).max(mid * (1.0 - 1e-8)),
            None => hi = mid,
        }
    }
    Ok(0.5 * (lo + hi))
}
