//! Discrete algebraic Riccati equations and the Kalman and LQ gains built on them.

use super::linalg::{self, Mat};
use super::{GainReport, NoiseSpec, StateSpace};
use crate::error::{Error, Result};

/// Convergence controls for [`solve_dare_cross`].
#[derive(Clone, Copy, Debug)]
pub struct DareOptions {
    /// Relative change between iterates at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative residual `|P - Phi(P)| / max(1, |P|)` accepted for the final solution.
    pub residual_tol: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        DareOptions {
            tol: 1e-12,
            max_iter: 10_000,
            residual_tol: 1e-10,
        }
    }
}

/// `P = A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A + Q`.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let s = Mat::zeros(a.nrows(), b.ncols());
    solve_dare_cross(a, b, q, r, &s, DareOptions::default())
}

/// Riccati map `Phi(P) = A^T P A - (A^T P B + S)(R + B^T P B)^{-1}(B^T P A + S^T) + Q`.
fn riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: &Mat, p: &Mat) -> Result<Mat> {
    let pb = p * b;
    let k_left = a.transpose() * &pb + s;
    let w = r + b.transpose() * &pb;
    let winv = linalg::inverse(&w, "R + B^T P B")?;
    let out = a.transpose() * p * a - &k_left * winv * k_left.transpose() + q;
    Ok(linalg::symmetrize(&out))
}

/// Frobenius norm of `P - Phi(P)`.
pub fn dare_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: &Mat, p: &Mat) -> Result<f64> {
    Ok((p - riccati_map(a, b, q, r, s, p)?).norm())
}

fn validate(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: &Mat) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::dim("DARE: A must be square and B must have matching rows"));
    }
    if q.shape() != (n, n) || r.shape() != (m, m) || s.shape() != (n, m) {
        return Err(Error::dim(format!(
            "DARE: expected Q {n}x{n}, R {m}x{m}, S {n}x{m}"
        )));
    }
    for (name, w) in [("Q", q), ("R", r)] {
        let scale = w.amax().max(1.0);
        if linalg::asymmetry(w) > 1e-10 * scale {
            return Err(Error::invalid(format!("DARE: {name} is not symmetric")));
        }
        if w.nrows() > 0 && linalg::sym_extreme_eigenvalues(w).0 < -1e-10 * scale {
            return Err(Error::invalid(format!("DARE: {name} is not positive semidefinite")));
        }
    }
    Ok(())
}

/// Stabilizing solution of the Riccati equation with cross term `S`.
///
/// Uses structure-preserving doubling when `R` is well conditioned and falls back
/// to fixed-point iteration of the Riccati map otherwise.
pub fn solve_dare_cross(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    s: &Mat,
    opts: DareOptions,
) -> Result<Mat> {
    validate(a, b, q, r, s)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let q = linalg::symmetrize(q);
    let r = linalg::symmetrize(r);
    let r_ok = r.nrows() > 0
        && linalg::sym_extreme_eigenvalues(&r).0 > 0.0
        && linalg::condition_number(&r) < 1e12;
    let mut p = if r_ok {
        doubling(a, b, &q, &r, s, &opts)?
    } else {
        fixed_point(a, b, &q, &r, s, q.clone(), &opts)?
    };
    let scale = p.norm().max(1.0);
    let mut res = dare_residual(a, b, &q, &r, s, &p)?;
    let mut polish = 0;
    while res > opts.residual_tol * scale && polish < 200 {
        p = riccati_map(a, b, &q, &r, s, &p)?;
        res = dare_residual(a, b, &q, &r, s, &p)?;
        polish += 1;
    }
    if !(res <= opts.residual_tol * scale) {
        return Err(Error::numerical(format!(
            "DARE did not converge: residual {res:e}"
        )));
    }
    let w = &r + b.transpose() * &p * b;
    let k = -linalg::inverse(&w, "R + B^T P B")? * (b.transpose() * &p * a + s.transpose());
    let rho = linalg::spectral_radius(&(a + b * k))?;
    if rho >= 1.0 {
        return Err(Error::numerical(format!(
            "DARE solution is not stabilizing (closed-loop spectral radius {rho})"
        )));
    }
    Ok(p)
}

fn doubling(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: &Mat, opts: &DareOptions) -> Result<Mat> {
    let n = a.nrows();
    let rinv = linalg::inverse(r, "R")?;
    let mut ak = a - b * &rinv * s.transpose();
    let mut gk = linalg::symmetrize(&(b * &rinv * b.transpose()));
    let mut hk = linalg::symmetrize(&(q - s * &rinv * s.transpose()));
    let eye = Mat::identity(n, n);
    for _ in 0..opts.max_iter {
        let winv = linalg::inverse(&(&eye + &gk * &hk), "I + G H")?;
        let a_w = &ak * &winv;
        let a1 = &a_w * &ak;
        let g1 = linalg::symmetrize(&(&gk + &a_w * &gk * ak.transpose()));
        let h1 = linalg::symmetrize(&(&hk + ak.transpose() * &hk * &winv * &ak));
        if h1.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("DARE doubling iteration diverged"));
        }
        let change = (&h1 - &hk).norm();
        let done = change <= opts.tol * h1.norm().max(1.0);
        ak = a1;
        gk = g1;
        hk = h1;
        if done {
            return Ok(hk);
        }
    }
    Err(Error::numerical(format!(
        "DARE doubling did not converge in {} iterations",
        opts.max_iter
    )))
}

fn fixed_point(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    s: &Mat,
    p0: Mat,
    opts: &DareOptions,
) -> Result<Mat> {
    let mut p = p0;
    for _ in 0..opts.max_iter {
        let p1 = riccati_map(a, b, q, r, s, &p)?;
        if p1.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("Riccati iteration diverged"));
        }
        let change = (&p1 - &p).norm();
        p = p1;
        if change <= opts.tol * p.norm().max(1.0) {
            return Ok(p);
        }
    }
    Err(Error::numerical(format!(
        "Riccati iteration did not converge in {} iterations",
        opts.max_iter
    )))
}

/// Steady-state one-step predictor for `x+ = A x + w`, `y = C x + v`
/// with `E[w w^T] = Q`, `E[v v^T] = R`, `E[w v^T] = S`.
#[derive(Clone, Debug)]
pub struct KalmanPredictor {
    /// `L = (A P C^T + S) Sigma^{-1}`.
    pub gain: Mat,
    /// Prediction error covariance.
    pub p: Mat,
    /// Innovation covariance `Sigma = C P C^T + R`.
    pub innovation_cov: Mat,
}

pub fn kalman_predictor(a: &Mat, c: &Mat, q: &Mat, r: &Mat, s: &Mat) -> Result<KalmanPredictor> {
    let p = solve_dare_cross(
        &a.transpose(),
        &c.transpose(),
        q,
        r,
        s,
        DareOptions::default(),
    )?;
    let sigma = linalg::symmetrize(&(c * &p * c.transpose() + r));
    let sinv = linalg::inverse(&sigma, "innovation covariance")?;
    let gain = (a * &p * c.transpose() + s) * sinv;
    Ok(KalmanPredictor {
        gain,
        p,
        innovation_cov: sigma,
    })
}

/// Steady-state Kalman gain `L = A P C^T (C P C^T + Sigma_nu)^{-1}`.
pub fn kalman_gain(model: &StateSpace, noise: &NoiseSpec) -> Result<GainReport> {
    noise.validate()?;
    let (n, p) = (model.n(), model.p());
    if noise.sigma_w.nrows() != n || noise.sigma_nu.nrows() != p {
        return Err(Error::dim(format!(
            "noise covariances must be {n}x{n} and {p}x{p}"
        )));
    }
    let kp = kalman_predictor(
        model.a(),
        model.c(),
        &noise.sigma_w,
        &noise.sigma_nu,
        &Mat::zeros(n, p),
    )?;
    let rho = linalg::spectral_radius(&(model.a() - &kp.gain * model.c()))?;
    Ok(GainReport {
        gain: kp.gain,
        p: kp.p,
        innovation_cov: Some(kp.innovation_cov),
        spectral_radius: rho,
    })
}

/// LQ state feedback `F = -(R_u + B^T P B)^{-1} B^T P A`, so that `u = F x`.
pub fn lq_gain(model: &StateSpace, qx: &Mat, ru: &Mat) -> Result<GainReport> {
    let (n, m) = (model.n(), model.m());
    if qx.shape() != (n, n) || ru.shape() != (m, m) {
        return Err(Error::dim(format!("LQ weights must be {n}x{n} and {m}x{m}")));
    }
    if m > 0 && linalg::sym_extreme_eigenvalues(&linalg::symmetrize(ru)).0 <= 0.0 {
        return Err(Error::invalid("LQ input weight must be positive definite"));
    }
    let (a, b) = (model.a(), model.b());
    let p = solve_dare(a, b, qx, ru)?;
    let w = ru + b.transpose() * &p * b;
    let f = -linalg::inverse(&w, "R_u + B^T P B")? * b.transpose() * &p * a;
    let rho = linalg::spectral_radius(&(a + b * &f))?;
    Ok(GainReport {
        gain: f,
        p,
        innovation_cov: None,
        spectral_radius: rho,
    })
}
