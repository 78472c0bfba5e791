//! Residual post-filters and the detector families run at the MC-station.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::plantside::DetectorVerdict;
use crate::sscore::{kalman_predictor, linalg, LtiFilter, Mat, StateSpace, Vector};
use crate::stats;

/// Whitening filter for `sys` driven by white noise of covariance `sigma_in`.
///
/// Returns `(A - LC, -L, S^{-1/2} C, S^{-1/2})` with `L` and `S` the steady Kalman
/// predictor gain and innovation covariance of `sys`.
pub fn design_whitening_filter(sys: &StateSpace, sigma_in: &Mat) -> Result<StateSpace> {
    if sigma_in.shape() != (sys.m(), sys.m()) {
        return Err(Error::dim("input covariance does not match the system input"));
    }
    let (b, d) = (sys.b(), sys.d());
    let sigma = linalg::symmetrize(sigma_in);
    let q = linalg::symmetrize(&(b * &sigma * b.transpose()));
    let r = linalg::symmetrize(&(d * &sigma * d.transpose()));
    let s = b * &sigma * d.transpose();
    let kp = kalman_predictor(sys.a(), sys.c(), &q, &r, &s)?;
    let (lo, hi) = linalg::sym_extreme_eigenvalues(&kp.innovation_cov);
    if lo <= 1e-14 * hi.max(f64::MIN_POSITIVE) {
        return Err(Error::invalid("innovation covariance is singular; the filtered signal cannot be whitened"));
    }
    let w = linalg::inv_sqrtm_pd(&kp.innovation_cov, "innovation covariance")?;
    StateSpace::new(
        sys.a() - &kp.gain * sys.c(),
        -kp.gain.clone(),
        &w * sys.c(),
        w,
        sys.ts(),
    )
}

/// Post-filter `R` for the attack residual: `R Q_r1 r_y` is white with identity covariance.
pub fn design_attack_postfilter(q_r1: &StateSpace, sigma_ry: &Mat) -> Result<StateSpace> {
    if q_r1.m() != sigma_ry.nrows() {
        return Err(Error::dim("Sigma_ry does not match Q_r1"));
    }
    if linalg::sym_extreme_eigenvalues(sigma_ry).0 <= 0.0 {
        return Err(Error::invalid("Sigma_ry must be positive definite"));
    }
    design_whitening_filter(q_r1, sigma_ry)
}

fn chi2_verdict(name: &str, k0: usize, r: &Vector, threshold: f64) -> DetectorVerdict {
    let j = r.norm_squared();
    DetectorVerdict {
        detector: name.into(),
        k0,
        statistic: j,
        threshold,
        alarm: j > threshold,
        branch: None,
    }
}

/// Batch attack detector over a batch of `r_yu^a - Q_r2 v` samples.
pub fn attack_residual_chi2(r_bar: &StateSpace, inputs: &[Vector], alpha: f64) -> Result<Vec<DetectorVerdict>> {
    let th = stats::chi2_quantile(1.0 - alpha, r_bar.p() as f64)?;
    let mut f = LtiFilter::new(r_bar.clone());
    inputs
        .iter()
        .enumerate()
        .map(|(k, d)| Ok(chi2_verdict("attack_chi2", k, &f.step(d)?, th)))
        .collect()
}

/// Sliding-window switch detector parameters.
#[derive(Clone, Debug)]
pub struct SwitchDetectorConfig {
    pub s: usize,
    pub gamma: usize,
    pub tau: usize,
    pub l0: f64,
    pub l_l: f64,
    pub l_u: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Stacked observability matrix of `R` over `s + 1` samples.
    pub h_o: Mat,
    /// Maps the stacked attack over `tau` samples into the stacked residual window.
    pub h_eta: Mat,
    pub postfilter: StateSpace,
}

/// Assemble the switch detector for post-filter `r`.
pub fn build_switch_detector(r: &StateSpace, s: usize, gamma: usize, l0: f64) -> Result<SwitchDetectorConfig> {
    if gamma == 0 {
        return Err(Error::invalid("truncation horizon must be at least 1"));
    }
    if !(l0 > 0.0) {
        return Err(Error::invalid("RMS attack bound L0 must be positive"));
    }
    let (a, ky, keta) = (r.a(), r.p(), r.m());
    let n = r.n();
    let mut pow = Mat::identity(n, n);
    for _ in 0..gamma {
        pow = &pow * a;
    }
    let tail = if n == 0 { 0.0 } else { linalg::max_singular_value(&pow) };
    if tail >= 1e-8 {
        return Err(Error::invalid(format!(
            "truncation horizon {gamma} too short: ||A^gamma|| = {tail:.3e}"
        )));
    }
    let tau = s + gamma;
    let markov = r.markov_parameters(tau + 1);
    let rows = ky * (s + 1);
    let mut h_o = Mat::zeros(rows, n);
    let mut ca = r.c().clone();
    for i in 0..=s {
        h_o.view_mut((i * ky, 0), (ky, n)).copy_from(&ca);
        ca = &ca * a;
    }
    let mut h_eta = Mat::zeros(rows, keta * tau);
    for i in 0..=s {
        for j in 0..tau {
            // Output at k0 + i, input at k0 - gamma + 1 + j.
            let lag = i as isize + gamma as isize - 1 - j as isize;
            if lag >= 0 {
                h_eta
                    .view_mut((i * ky, j * keta), (ky, keta))
                    .copy_from(&markov[lag as usize]);
            }
        }
    }
    let hh = linalg::symmetrize(&(&h_eta * h_eta.transpose()));
    let (sigma_min, sigma_max) = linalg::sym_extreme_eigenvalues(&hh);
    if sigma_min <= 1e-12 * sigma_max {
        return Err(Error::invalid("stacked impulse matrix is rank deficient"));
    }
    let l_l = (tau as f64 * sigma_min).sqrt() * l0;
    let l_u = (tau as f64 * sigma_max).sqrt() * l0;
    Ok(SwitchDetectorConfig {
        s,
        gamma,
        tau,
        l0,
        l_l,
        l_u,
        sigma_min,
        sigma_max,
        h_o,
        h_eta,
        postfilter: r.clone(),
    })
}

/// Branch formulas of the LLR evaluated at residual norm `rho`.
pub fn llr_branches(rho: f64, l_l: f64, l_u: f64) -> [f64; 3] {
    let lower = 0.5 * (rho - l_u).powi(2);
    let upper = -0.5 * (rho - l_l).powi(2);
    [lower, lower + upper, upper]
}

/// Branch index (0 lower, 1 middle, 2 upper) for residual norm `rho`.
pub fn llr_branch(rho: f64, l_l: f64, l_u: f64) -> u8 {
    if rho <= l_l {
        0
    } else if rho <= l_u {
        1
    } else {
        2
    }
}

fn llr_value(rho: f64, l_l: f64, l_u: f64) -> (f64, u8) {
    let b = llr_branch(rho, l_l, l_u);
    (llr_branches(rho, l_l, l_u)[b as usize], b)
}

/// LLR threshold: the critical residual norm and the branch values there.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrThreshold {
    /// `||r||^2` at the `1 - alpha` quantile of the non-central chi-square.
    pub rho_sq: f64,
    pub per_branch: [f64; 3],
    /// Threshold of the branch containing the critical norm.
    pub effective: f64,
}

pub fn llr_threshold(cfg: &SwitchDetectorConfig, alpha: f64) -> Result<LlrThreshold> {
    let dof = (cfg.postfilter.p() * (cfg.s + 1)) as f64;
    let rho_sq = stats::ncx2_quantile(1.0 - alpha, dof, cfg.l_u * cfg.l_u)?;
    let rho = rho_sq.sqrt();
    let per_branch = llr_branches(rho, cfg.l_l, cfg.l_u);
    let effective = llr_value(rho, cfg.l_l, cfg.l_u).0;
    Ok(LlrThreshold {
        rho_sq,
        per_branch,
        effective,
    })
}

/// LLR verdict for one stacked window. `J` decreases with `||r||`, so small `J` raises the alarm.
pub fn llr_statistic(cfg: &SwitchDetectorConfig, th: &LlrThreshold, k0: usize, window: &Vector) -> Result<DetectorVerdict> {
    let expect = cfg.postfilter.p() * (cfg.s + 1);
    if window.len() != expect {
        return Err(Error::dim(format!("LLR window must have length {expect}")));
    }
    let (j, branch) = llr_value(window.norm(), cfg.l_l, cfg.l_u);
    Ok(DetectorVerdict {
        detector: "switch_llr".into(),
        k0,
        statistic: j,
        threshold: th.effective,
        alarm: j <= th.effective,
        branch: Some(branch),
    })
}

/// GLR statistic for a window of whitened residuals against nominal covariance `sigma`.
pub fn glr_statistic(window: &[Vector], sigma: &Mat) -> Result<f64> {
    let n = window.len();
    let k = sigma.nrows();
    if n < k || n == 0 {
        return Err(Error::invalid("GLR window is shorter than the residual dimension"));
    }
    let mut s_hat = Mat::zeros(k, k);
    for r in window {
        if r.len() != k {
            return Err(Error::dim("GLR sample has the wrong dimension"));
        }
        s_hat += r * r.transpose();
    }
    s_hat /= n as f64;
    if s_hat.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("window sample covariance is not finite"));
    }
    let det_hat = s_hat.determinant();
    let inv = linalg::inverse(sigma, "nominal covariance")?;
    // A rank-deficient window has unbounded likelihood under the free covariance.
    let inv_hat = match (det_hat > 0.0).then(|| linalg::inverse(&s_hat, "window covariance")) {
        Some(Ok(m)) => m,
        _ => return Ok(f64::INFINITY),
    };
    let ln_ratio = sigma.determinant().ln() - det_hat.ln();
    let quad: f64 = window
        .iter()
        .map(|r| (r.transpose() * (&inv - &inv_hat) * r)[(0, 0)])
        .sum();
    Ok(0.5 * n as f64 * ln_ratio + 0.5 * quad)
}

/// Empirical `1 - far` quantile of attack-free GLR samples.
pub fn calibrate_threshold(samples: &[f64], far: f64) -> Result<f64> {
    if samples.is_empty() || !(far > 0.0 && far < 1.0) {
        return Err(Error::invalid("calibration needs samples and a rate in (0, 1)"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = (((1.0 - far) * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    Ok(s[idx])
}

/// Streaming chi-square detector on an already whitened residual.
#[derive(Clone, Debug)]
pub struct Chi2Stream {
    pub name: String,
    pub threshold: f64,
}

impl Chi2Stream {
    pub fn new(name: &str, dim: usize, alpha: f64) -> Result<Self> {
        Ok(Chi2Stream {
            name: name.into(),
            threshold: stats::chi2_quantile(1.0 - alpha, dim as f64)?,
        })
    }

    pub fn evaluate(&self, k: usize, r: &Vector) -> DetectorVerdict {
        chi2_verdict(&self.name, k, r, self.threshold)
    }
}

/// Sliding window stacking the last `s + 1` residuals.
#[derive(Clone, Debug)]
pub struct SlidingWindow {
    len: usize,
    buf: VecDeque<Vector>,
}

impl SlidingWindow {
    pub fn new(len: usize) -> Self {
        SlidingWindow {
            len,
            buf: VecDeque::with_capacity(len),
        }
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    /// Push a sample; returns the stacked window once full.
    pub fn push(&mut self, r: Vector) -> Option<Vector> {
        if self.buf.len() == self.len {
            self.buf.pop_front();
        }
        self.buf.push_back(r);
        (self.buf.len() == self.len).then(|| {
            let k = self.buf[0].len();
            let mut out = Vector::zeros(k * self.len);
            for (i, v) in self.buf.iter().enumerate() {
                out.rows_mut(i * k, k).copy_from(v);
            }
            out
        })
    }
}

/// Non-overlapping window collector for the GLR test.
#[derive(Clone, Debug)]
pub struct BlockWindow {
    len: usize,
    start: usize,
    buf: Vec<Vector>,
}

impl BlockWindow {
    pub fn new(len: usize) -> Self {
        BlockWindow {
            len,
            start: 0,
            buf: Vec::with_capacity(len),
        }
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    /// Push sample of step `k`; returns `(first step, window)` when a block completes.
    pub fn push(&mut self, k: usize, r: Vector) -> Option<(usize, Vec<Vector>)> {
        if self.buf.is_empty() {
            self.start = k;
        }
        self.buf.push(r);
        (self.buf.len() == self.len).then(|| (self.start, std::mem::take(&mut self.buf)))
    }
}
