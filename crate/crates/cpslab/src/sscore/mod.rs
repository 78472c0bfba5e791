//! Discrete-time LTI state-space algebra, Riccati gain design and system norms.
//!
//! Every plant, factor, filter and detector in the crate is carried by a
//! [`StateSpace`] quadruple `(A, B, C, D)` with a sample period `Ts`.

mod filter;
pub mod linalg;
mod norms;
mod riccati;
mod tf;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
pub use filter::LtiFilter;
pub use linalg::{CMat, Mat, Vector};
pub use norms::{dlyap, h2_norm, hinf_norm, hinf_norm_with, HinfOptions};
pub use riccati::{
    dare_residual, kalman_gain, kalman_predictor, lq_gain, solve_dare, solve_dare_cross,
    DareOptions, KalmanPredictor,
};
pub use tf::{SystemSpec, Tf, TfMatrix};

/// Tolerance used when comparing sample periods of connected systems.
const TS_TOL: f64 = 1e-12;

/// Strict margin for the Schur test: spectral radius must be below `1 - SCHUR_MARGIN`.
pub const SCHUR_MARGIN: f64 = 1e-12;

/// Discrete LTI system `x+ = A x + B u`, `y = C x + D u`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
    ts: f64,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, ts: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("A is {}x{}, must be square", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dim(format!("B has {} rows, A has {}", b.nrows(), n)));
        }
        if c.ncols() != n {
            return Err(Error::dim(format!("C has {} columns, A has {}", c.ncols(), n)));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::invalid(format!("sample period must be positive, got {ts}")));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{name} contains non-finite entries")));
            }
        }
        Ok(StateSpace { a, b, c, d, ts })
    }

    /// Memoryless system `y = D u`.
    pub fn gain(d: Mat, ts: f64) -> Result<Self> {
        let (p, m) = d.shape();
        Self::new(Mat::zeros(0, 0), Mat::zeros(0, m), Mat::zeros(p, 0), d, ts)
    }

    pub fn identity(m: usize, ts: f64) -> Self {
        Self::gain(Mat::identity(m, m), ts).expect("identity is well formed")
    }

    pub fn zeros(p: usize, m: usize, ts: f64) -> Self {
        Self::gain(Mat::zeros(p, m), ts).expect("zero gain is well formed")
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn d(&self) -> &Mat {
        &self.d
    }
    pub fn ts(&self) -> f64 {
        self.ts
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    /// `(outputs, inputs)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.p(), self.m())
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// One step from `state` under `input`.
    pub fn step(&self, state: &Vector, input: &Vector) -> Result<(Vector, Vector)> {
        step_lti(self, state, input)
    }

    /// Zero-initial-state response to an input sequence.
    pub fn simulate(&self, inputs: &[Vector]) -> Result<Vec<Vector>> {
        let mut x = Vector::zeros(self.n());
        let mut out = Vec::with_capacity(inputs.len());
        for u in inputs {
            let (xn, y) = step_lti(self, &x, u)?;
            x = xn;
            out.push(y);
        }
        Ok(out)
    }

    /// Markov parameters `D, CB, CAB, ...` up to `count` terms.
    pub fn markov_parameters(&self, count: usize) -> Vec<Mat> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut ak_b = self.b.clone();
        for _ in 1..count {
            out.push(&self.c * &ak_b);
            ak_b = &self.a * ak_b;
        }
        out
    }

    pub fn is_stable(&self) -> Result<bool> {
        is_schur_checked(&self.a)
    }

    /// `C (zI - A)^{-1} B + D` at `z = e^{j omega Ts}`.
    pub fn freq_response(&self, omega: f64) -> Result<CMat> {
        self.eval_z(Complex64::from_polar(1.0, omega * self.ts))
    }

    /// Transfer matrix evaluated at an arbitrary complex point.
    pub fn eval_z(&self, z: Complex64) -> Result<CMat> {
        let n = self.n();
        let d = linalg::to_complex(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let mut res = linalg::to_complex(&(-&self.a));
        for i in 0..n {
            res[(i, i)] += z;
        }
        let bc = linalg::to_complex(&self.b);
        let lu = res.lu();
        let x = lu
            .solve(&bc)
            .ok_or_else(|| Error::numerical(format!("resolvent singular at z = {z}")))?;
        let scale = 1.0 + self.b.amax();
        let xmax = x.iter().fold(0.0f64, |acc, v| acc.max(v.norm()));
        if !xmax.is_finite() || xmax > 1e13 * scale {
            return Err(Error::numerical(format!(
                "resolvent near-singular at z = {z} (|x| = {xmax:e})"
            )));
        }
        Ok(linalg::to_complex(&self.c) * x + d)
    }

    /// Steady-state gain `G(1)`.
    pub fn dc_gain(&self) -> Result<Mat> {
        Ok(self.eval_z(Complex64::new(1.0, 0.0))?.map(|z| z.re))
    }

    /// Scalar multiple `k G`.
    pub fn scale(&self, k: f64) -> Self {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.c * k,
            d: &self.d * k,
            ts: self.ts,
        }
    }

    /// `K G` for a static output matrix `K`.
    pub fn premul(&self, k: &Mat) -> Result<Self> {
        if k.ncols() != self.p() {
            return Err(Error::dim("premultiplier width must equal output dimension"));
        }
        Self::new(self.a.clone(), self.b.clone(), k * &self.c, k * &self.d, self.ts)
    }

    /// `G K` for a static input matrix `K`.
    pub fn postmul(&self, k: &Mat) -> Result<Self> {
        if k.nrows() != self.m() {
            return Err(Error::dim("postmultiplier height must equal input dimension"));
        }
        Self::new(self.a.clone(), &self.b * k, self.c.clone(), &self.d * k, self.ts)
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }
}

fn check_ts(g1: &StateSpace, g2: &StateSpace) -> Result<()> {
    if (g1.ts - g2.ts).abs() > TS_TOL * g1.ts.max(g2.ts) {
        return Err(Error::invalid(format!(
            "sample periods differ: {} vs {}",
            g1.ts, g2.ts
        )));
    }
    Ok(())
}

/// `next_state = A state + B input`, `output = C state + D input`.
pub fn step_lti(model: &StateSpace, state: &Vector, input: &Vector) -> Result<(Vector, Vector)> {
    if state.len() != model.n() {
        return Err(Error::dim(format!(
            "state has length {}, model order is {}",
            state.len(),
            model.n()
        )));
    }
    if input.len() != model.m() {
        return Err(Error::dim(format!(
            "input has length {}, model expects {}",
            input.len(),
            model.m()
        )));
    }
    let next = &model.a * state + &model.b * input;
    let out = &model.c * state + &model.d * input;
    Ok((next, out))
}

/// Realization of `second * first` (apply `first`, then `second`); state is `[x1; x2]`.
pub fn series_connect(first: &StateSpace, second: &StateSpace) -> Result<StateSpace> {
    check_ts(first, second)?;
    if first.p() != second.m() {
        return Err(Error::dim(format!(
            "series: first has {} outputs, second has {} inputs",
            first.p(),
            second.m()
        )));
    }
    let (n1, n2) = (first.n(), second.n());
    let b2c1 = &second.b * &first.c;
    let a = linalg::blocks(
        &[n1, n2],
        &[n1, n2],
        &[&[Some(&first.a), None], &[Some(&b2c1), Some(&second.a)]],
    );
    let b2d1 = &second.b * &first.d;
    let b = linalg::blocks(&[n1, n2], &[first.m()], &[&[Some(&first.b)], &[Some(&b2d1)]]);
    let d2c1 = &second.d * &first.c;
    let c = linalg::blocks(&[second.p()], &[n1, n2], &[&[Some(&d2c1), Some(&second.c)]]);
    let d = &second.d * &first.d;
    StateSpace::new(a, b, c, d, first.ts)
}

/// Product of a chain `g[last] * ... * g[0]`.
pub fn series_chain(chain: &[&StateSpace]) -> Result<StateSpace> {
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| Error::invalid("empty series chain"))?;
    rest.iter()
        .try_fold((*first).clone(), |acc, g| series_connect(&acc, g))
}

/// Inverse system `(A - B D^{-1} C, B D^{-1}, -D^{-1} C, D^{-1})`.
pub fn invert_io(model: &StateSpace) -> Result<StateSpace> {
    if model.p() != model.m() {
        return Err(Error::dim(format!(
            "cannot invert a {}x{} system",
            model.p(),
            model.m()
        )));
    }
    let dinv = linalg::inverse(&model.d, "feedthrough D").map_err(|e| match e {
        Error::Numerical(msg) => Error::Numerical(format!("system not invertible: {msg}")),
        other => other,
    })?;
    let bdi = &model.b * &dinv;
    let a = &model.a - &bdi * &model.c;
    let c = -(&dinv * &model.c);
    StateSpace::new(a, bdi, c, dinv, model.ts)
}

/// Parallel sum `g1 + g2`.
pub fn add(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    check_ts(g1, g2)?;
    if g1.p() != g2.p() || g1.m() != g2.m() {
        return Err(Error::dim("parallel sum requires equal input and output dimensions"));
    }
    let (n1, n2) = (g1.n(), g2.n());
    let a = linalg::blocks(&[n1, n2], &[n1, n2], &[&[Some(&g1.a), None], &[None, Some(&g2.a)]]);
    let b = linalg::blocks(&[n1, n2], &[g1.m()], &[&[Some(&g1.b)], &[Some(&g2.b)]]);
    let c = linalg::blocks(&[g1.p()], &[n1, n2], &[&[Some(&g1.c), Some(&g2.c)]]);
    StateSpace::new(a, b, c, &g1.d + &g2.d, g1.ts)
}

/// `g1 - g2`.
pub fn sub(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    add(g1, &g2.neg())
}

/// Vertical stack `[g1; g2]` sharing the input.
pub fn stack_outputs(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    check_ts(g1, g2)?;
    if g1.m() != g2.m() {
        return Err(Error::dim("output stacking requires a common input dimension"));
    }
    let (n1, n2) = (g1.n(), g2.n());
    let a = linalg::blocks(&[n1, n2], &[n1, n2], &[&[Some(&g1.a), None], &[None, Some(&g2.a)]]);
    let b = linalg::blocks(&[n1, n2], &[g1.m()], &[&[Some(&g1.b)], &[Some(&g2.b)]]);
    let c = linalg::blocks(
        &[g1.p(), g2.p()],
        &[n1, n2],
        &[&[Some(&g1.c), None], &[None, Some(&g2.c)]],
    );
    let d = linalg::blocks(&[g1.p(), g2.p()], &[g1.m()], &[&[Some(&g1.d)], &[Some(&g2.d)]]);
    StateSpace::new(a, b, c, d, g1.ts)
}

/// Horizontal concatenation `[g1 g2]` summing the outputs.
pub fn concat_inputs(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    check_ts(g1, g2)?;
    if g1.p() != g2.p() {
        return Err(Error::dim("input concatenation requires a common output dimension"));
    }
    let (n1, n2) = (g1.n(), g2.n());
    let a = linalg::blocks(&[n1, n2], &[n1, n2], &[&[Some(&g1.a), None], &[None, Some(&g2.a)]]);
    let b = linalg::blocks(
        &[n1, n2],
        &[g1.m(), g2.m()],
        &[&[Some(&g1.b), None], &[None, Some(&g2.b)]],
    );
    let c = linalg::blocks(&[g1.p()], &[n1, n2], &[&[Some(&g1.c), Some(&g2.c)]]);
    let d = linalg::blocks(&[g1.p()], &[g1.m(), g2.m()], &[&[Some(&g1.d), Some(&g2.d)]]);
    StateSpace::new(a, b, c, d, g1.ts)
}

/// Block-diagonal append `diag(g1, g2)`.
pub fn append(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    check_ts(g1, g2)?;
    let (n1, n2) = (g1.n(), g2.n());
    let a = linalg::blocks(&[n1, n2], &[n1, n2], &[&[Some(&g1.a), None], &[None, Some(&g2.a)]]);
    let b = linalg::blocks(
        &[n1, n2],
        &[g1.m(), g2.m()],
        &[&[Some(&g1.b), None], &[None, Some(&g2.b)]],
    );
    let c = linalg::blocks(
        &[g1.p(), g2.p()],
        &[n1, n2],
        &[&[Some(&g1.c), None], &[None, Some(&g2.c)]],
    );
    let d = linalg::blocks(
        &[g1.p(), g2.p()],
        &[g1.m(), g2.m()],
        &[&[Some(&g1.d), None], &[None, Some(&g2.d)]],
    );
    StateSpace::new(a, b, c, d, g1.ts)
}

/// `true` iff the spectral radius of `a` is below `1 - 1e-12`.
pub fn is_schur(a: &Mat) -> bool {
    is_schur_checked(a).unwrap_or(false)
}

fn is_schur_checked(a: &Mat) -> Result<bool> {
    Ok(linalg::spectral_radius(a)? < 1.0 - SCHUR_MARGIN)
}

/// `n` logarithmically spaced frequencies in `(0, pi/Ts]` (rad/s), ending at Nyquist.
pub fn freq_grid(ts: f64, n: usize) -> Vec<f64> {
    let wmax = std::f64::consts::PI / ts;
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![wmax];
    }
    let lo = (wmax * 1e-4).ln();
    let hi = wmax.ln();
    (0..n)
        .map(|i| {
            if i == n - 1 {
                wmax
            } else {
                (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Default verification grid size.
pub const GRID_POINTS: usize = 512;

/// Maximum over a grid of the Frobenius norm of `g1(w) - g2(w)`.
pub fn max_grid_deviation(g1: &StateSpace, g2: &StateSpace, grid: &[f64]) -> Result<f64> {
    if g1.p() != g2.p() || g1.m() != g2.m() {
        return Err(Error::dim("grid comparison requires equal dimensions"));
    }
    let mut worst = 0.0f64;
    for &w in grid {
        let diff = g1.freq_response(w)? - g2.freq_response(w)?;
        worst = worst.max(diff.norm());
    }
    Ok(worst)
}

/// Maximum over a grid of the Frobenius distance of `g(w)` from a constant matrix.
pub fn max_grid_distance_to(g: &StateSpace, target: &Mat, grid: &[f64]) -> Result<f64> {
    let t = linalg::to_complex(target);
    let mut worst = 0.0f64;
    for &w in grid {
        worst = worst.max((g.freq_response(w)? - &t).norm());
    }
    Ok(worst)
}

/// Process and measurement noise covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma_w: Mat,
    pub sigma_nu: Mat,
}

impl NoiseSpec {
    pub fn new(sigma_w: Mat, sigma_nu: Mat) -> Result<Self> {
        let spec = NoiseSpec { sigma_w, sigma_nu };
        spec.validate()?;
        Ok(spec)
    }

    /// `sw * I_n` and `snu * I_p`.
    pub fn isotropic(n: usize, p: usize, sw: f64, snu: f64) -> Result<Self> {
        Self::new(Mat::identity(n, n) * sw, Mat::identity(p, p) * snu)
    }

    /// Zero covariances; valid for simulation but not for filter design.
    pub fn zero(n: usize, p: usize) -> Self {
        NoiseSpec {
            sigma_w: Mat::zeros(n, n),
            sigma_nu: Mat::zeros(p, p),
        }
    }

    /// Design check: `Sigma_w` PSD and `Sigma_nu` PD.
    pub fn validate(&self) -> Result<()> {
        self.check(true)
    }

    /// Simulation check: both covariances PSD.
    pub fn validate_psd(&self) -> Result<()> {
        self.check(false)
    }

    fn check(&self, nu_strict: bool) -> Result<()> {
        for (name, m, strict) in [("Sigma_w", &self.sigma_w, false), ("Sigma_nu", &self.sigma_nu, nu_strict)] {
            if m.nrows() != m.ncols() {
                return Err(Error::dim(format!("{name} must be square")));
            }
            let scale = m.amax().max(1.0);
            if linalg::asymmetry(m) > 1e-12 * scale {
                return Err(Error::invalid(format!("{name} is not symmetric")));
            }
            if m.nrows() > 0 {
                let (lo, _) = linalg::sym_extreme_eigenvalues(m);
                if strict && lo <= 0.0 {
                    return Err(Error::invalid(format!("{name} must be positive definite")));
                }
                if lo < -1e-12 * scale {
                    return Err(Error::invalid(format!("{name} must be positive semidefinite")));
                }
            }
        }
        Ok(())
    }
}

/// Result of a Riccati-based gain design.
#[derive(Clone, Debug)]
pub struct GainReport {
    /// `L` (n x p) for the Kalman design, `F` (m x n) for the LQ design.
    pub gain: Mat,
    /// Stabilizing Riccati solution.
    pub p: Mat,
    /// Innovation covariance `C P C^T + Sigma_nu` (Kalman design only).
    pub innovation_cov: Option<Mat>,
    /// Spectral radius of `A - L C` or `A + B F`.
    pub spectral_radius: f64,
}

/// Uniformly sampled vector-valued signal starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    ts: f64,
    dim: usize,
    samples: Vec<Vector>,
}

impl Signal {
    pub fn new(ts: f64, dim: usize, samples: Vec<Vector>) -> Result<Self> {
        if !(ts > 0.0) {
            return Err(Error::invalid("signal sample period must be positive"));
        }
        if let Some(bad) = samples.iter().position(|s| s.len() != dim) {
            return Err(Error::dim(format!("sample {bad} does not have dimension {dim}")));
        }
        Ok(Signal { ts, dim, samples })
    }

    pub fn zeros(ts: f64, dim: usize, len: usize) -> Self {
        Signal {
            ts,
            dim,
            samples: vec![Vector::zeros(dim); len],
        }
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn samples(&self) -> &[Vector] {
        &self.samples
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.ts
    }

    /// Sample-wise vertical concatenation `[self; other]`.
    pub fn stack(&self, other: &Signal) -> Result<Signal> {
        if self.len() != other.len() {
            return Err(Error::dim(format!(
                "signal lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| {
                let mut v = Vector::zeros(a.len() + b.len());
                v.rows_mut(0, a.len()).copy_from(a);
                v.rows_mut(a.len(), b.len()).copy_from(b);
                v
            })
            .collect();
        Signal::new(self.ts, self.dim + other.dim, samples)
    }

    /// Rows `[start, start + len)` of every sample.
    pub fn rows(&self, start: usize, len: usize) -> Signal {
        Signal {
            ts: self.ts,
            dim: len,
            samples: self.samples.iter().map(|s| s.rows(start, len).into_owned()).collect(),
        }
    }

    /// Largest absolute sample entry from index `from` on.
    pub fn max_abs_from(&self, from: usize) -> f64 {
        self.samples
            .iter()
            .skip(from)
            .map(|s| s.amax())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Signal) -> Result<f64> {
        if self.len() != other.len() || self.dim != other.dim {
            return Err(Error::dim("signal shapes differ"));
        }
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max))
    }

    /// Response of `sys` to this signal from zero initial state.
    pub fn filter(&self, sys: &StateSpace) -> Result<Signal> {
        if sys.m() != self.dim {
            return Err(Error::dim(format!(
                "system expects {} inputs, signal has dimension {}",
                sys.m(),
                self.dim
            )));
        }
        Signal::new(self.ts, sys.p(), sys.simulate(&self.samples)?)
    }
}

/// Identity matrix of order `n`.
pub fn eye(n: usize) -> Mat {
    DMatrix::identity(n, n)
}
