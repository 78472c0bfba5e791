//! Three-wheel omnidirectional robot used by the built-in presets.
//!
//! Inputs are the three motor set-points, outputs the body velocities, sampled at 10 Hz.

use crate::error::Result;
use crate::factory::FactorGains;
use crate::sscore::{kalman_gain, lq_gain, Mat, NoiseSpec, StateSpace, Tf, TfMatrix};

/// Sampling period in seconds.
pub const TS: f64 = 0.1;
/// Default process and measurement noise variance.
pub const NOISE_VAR: f64 = 1e-6;

fn rows(r: &[[f64; 3]; 3]) -> Mat {
    Mat::from_fn(3, 3, |i, j| r[i][j])
}

pub fn a_f() -> Mat {
    rows(&[[0.428, 0.020, 0.0001], [0.026, 0.419, 0.0037], [0.284, -0.09, 0.2922]])
}

pub fn b_f() -> Mat {
    rows(&[[-0.685, 0.025, 0.655], [0.406, -0.803, 0.344], [4.012, 3.494, 3.346]]) * 1e-4
}

/// `(A_f, B_f, I, 0)`.
pub fn model() -> Result<StateSpace> {
    StateSpace::new(a_f(), b_f(), Mat::identity(3, 3), Mat::zeros(3, 3), TS)
}

pub fn noise() -> Result<NoiseSpec> {
    NoiseSpec::isotropic(3, 3, NOISE_VAR, NOISE_VAR)
}

/// LQ state feedback with identity weights and the Kalman observer gain.
pub fn gains(model: &StateSpace, noise: &NoiseSpec) -> Result<FactorGains> {
    let f = lq_gain(model, &Mat::identity(3, 3), &Mat::identity(3, 3))?.gain;
    let l = kalman_gain(model, noise)?.gain;
    Ok(FactorGains::new(f, l))
}

/// Reference pre-filter gain mapping velocity targets to motor set-points.
pub fn q_v_gain() -> Mat {
    rows(&[
        [-4257.4943, 2463.2315, 662.2074],
        [10.9463, -4940.2157, 664.6608],
        [4284.4037, 2462.1782, 663.4313],
    ])
}

pub fn q_v() -> Result<StateSpace> {
    StateSpace::gain(q_v_gain(), TS)
}

/// `diag(1/(z - 0.1))`.
pub fn q_r1() -> Result<StateSpace> {
    TfMatrix::diag(vec![Tf::new(vec![1.0], vec![1.0, -0.1]); 3]).realize(TS)
}

/// `scale (z + 0.1)^{-1} diag(z + 0.4, z + 0.3, z + 0.2)`; the nominal scale is -0.15.
pub fn q_r2_scaled(scale: f64) -> Result<StateSpace> {
    let entries = [0.4, 0.3, 0.2]
        .iter()
        .map(|c| Tf::new(vec![scale, scale * c], vec![1.0, 0.1]))
        .collect();
    TfMatrix::diag(entries).realize(TS)
}

pub fn q_r2() -> Result<StateSpace> {
    q_r2_scaled(-0.15)
}

/// `diag(10 (z + 0.1)/(z + c))` for `c = 0.4, 0.3, 0.2`.
pub fn q_umc() -> Result<StateSpace> {
    let entries = [0.4, 0.3, 0.2]
        .iter()
        .map(|c| Tf::new(vec![10.0, 1.0], vec![1.0, *c]))
        .collect();
    TfMatrix::diag(entries).realize(TS)
}

/// Performance filter `[0.05 I, I]` on `[u; y]`.
pub fn psi() -> Result<StateSpace> {
    let mut d = Mat::zeros(3, 6);
    d.view_mut((0, 0), (3, 3)).copy_from(&(Mat::identity(3, 3) * 0.05));
    d.view_mut((0, 3), (3, 3)).copy_from(&Mat::identity(3, 3));
    StateSpace::gain(d, TS)
}

/// Velocity targets as plain rows, convenient for configs.
pub fn default_targets() -> Vec<(f64, [f64; 3])> {
    vec![(0.0, [0.1, 0.0, 0.0]), (30.0, [0.1, 0.05, 0.1])]
}
