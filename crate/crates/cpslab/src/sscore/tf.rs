//! Rational transfer functions in `z` and their state-space realizations.

use serde::{Deserialize, Serialize};

use super::linalg::Mat;
use super::StateSpace;
use crate::error::{Error, Result};

/// SISO transfer function `num(z) / den(z)`, coefficients in descending powers of `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

fn trim_leading(mut v: Vec<f64>) -> Vec<f64> {
    while v.len() > 1 && v[0] == 0.0 {
        v.remove(0);
    }
    v
}

impl Tf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Self {
        Tf { num, den }
    }

    /// Controllable canonical realization.
    pub fn realize(&self, ts: f64) -> Result<StateSpace> {
        if self.num.is_empty() || self.den.is_empty() {
            return Err(Error::invalid("transfer function needs nonempty num and den"));
        }
        if self.num.iter().chain(&self.den).any(|c| !c.is_finite()) {
            return Err(Error::invalid("transfer function has non-finite coefficients"));
        }
        let den = trim_leading(self.den.clone());
        if den[0] == 0.0 {
            return Err(Error::invalid("denominator is identically zero"));
        }
        let num = trim_leading(self.num.clone());
        let n = den.len() - 1;
        if num.len() > den.len() {
            return Err(Error::invalid(format!(
                "improper transfer function: numerator degree {} exceeds denominator degree {}",
                num.len() - 1,
                n
            )));
        }
        let lead = den[0];
        let a_coef: Vec<f64> = den.iter().map(|c| c / lead).collect();
        let mut b_coef = vec![0.0; n + 1];
        let off = n + 1 - num.len();
        for (i, c) in num.iter().enumerate() {
            b_coef[off + i] = c / lead;
        }
        let d0 = b_coef[0];
        let mut a = Mat::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -a_coef[j + 1];
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = Mat::zeros(n, 1);
        if n > 0 {
            b[(0, 0)] = 1.0;
        }
        let mut c = Mat::zeros(1, n);
        for j in 0..n {
            c[(0, j)] = b_coef[j + 1] - d0 * a_coef[j + 1];
        }
        StateSpace::new(a, b, c, Mat::from_element(1, 1, d0), ts)
    }
}

/// Matrix of SISO entries, `entries[i][j]` maps input `j` to output `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfMatrix {
    pub entries: Vec<Vec<Tf>>,
}

impl TfMatrix {
    /// Diagonal matrix with the given entries.
    pub fn diag(entries: Vec<Tf>) -> Self {
        let k = entries.len();
        let rows = entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                (0..k)
                    .map(|j| if i == j { e.clone() } else { Tf::new(vec![0.0], vec![1.0]) })
                    .collect()
            })
            .collect();
        TfMatrix { entries: rows }
    }

    /// Entry-by-entry realization; zero and static entries add no states.
    pub fn realize(&self, ts: f64) -> Result<StateSpace> {
        let p = self.entries.len();
        if p == 0 {
            return Err(Error::invalid("transfer matrix has no rows"));
        }
        let m = self.entries[0].len();
        if m == 0 || self.entries.iter().any(|r| r.len() != m) {
            return Err(Error::dim("transfer matrix rows must have equal nonzero length"));
        }
        let mut parts = Vec::new();
        for (i, row) in self.entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                parts.push((i, j, e.realize(ts)?));
            }
        }
        let n: usize = parts.iter().map(|(_, _, s)| s.n()).sum();
        let mut a = Mat::zeros(n, n);
        let mut b = Mat::zeros(n, m);
        let mut c = Mat::zeros(p, n);
        let mut d = Mat::zeros(p, m);
        let mut off = 0;
        for (i, j, s) in &parts {
            let k = s.n();
            a.view_mut((off, off), (k, k)).copy_from(s.a());
            b.view_mut((off, *j), (k, 1)).copy_from(s.b());
            c.view_mut((*i, off), (1, k)).copy_from(s.c());
            d[(*i, *j)] = s.d()[(0, 0)];
            off += k;
        }
        StateSpace::new(a, b, c, d, ts)
    }
}

/// Matrix from nested rows; `cols` fixes the width so empty row lists keep their shape.
fn rows_to_mat(rows: &[Vec<f64>], cols: Option<usize>) -> Result<Mat> {
    let m = super::linalg::mat_from_rows(rows)?;
    match cols {
        Some(c) if rows.is_empty() => Ok(Mat::zeros(0, c)),
        Some(c) if m.ncols() != c => Err(Error::dim(format!("matrix must have {c} columns, found {}", m.ncols()))),
        _ => Ok(m),
    }
}

/// Serializable description of an LTI block, realized at a given sample period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    /// Static gain.
    Gain(Vec<Vec<f64>>),
    /// Diagonal transfer matrix.
    Diag(Vec<Tf>),
    /// Full transfer matrix.
    Tf(TfMatrix),
    /// State-space quadruple.
    Ss {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
    },
}

impl SystemSpec {
    pub fn realize(&self, ts: f64) -> Result<StateSpace> {
        match self {
            SystemSpec::Gain(g) => StateSpace::gain(rows_to_mat(g, None)?, ts),
            SystemSpec::Diag(entries) => TfMatrix::diag(entries.clone()).realize(ts),
            SystemSpec::Tf(t) => t.realize(ts),
            SystemSpec::Ss { a, b, c, d } => {
                let n = a.len();
                let dm = rows_to_mat(d, None)?;
                StateSpace::new(
                    rows_to_mat(a, Some(n))?,
                    rows_to_mat(b, Some(dm.ncols()))?,
                    rows_to_mat(c, Some(n))?,
                    dm,
                    ts,
                )
            }
        }
    }

    /// Exact state-space description of `sys`.
    pub fn from_state_space(sys: &StateSpace) -> Self {
        SystemSpec::Ss {
            a: super::linalg::mat_to_rows(sys.a()),
            b: super::linalg::mat_to_rows(sys.b()),
            c: super::linalg::mat_to_rows(sys.c()),
            d: super::linalg::mat_to_rows(sys.d()),
        }
    }
}
