//! Communication-channel attacks: additive and multiplicative injection,
//! covert and feedback-stealthy constructions, and closed-form predictors of
//! the attacked loop used as simulation oracles.
//!
//! Two payloads cross the network each step. The plant-bound payload is `u_MC`;
//! the MC-bound payload is the fused residual `r_yu` in the modified
//! configuration and the measured output `y` in the traditional one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factory::BezoutFactors;
use crate::mcstation::{theta_gain_system, McConfig};
use crate::sscore::{linalg, series_connect, LtiFilter, Mat, StateSpace, SystemSpec, Vector};
use crate::stats::{self, SimRng};

/// RNG stream carrying random attack profiles.
pub const ATTACK_STREAM: u64 = 2;

/// Steps `[start, end)` during which an attack acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("attack window [{start}, {end}) is reversed")));
        }
        Ok(Window { start, end })
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.start..self.end).contains(&k)
    }
}

/// One summand of an attack signal, indexed by the step `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileTerm {
    Constant { value: Vec<f64> },
    /// `amplitude * sin(omega k + phase)`, `omega` in radians per step.
    Sine {
        amplitude: Vec<f64>,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Independent draws `N(mean_i, variance_i)` each step.
    Gaussian { mean: Vec<f64>, variance: Vec<f64> },
}

impl ProfileTerm {
    fn dim(&self) -> usize {
        match self {
            ProfileTerm::Constant { value } => value.len(),
            ProfileTerm::Sine { amplitude, .. } => amplitude.len(),
            ProfileTerm::Gaussian { mean, .. } => mean.len(),
        }
    }
}

/// Attack signal as a sum of terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile {
    pub terms: Vec<ProfileTerm>,
}

impl Profile {
    pub fn constant(value: &[f64]) -> Self {
        Profile {
            terms: vec![ProfileTerm::Constant { value: value.to_vec() }],
        }
    }

    pub fn sine(amplitude: &[f64], omega: f64) -> Self {
        Profile {
            terms: vec![ProfileTerm::Sine {
                amplitude: amplitude.to_vec(),
                omega,
                phase: 0.0,
            }],
        }
    }

    pub fn gaussian(mean: &[f64], variance: &[f64]) -> Self {
        Profile {
            terms: vec![ProfileTerm::Gaussian {
                mean: mean.to_vec(),
                variance: variance.to_vec(),
            }],
        }
    }

    pub fn plus(mut self, other: Profile) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for t in &self.terms {
            if t.dim() != dim {
                return Err(Error::dim(format!("attack profile term has dimension {}, expected {dim}", t.dim())));
            }
            let finite = match t {
                ProfileTerm::Constant { value } => value.iter().all(|x| x.is_finite()),
                ProfileTerm::Sine { amplitude, omega, phase } => {
                    amplitude.iter().all(|x| x.is_finite()) && omega.is_finite() && phase.is_finite()
                }
                ProfileTerm::Gaussian { mean, variance } => {
                    if variance.len() != mean.len() || variance.iter().any(|v| !(*v >= 0.0)) {
                        return Err(Error::invalid("Gaussian attack variances must be nonnegative, one per channel"));
                    }
                    mean.iter().chain(variance).all(|x| x.is_finite())
                }
            };
            if !finite {
                return Err(Error::invalid("attack profile has non-finite parameters"));
            }
        }
        Ok(())
    }

    /// Number of standard normal draws consumed per step.
    pub fn draws(&self) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                ProfileTerm::Gaussian { mean, .. } => mean.len(),
                _ => 0,
            })
            .sum()
    }

    /// Value at step `k` using the standard normals `z` (length [`draws`](Self::draws)).
    pub fn value(&self, k: usize, dim: usize, z: &[f64]) -> Vector {
        let mut out = Vector::zeros(dim);
        let mut used = 0;
        for t in &self.terms {
            match t {
                ProfileTerm::Constant { value } => out += Vector::from_column_slice(value),
                ProfileTerm::Sine { amplitude, omega, phase } => {
                    let s = (omega * k as f64 + phase).sin();
                    out += Vector::from_column_slice(amplitude) * s;
                }
                ProfileTerm::Gaussian { mean, variance } => {
                    for i in 0..mean.len() {
                        out[i] += mean[i] + variance[i].sqrt() * z[used + i];
                    }
                    used += mean.len();
                }
            }
        }
        out
    }
}

/// Where the MC-bound payload comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLayout {
    /// The plant transmits `r_yu`.
    Modified,
    /// The plant transmits `y`.
    Traditional,
}

/// Channel direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToPlant,
    ToMc,
}

/// Orthogonal factor `U` of the stealthy scaling.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orthogonal {
    #[default]
    Identity,
    /// Haar-distributed draw from the QR of a seeded Gaussian matrix.
    Random { seed: u64 },
    Given(Vec<Vec<f64>>),
}

impl Orthogonal {
    pub fn build(&self, dim: usize) -> Result<Mat> {
        let u = match self {
            Orthogonal::Identity => Mat::identity(dim, dim),
            Orthogonal::Random { seed } => random_orthogonal(dim, *seed),
            Orthogonal::Given(rows) => linalg::mat_from_rows(rows)?,
        };
        if u.shape() != (dim, dim) {
            return Err(Error::dim(format!("orthogonal factor must be {dim}x{dim}")));
        }
        if (&u * u.transpose() - Mat::identity(dim, dim)).amax() > 1e-10 {
            return Err(Error::invalid("U U^T differs from I by more than 1e-10"));
        }
        Ok(u)
    }
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with the
/// sign convention that makes the distribution uniform.
pub fn random_orthogonal(dim: usize, seed: u64) -> Mat {
    let mut rng = stats::rng_stream(seed, ATTACK_STREAM);
    let g = Mat::from_iterator(dim, dim, stats::standard_normal(&mut rng, dim * dim).iter().copied());
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Attack operator `Pi_a` acting on `r_yu - zeta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StealthOperator {
    /// `Pi_a = -I`, needs no model of the residual.
    NegIdentity,
    /// Static `Pi_a` with `Pi_a Sigma Pi_a^T = Sigma`.
    Static(Vec<Vec<f64>>),
    /// `Pi_a = Xi Pi` with `Pi` a Kalman filter for the model `(A_pi, C_pi)`.
    Kalman {
        a_pi: Vec<Vec<f64>>,
        c_pi: Vec<Vec<f64>>,
        /// Initial `P(0|-1)`, identity by default.
        #[serde(default)]
        p0: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        u: Orthogonal,
    },
}

/// Source of the attacker's moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StealthStats {
    Given { zeta: Vec<f64>, sigma: Vec<Vec<f64>> },
    /// Estimate from the `samples` MC-bound payloads preceding the window.
    Learn { samples: usize },
}

/// Attack variant and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AttackVariant {
    /// Additive injection; `a_ryu` applies in the modified layout, `a_y` in the traditional one.
    Additive {
        #[serde(default)]
        a_umc: Option<Profile>,
        #[serde(default)]
        a_ryu: Option<Profile>,
        #[serde(default)]
        a_y: Option<Profile>,
    },
    /// `[a_uMC; a_out] = Pi [u_MC; out] + [eps_u; eps_y]` with `out` the MC-bound payload.
    Multiplicative {
        pi: SystemSpec,
        #[serde(default)]
        eps_u: Option<Profile>,
        #[serde(default)]
        eps_y: Option<Profile>,
    },
    /// `a_uMC` plus the compensation `a_ryu = -Q_r2 a_uMC`; `q_r2` is the attacker's copy.
    Covert {
        a_umc: Profile,
        #[serde(default)]
        q_r2: Option<SystemSpec>,
    },
    /// `r_yu^a = Pi_a (r_yu - zeta^) + zeta^`.
    FeedbackStealth { pi_a: StealthOperator, stats: StealthStats },
}

/// An attack with its activation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub window: Window,
    #[serde(flatten)]
    pub variant: AttackVariant,
}

impl AttackSpec {
    pub fn validate(&self, layout: ChannelLayout, m: usize, p: usize, ts: f64) -> Result<()> {
        match &self.variant {
            AttackVariant::Additive { a_umc, a_ryu, a_y } => {
                if let Some(a) = a_umc {
                    a.validate(m)?;
                }
                match (layout, a_ryu, a_y) {
                    (ChannelLayout::Modified, _, Some(_)) => {
                        return Err(Error::invalid("a_y has no channel in the modified configuration; use a_ryu"))
                    }
                    (ChannelLayout::Traditional, Some(_), _) => {
                        return Err(Error::invalid("a_ryu has no channel in the traditional configuration; use a_y"))
                    }
                    _ => {}
                }
                for a in [a_ryu, a_y].into_iter().flatten() {
                    a.validate(p)?;
                }
            }
            AttackVariant::Multiplicative { pi, eps_u, eps_y } => {
                let pi = pi.realize(ts)?;
                check_multiplicative(&pi, m, p)?;
                if let Some(e) = eps_u {
                    e.validate(m)?;
                }
                if let Some(e) = eps_y {
                    e.validate(p)?;
                }
            }
            AttackVariant::Covert { a_umc, q_r2 } => {
                a_umc.validate(m)?;
                if layout != ChannelLayout::Modified {
                    return Err(Error::invalid("covert compensation needs the modified configuration"));
                }
                let q = q_r2
                    .as_ref()
                    .ok_or_else(|| Error::invalid("covert attack lacks the attacker's copy of Q_r2"))?
                    .realize(ts)?;
                if q.shape() != (p, m) {
                    return Err(Error::dim("attacker's Q_r2 must be p x m"));
                }
            }
            AttackVariant::FeedbackStealth { pi_a, stats } => {
                if layout != ChannelLayout::Modified {
                    return Err(Error::invalid("feedback-stealthy attacks act on r_yu"));
                }
                match stats {
                    StealthStats::Learn { samples } => {
                        if *samples < 10 * p {
                            return Err(Error::invalid(format!(
                                "learning needs at least {} samples, got {samples}",
                                10 * p
                            )));
                        }
                        if self.window.start < *samples {
                            return Err(Error::invalid("learning period must end before the attack window opens"));
                        }
                    }
                    StealthStats::Given { zeta, sigma } => {
                        FeedbackStealthDesign::new(pi_a, Vector::from_column_slice(zeta), linalg::mat_from_rows(sigma)?)?;
                    }
                }
                if let StealthOperator::Kalman { c_pi, .. } = pi_a {
                    if c_pi.len() != p {
                        return Err(Error::dim("C_pi must have one row per residual channel"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_multiplicative(pi: &StateSpace, m: usize, p: usize) -> Result<()> {
    if pi.shape() != (m + p, m + p) {
        return Err(Error::dim(format!("multiplicative operator must be {0}x{0}", m + p)));
    }
    if !pi.is_stable()? {
        return Err(Error::invalid("multiplicative operator must be stable"));
    }
    // Static part of I + [I 0; 0 0] Pi.
    let mut bar = Mat::identity(m + p, m + p);
    let top = bar.rows(0, m) + pi.d().rows(0, m);
    bar.rows_mut(0, m).copy_from(&top);
    if linalg::min_singular_value(&bar) < 1e-10 * linalg::max_singular_value(&bar).max(1.0) {
        return Err(Error::invalid("static part of I + [I 0; 0 0] Pi is not invertible"));
    }
    Ok(())
}

/// Memoryless channel map for additive attacks. Stateful variants need an [`AttackRuntime`].
pub fn channel_apply(
    spec: &AttackSpec,
    layout: ChannelLayout,
    direction: Direction,
    payload: &Vector,
    k: usize,
    rng: &mut SimRng,
) -> Result<Vector> {
    let AttackVariant::Additive { a_umc, a_ryu, a_y } = &spec.variant else {
        return Err(Error::invalid("only additive attacks act memorylessly on a single channel"));
    };
    if !spec.window.contains(k) {
        return Ok(payload.clone());
    }
    let profile = match (direction, layout) {
        (Direction::ToPlant, _) => a_umc,
        (Direction::ToMc, ChannelLayout::Modified) => a_ryu,
        (Direction::ToMc, ChannelLayout::Traditional) => a_y,
    };
    Ok(match profile {
        Some(a) => {
            let z = stats::standard_normal(rng, a.draws());
            payload + a.value(k, payload.len(), z.as_slice())
        }
        None => payload.clone(),
    })
}

/// Covert pair for the configured `Q_r2`: the attacker compensates `a_uMC` in `r_yu`.
pub fn covert_attack_gen(cfg: &McConfig, a_umc: Profile, window: Window) -> AttackSpec {
    AttackSpec {
        window,
        variant: AttackVariant::Covert {
            a_umc,
            q_r2: Some(SystemSpec::from_state_space(&cfg.q_r2)),
        },
    }
}

/// Sample mean and maximum-likelihood covariance of the last `n` frames.
pub fn estimate_steady_stats(frames: &[Vector], n: usize) -> Result<(Vector, Mat)> {
    let dim = frames.first().map_or(0, |f| f.len());
    if n < 10 * dim.max(1) {
        return Err(Error::invalid(format!("need at least {} samples, got {n}", 10 * dim.max(1))));
    }
    if frames.len() < n {
        return Err(Error::invalid(format!("only {} frames available, {n} requested", frames.len())));
    }
    let tail = &frames[frames.len() - n..];
    if tail.iter().any(|f| f.len() != dim) {
        return Err(Error::dim("frames have inconsistent dimensions"));
    }
    let mean = tail.iter().fold(Vector::zeros(dim), |acc, f| acc + f) / n as f64;
    let mut cov = Mat::zeros(dim, dim);
    for f in tail {
        let d = f - &mean;
        cov += &d * d.transpose();
    }
    Ok((mean, cov / n as f64))
}

/// Running mean and scatter of a vector stream.
#[derive(Clone, Debug)]
struct Moments {
    n: usize,
    mean: Vector,
    m2: Mat,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            n: 0,
            mean: Vector::zeros(dim),
            m2: Mat::zeros(dim, dim),
        }
    }

    fn push(&mut self, x: &Vector) {
        self.n += 1;
        let d = x - &self.mean;
        self.mean += &d / self.n as f64;
        self.m2 += &d * (x - &self.mean).transpose();
    }

    fn estimate(&self) -> (Vector, Mat) {
        (self.mean.clone(), linalg::symmetrize(&(&self.m2 / self.n as f64)))
    }
}

#[derive(Clone, Debug)]
enum ResolvedOperator {
    Static(Mat),
    Kalman {
        a: Mat,
        c: Mat,
        u: Mat,
        x: Vector,
        p: Mat,
    },
}

/// Feedback-stealthy transformation with its Kalman recursion state.
#[derive(Clone, Debug)]
pub struct FeedbackStealthDesign {
    pub zeta: Vector,
    pub sigma: Mat,
    sigma_sqrt: Mat,
    op: ResolvedOperator,
}

impl FeedbackStealthDesign {
    pub fn new(op: &StealthOperator, zeta: Vector, sigma: Mat) -> Result<Self> {
        let p = zeta.len();
        if sigma.shape() != (p, p) {
            return Err(Error::dim("Sigma^ must match the dimension of zeta^"));
        }
        let sigma = linalg::symmetrize(&sigma);
        let sigma_sqrt = linalg::sqrtm_psd(&sigma, "Sigma^")?;
        let op = match op {
            StealthOperator::NegIdentity => ResolvedOperator::Static(-Mat::identity(p, p)),
            StealthOperator::Static(rows) => {
                let pa = linalg::mat_from_rows(rows)?;
                if pa.shape() != (p, p) {
                    return Err(Error::dim("Pi_a must be square in the residual dimension"));
                }
                let drift = (&pa * &sigma * pa.transpose() - &sigma).norm();
                if drift > 1e-8 * sigma.norm().max(f64::MIN_POSITIVE) {
                    return Err(Error::invalid("static Pi_a does not preserve Sigma^"));
                }
                ResolvedOperator::Static(pa)
            }
            StealthOperator::Kalman { a_pi, c_pi, p0, u } => {
                let a = linalg::mat_from_rows(a_pi)?;
                let c = linalg::mat_from_rows(c_pi)?;
                let n = a.nrows();
                if a.ncols() != n || c.shape() != (p, n) {
                    return Err(Error::dim("Kalman model (A_pi, C_pi) has inconsistent dimensions"));
                }
                if linalg::min_singular_value(&sigma) <= 1e-14 * linalg::max_singular_value(&sigma) || sigma.norm() == 0.0 {
                    return Err(Error::numerical("estimated residual covariance is singular"));
                }
                let p0 = match p0 {
                    Some(r) => linalg::mat_from_rows(r)?,
                    None => Mat::identity(n, n),
                };
                if p0.shape() != (n, n) {
                    return Err(Error::dim("P(0|-1) must match A_pi"));
                }
                ResolvedOperator::Kalman {
                    a,
                    c,
                    u: u.build(p)?,
                    x: Vector::zeros(n),
                    p: p0,
                }
            }
        };
        Ok(FeedbackStealthDesign {
            zeta,
            sigma,
            sigma_sqrt,
            op,
        })
    }

    /// `Sigma_Delta(k) = C P C^T + Sigma^` of the current recursion step.
    pub fn innovation_cov(&self) -> Option<Mat> {
        match &self.op {
            ResolvedOperator::Kalman { c, p, .. } => Some(c * p * c.transpose() + &self.sigma),
            ResolvedOperator::Static(_) => None,
        }
    }

    /// Current `Xi = Sigma^{1/2} U Sigma_Delta^{-1/2}`.
    pub fn xi(&self) -> Result<Option<Mat>> {
        match (&self.op, self.innovation_cov()) {
            (ResolvedOperator::Kalman { u, .. }, Some(s)) => {
                Ok(Some(&self.sigma_sqrt * u * linalg::inv_sqrtm_pd(&s, "Sigma_Delta")?))
            }
            _ => Ok(None),
        }
    }

    fn innovation(&self, r: &Vector) -> Vector {
        match &self.op {
            ResolvedOperator::Kalman { c, x, .. } => r - &self.zeta - c * x,
            ResolvedOperator::Static(_) => r - &self.zeta,
        }
    }

    /// Attacked residual for the received `r`, without advancing the recursion.
    pub fn apply(&self, r: &Vector) -> Result<Vector> {
        let delta = self.innovation(r);
        match &self.op {
            ResolvedOperator::Static(pa) => Ok(pa * delta + &self.zeta),
            ResolvedOperator::Kalman { .. } => {
                let xi = self.xi()?.expect("Kalman operator has Xi");
                Ok(xi * delta + &self.zeta)
            }
        }
    }

    /// Advance the Kalman recursion with the received `r`.
    pub fn advance(&mut self, r: &Vector) -> Result<()> {
        let delta = self.innovation(r);
        let s = self.innovation_cov();
        if let (ResolvedOperator::Kalman { a, c, x, p, .. }, Some(s)) = (&mut self.op, s) {
            let k = &*a * &*p * c.transpose() * linalg::inverse(&s, "Sigma_Delta")?;
            *x = &*a * &*x + &k * delta;
            *p = linalg::symmetrize(&(&*a * &*p * a.transpose() - &k * &s * k.transpose()));
        }
        Ok(())
    }
}

/// Open-loop transformation of a residual stream: apply then advance per frame.
pub fn feedback_stealth_gen(design: &mut FeedbackStealthDesign, frames: &[Vector]) -> Result<Vec<Vector>> {
    frames
        .iter()
        .map(|r| {
            let out = design.apply(r)?;
            design.advance(r)?;
            Ok(out)
        })
        .collect()
}

#[derive(Clone, Debug)]
enum StealthPhase {
    Learning(Moments),
    Ready(FeedbackStealthDesign),
}

#[derive(Clone, Debug)]
enum AttackState {
    Additive {
        up: Option<Profile>,
        down: Option<Profile>,
    },
    Multiplicative {
        pi: LtiFilter,
        eps_u: Option<Profile>,
        eps_y: Option<Profile>,
    },
    Covert {
        a_umc: Profile,
        neg_q_r2: LtiFilter,
    },
    Stealth {
        op: StealthOperator,
        learn: Option<usize>,
        phase: StealthPhase,
    },
}

#[derive(Clone, Debug)]
struct ActiveAttack {
    window: Window,
    state: AttackState,
}

impl ActiveAttack {
    fn draws(&self) -> usize {
        match &self.state {
            AttackState::Additive { up, down } => [up, down].into_iter().flatten().map(Profile::draws).sum(),
            AttackState::Multiplicative { eps_u, eps_y, .. } => {
                [eps_u, eps_y].into_iter().flatten().map(Profile::draws).sum()
            }
            AttackState::Covert { a_umc, .. } => a_umc.draws(),
            AttackState::Stealth { .. } => 0,
        }
    }
}

/// Split draws between two optional profiles.
fn two_values(k: usize, a: &Option<Profile>, da: usize, b: &Option<Profile>, db: usize, z: &[f64]) -> (Vector, Vector) {
    let na = a.as_ref().map_or(0, Profile::draws);
    let va = a.as_ref().map_or_else(|| Vector::zeros(da), |p| p.value(k, da, &z[..na]));
    let vb = b.as_ref().map_or_else(|| Vector::zeros(db), |p| p.value(k, db, &z[na..]));
    (va, vb)
}

/// Attack signals actually added to each payload in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AppliedAttack {
    pub k: usize,
    pub to_plant: Vector,
    pub to_mc: Vector,
}

/// Stateful channel attacker applying all configured attacks in list order.
#[derive(Clone, Debug)]
pub struct AttackRuntime {
    layout: ChannelLayout,
    m: usize,
    p: usize,
    attacks: Vec<ActiveAttack>,
    rng: SimRng,
    k: usize,
    draws: Option<Vec<Vec<f64>>>,
}

impl AttackRuntime {
    pub fn new(specs: &[AttackSpec], layout: ChannelLayout, m: usize, p: usize, ts: f64, seed: u64) -> Result<Self> {
        let mut attacks = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            spec.validate(layout, m, p, ts)
                .map_err(|e| Error::invalid(format!("attack {i}: {e}")))?;
            let state = match &spec.variant {
                AttackVariant::Additive { a_umc, a_ryu, a_y } => AttackState::Additive {
                    up: a_umc.clone(),
                    down: match layout {
                        ChannelLayout::Modified => a_ryu.clone(),
                        ChannelLayout::Traditional => a_y.clone(),
                    },
                },
                AttackVariant::Multiplicative { pi, eps_u, eps_y } => AttackState::Multiplicative {
                    pi: LtiFilter::new(pi.realize(ts)?),
                    eps_u: eps_u.clone(),
                    eps_y: eps_y.clone(),
                },
                AttackVariant::Covert { a_umc, q_r2 } => AttackState::Covert {
                    a_umc: a_umc.clone(),
                    neg_q_r2: LtiFilter::new(q_r2.as_ref().expect("validated").realize(ts)?.neg()),
                },
                AttackVariant::FeedbackStealth { pi_a, stats } => {
                    let (learn, phase) = match stats {
                        StealthStats::Learn { samples } => (Some(*samples), StealthPhase::Learning(Moments::new(p))),
                        StealthStats::Given { zeta, sigma } => (
                            None,
                            StealthPhase::Ready(FeedbackStealthDesign::new(
                                pi_a,
                                Vector::from_column_slice(zeta),
                                linalg::mat_from_rows(sigma)?,
                            )?),
                        ),
                    };
                    AttackState::Stealth {
                        op: pi_a.clone(),
                        learn,
                        phase,
                    }
                }
            };
            attacks.push(ActiveAttack {
                window: spec.window,
                state,
            });
        }
        Ok(AttackRuntime {
            layout,
            m,
            p,
            attacks,
            rng: stats::rng_stream(seed, ATTACK_STREAM),
            k: 0,
            draws: None,
        })
    }

    /// Attack-free channel.
    pub fn none(layout: ChannelLayout, m: usize, p: usize) -> Self {
        AttackRuntime {
            layout,
            m,
            p,
            attacks: Vec::new(),
            rng: stats::rng_stream(0, ATTACK_STREAM),
            k: 0,
            draws: None,
        }
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn is_empty(&self) -> bool {
        self.attacks.is_empty()
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    /// Draw this step's random attack terms. Idempotent within a step.
    pub fn prepare(&mut self) {
        if self.draws.is_some() {
            return;
        }
        let k = self.k;
        let mut draws = Vec::with_capacity(self.attacks.len());
        for at in &self.attacks {
            let n = if at.window.contains(k) { at.draws() } else { 0 };
            draws.push(stats::standard_normal(&mut self.rng, n).as_slice().to_vec());
        }
        self.draws = Some(draws);
    }

    /// Attacked payloads for this step without advancing any state. Call [`prepare`](Self::prepare) first.
    pub fn apply(&self, to_plant: &Vector, to_mc: &Vector) -> Result<(Vector, Vector)> {
        let draws = self
            .draws
            .as_ref()
            .ok_or_else(|| Error::invalid("attack draws not prepared for this step"))?;
        let (mut up, mut down) = (to_plant.clone(), to_mc.clone());
        for (at, z) in self.attacks.iter().zip(draws) {
            (up, down) = self.apply_one(at, z, &up, &down)?;
        }
        Ok((up, down))
    }

    fn apply_one(&self, at: &ActiveAttack, z: &[f64], up: &Vector, down: &Vector) -> Result<(Vector, Vector)> {
        let (k, m, p) = (self.k, self.m, self.p);
        let active = at.window.contains(k);
        match &at.state {
            AttackState::Covert { a_umc, neg_q_r2 } => {
                // The compensation keeps running after the window so that the filtered tail is cancelled too.
                let a = if active { a_umc.value(k, m, z) } else { Vector::zeros(m) };
                Ok((up + &a, down + neg_q_r2.peek(&a)?))
            }
            _ if !active => Ok((up.clone(), down.clone())),
            AttackState::Additive { up: pu, down: pd } => {
                let (au, ad) = two_values(k, pu, m, pd, p, z);
                Ok((up + au, down + ad))
            }
            AttackState::Multiplicative { pi, eps_u, eps_y } => {
                let a = pi.peek(&stack(up, down))?;
                let (eu, ey) = two_values(k, eps_u, m, eps_y, p, z);
                Ok((up + a.rows(0, m) + eu, down + a.rows(m, p) + ey))
            }
            AttackState::Stealth { phase, .. } => match phase {
                StealthPhase::Ready(d) => Ok((up.clone(), d.apply(down)?)),
                StealthPhase::Learning(_) => Err(Error::invalid("stealthy attack window opened before estimation finished")),
            },
        }
    }

    /// Advance every attack with this step's payloads and report what was injected.
    pub fn commit(&mut self, to_plant: &Vector, to_mc: &Vector) -> Result<AppliedAttack> {
        let draws = self
            .draws
            .take()
            .ok_or_else(|| Error::invalid("attack draws not prepared for this step"))?;
        let k = self.k;
        let (mut up, mut down) = (to_plant.clone(), to_mc.clone());
        let mut attacks = std::mem::take(&mut self.attacks);
        let mut result = Ok(());
        for (at, z) in attacks.iter_mut().zip(&draws) {
            let (nu, nd) = match self.apply_one(at, z, &up, &down) {
                Ok(v) => v,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            };
            if let Err(e) = advance(at, k, self.m, z, &up, &down) {
                result = Err(e);
                break;
            }
            (up, down) = (nu, nd);
        }
        self.attacks = attacks;
        result?;
        self.k += 1;
        Ok(AppliedAttack {
            k,
            to_plant: up - to_plant,
            to_mc: down - to_mc,
        })
    }
}

fn advance(at: &mut ActiveAttack, k: usize, m: usize, z: &[f64], up: &Vector, down: &Vector) -> Result<()> {
    let active = at.window.contains(k);
    match &mut at.state {
        AttackState::Additive { .. } => {}
        AttackState::Covert { a_umc, neg_q_r2 } => {
            let a = if active { a_umc.value(k, m, z) } else { Vector::zeros(m) };
            neg_q_r2.step(&a)?;
        }
        AttackState::Multiplicative { pi, .. } => {
            if active {
                pi.step(&stack(up, down))?;
            }
        }
        AttackState::Stealth { op, learn, phase } => {
            let start = at.window.start;
            match phase {
                StealthPhase::Learning(mom) => {
                    let n = learn.expect("learning phase has a sample count");
                    if k + n >= start && k < start {
                        mom.push(down);
                    }
                    if k + 1 == start {
                        let (zeta, sigma) = mom.estimate();
                        *phase = StealthPhase::Ready(FeedbackStealthDesign::new(op, zeta, sigma)?);
                    }
                }
                StealthPhase::Ready(d) => {
                    if active {
                        d.advance(down)?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn stack(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Composite attack signals `eta_a = Q_r2 a_uMC + a_ryu` and `theta_a = Q_uMC a_ryu + a_uMC`.
#[derive(Clone, Debug)]
pub struct AttackAnalysis {
    pub eta_a: Vec<Vector>,
    pub theta_a: Vec<Vector>,
}

/// Evaluate the composite signals along recorded injections from step 0.
pub fn analyze_attack_signals(q_r2: &StateSpace, q_umc: &StateSpace, applied: &[AppliedAttack]) -> Result<AttackAnalysis> {
    let mut f2 = LtiFilter::new(q_r2.clone());
    let mut fu = LtiFilter::new(q_umc.clone());
    let mut eta_a = Vec::with_capacity(applied.len());
    let mut theta_a = Vec::with_capacity(applied.len());
    for a in applied {
        eta_a.push(f2.step(&a.to_plant)? + &a.to_mc);
        theta_a.push(fu.step(&a.to_mc)? + &a.to_plant);
    }
    Ok(AttackAnalysis { eta_a, theta_a })
}

/// Loop structure an attack acts on.
#[derive(Clone, Copy, Debug)]
pub enum LoopModel<'a> {
    Modified {
        q_r1: &'a StateSpace,
        q_r2: &'a StateSpace,
        q_umc: &'a StateSpace,
    },
    /// Observer-form Youla controller with parameter `q` at the MC-station.
    Traditional { q: &'a StateSpace },
}

/// Predicted deviation models of the attacked loop.
#[derive(Clone, Debug)]
pub struct AttackPrediction {
    /// Map from the injected signals to the deviation of `[u; y]`. The input is
    /// `[a_uMC; a_out]` for additive attacks and `a_uMC` alone for covert ones.
    pub attack_to_io: StateSpace,
    /// Map from `r_y` to `[u; y]` in the closed loop.
    pub ry_to_io: StateSpace,
}

/// Closed-form attacked-loop predictors for additive and covert attacks.
pub fn predict_attacked_closed_loop(
    factors: &BezoutFactors,
    model: LoopModel<'_>,
    variant: &AttackVariant,
) -> Result<AttackPrediction> {
    let image = factors.plant_image()?;
    let pred = match model {
        LoopModel::Modified { q_r1, q_r2, q_umc } => {
            let ry_to_io = crate::mcstation::ry_to_io(factors, q_r1, q_r2, q_umc)?;
            let attack_to_io = match variant {
                AttackVariant::Additive { .. } => {
                    // [M; N] (I - Q_uMC Q_r2)^{-1} [I, Q_uMC].
                    let m = q_umc.p();
                    let entry = crate::sscore::concat_inputs(&StateSpace::identity(m, q_umc.ts()), q_umc)?;
                    series_connect(&series_connect(&entry, &theta_gain_system(q_r2, q_umc)?)?, &image)?
                }
                AttackVariant::Covert { .. } => image,
                _ => {
                    return Err(Error::invalid(
                        "closed-form prediction covers additive and covert attacks; validate others by simulation",
                    ))
                }
            };
            AttackPrediction { attack_to_io, ry_to_io }
        }
        LoopModel::Traditional { q } => {
            if !matches!(variant, AttackVariant::Additive { .. }) {
                return Err(Error::invalid("traditional-configuration prediction covers additive attacks"));
            }
            let (attack_to_io, ry_to_io) = traditional_loop(factors, q)?;
            AttackPrediction { attack_to_io, ry_to_io }
        }
    };
    if !pred.attack_to_io.is_stable()? {
        return Err(Error::numerical("assembled attacked loop is unstable"));
    }
    Ok(pred)
}

/// Traditional loop: deviation of `[u; y]` driven by `[a_u; a_y]`, and the nominal
/// `r_y -> [u; y]` map.
fn traditional_loop(factors: &BezoutFactors, q: &StateSpace) -> Result<(StateSpace, StateSpace)> {
    let model = &factors.model;
    let (a, b, c, d, ts) = (model.a(), model.b(), model.c(), model.d(), model.ts());
    let (f, l) = (&factors.gains.f, &factors.gains.l);
    let (n, m, p, nq) = (model.n(), model.m(), model.p(), q.n());
    let (aq, bq, cq, dq) = (q.a(), q.b(), q.c(), q.d());
    let dims = [n, n, nq];
    // State [x; x^; x_Q]; the MC residual is r = C (x - x^) + D a_u + a_y.
    let neg_c = -c;
    let rz = linalg::blocks(&[p], &dims, &[&[Some(c), Some(&neg_c), None]]);
    let ra = linalg::blocks(&[p], &[m, p], &[&[Some(d), Some(&Mat::identity(p, p))]]);
    let uz = linalg::blocks(&[m], &dims, &[&[None, Some(f), Some(cq)]]) + dq * &rz;
    let ua = dq * &ra;
    let sel = linalg::blocks(&[m], &[m, p], &[&[Some(&Mat::identity(m, m)), None]]);
    let u_a = &ua + &sel;
    let plant_rows = linalg::blocks(&[n], &dims, &[&[Some(a), None, None]]) + b * &uz;
    let obs_rows = linalg::blocks(&[n], &dims, &[&[None, Some(a), None]]) + b * &uz + l * &rz;
    let q_rows = linalg::blocks(&[nq], &dims, &[&[None, None, Some(aq)]]) + bq * &rz;
    let big_a = linalg::blocks(
        &[n, n, nq],
        &[2 * n + nq],
        &[&[Some(&plant_rows)], &[Some(&obs_rows)], &[Some(&q_rows)]],
    );
    let b_plant = b * &u_a;
    let b_obs = b * &ua + l * &ra;
    let b_q = bq * &ra;
    let big_b = linalg::blocks(&[n, n, nq], &[m + p], &[&[Some(&b_plant)], &[Some(&b_obs)], &[Some(&b_q)]]);
    let y_rows = linalg::blocks(&[p], &dims, &[&[Some(c), None, None]]) + d * &uz;
    let big_c = linalg::blocks(&[m, p], &[2 * n + nq], &[&[Some(&uz)], &[Some(&y_rows)]]);
    let d_y = d * &u_a;
    let big_d = linalg::blocks(&[m, p], &[m + p], &[&[Some(&u_a)], &[Some(&d_y)]]);
    let attack = StateSpace::new(big_a, big_b, big_c, big_d, ts)?;
    // Nominal Youla loop: [-Y^; X^] + [M; N] Q.
    let ry = crate::sscore::add(&factors.controller_image()?, &series_connect(q, &factors.plant_image()?)?)?;
    Ok((attack, ry))
}
