//! Plant simulation and the embedded plant-side computation: observer, fail-safe
//! feedback, residual generation and fusion, detector-mode extension and
//! moving-target modes.

use crate::error::{Error, Result};
use crate::factory::{self, BezoutFactors, FactorGains, ModeSet};
use crate::sscore::{linalg, LtiFilter, Mat, NoiseSpec, StateSpace, Vector};
use crate::stats::{self, SimRng};

/// RNG stream carrying process and measurement noise.
pub const NOISE_STREAM: u64 = 0;
/// RNG stream carrying random fault profiles.
pub const FAULT_STREAM: u64 = 1;

/// Time course of the fault vector inside its activation window.
#[derive(Clone, Debug, PartialEq)]
pub enum FaultProfile {
    /// `f(k) = value`.
    Constant(Vector),
    /// `f(k) ~ N(mean, cov)`, drawn independently each step.
    Gaussian { mean: Vector, cov: Mat },
}

/// Fault `f` entering as `E_f f` in the state equation and `F_f f` in the output.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultSpec {
    pub e_f: Mat,
    pub f_f: Mat,
    pub profile: FaultProfile,
    /// Active for steps in `[start, end)`.
    pub start: usize,
    pub end: usize,
}

impl FaultSpec {
    pub fn dim(&self) -> usize {
        self.e_f.ncols()
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let q = self.e_f.ncols();
        if self.e_f.nrows() != n || self.f_f.shape() != (p, q) {
            return Err(Error::dim(format!("fault matrices must be {n}x{q} and {p}x{q}")));
        }
        match &self.profile {
            FaultProfile::Constant(v) if v.len() != q => {
                return Err(Error::dim("constant fault value has the wrong length"))
            }
            FaultProfile::Gaussian { mean, cov } if mean.len() != q || cov.shape() != (q, q) => {
                return Err(Error::dim("Gaussian fault moments have the wrong size"))
            }
            _ => {}
        }
        if self.start > self.end {
            return Err(Error::invalid("fault window starts after it ends"));
        }
        Ok(())
    }

    pub fn is_active(&self, k: usize) -> bool {
        (self.start..self.end).contains(&k)
    }
}

/// Fault sampler with its own random stream.
#[derive(Clone, Debug)]
struct FaultSource {
    spec: FaultSpec,
    factor: Option<Mat>,
    rng: SimRng,
}

impl FaultSource {
    fn new(spec: FaultSpec, seed: u64) -> Result<Self> {
        let factor = match &spec.profile {
            FaultProfile::Gaussian { cov, .. } => Some(linalg::psd_factor(cov, "fault covariance")?),
            FaultProfile::Constant(_) => None,
        };
        Ok(FaultSource {
            spec,
            factor,
            rng: stats::rng_stream(seed, FAULT_STREAM),
        })
    }

    fn sample(&mut self, k: usize) -> Vector {
        if !self.spec.is_active(k) {
            return Vector::zeros(self.spec.dim());
        }
        match (&self.spec.profile, &self.factor) {
            (FaultProfile::Constant(v), _) => v.clone(),
            (FaultProfile::Gaussian { mean, .. }, Some(l)) => mean + stats::gaussian(&mut self.rng, l),
            (FaultProfile::Gaussian { mean, .. }, None) => mean.clone(),
        }
    }
}

/// Piecewise-constant target reference `v_bar`, its embedded baseline `v_bar_0`
/// and the pre-filter `Q_v`.
#[derive(Clone, Debug)]
pub struct ReferenceConfig {
    /// `(first step, value)` pairs sorted by step; the first entry applies from step 0.
    pub segments: Vec<(usize, Vector)>,
    pub vbar0: Vector,
    pub q_v: StateSpace,
}

impl ReferenceConfig {
    /// Baseline defaults to the first segment value.
    pub fn new(segments: Vec<(usize, Vector)>, vbar0: Option<Vector>, q_v: StateSpace) -> Result<Self> {
        let mut segments = segments;
        segments.sort_by_key(|s| s.0);
        let first = segments
            .first()
            .ok_or_else(|| Error::invalid("reference needs at least one segment"))?
            .1
            .clone();
        let vbar0 = vbar0.unwrap_or(first);
        let cfg = ReferenceConfig { segments, vbar0, q_v };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Zero reference of dimension `p` with gain `q_v`.
    pub fn zero(q_v: StateSpace) -> Self {
        let d = q_v.m();
        ReferenceConfig {
            segments: vec![(0, Vector::zeros(d))],
            vbar0: Vector::zeros(d),
            q_v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.q_v.m();
        if self.segments.iter().any(|s| s.1.len() != d) || self.vbar0.len() != d {
            return Err(Error::dim(format!("reference values must have dimension {d}")));
        }
        if !self.q_v.is_stable()? {
            return Err(Error::invalid("reference pre-filter Q_v must be stable"));
        }
        Ok(())
    }

    /// `v_bar(k)`.
    pub fn target(&self, k: usize) -> &Vector {
        self.segments
            .iter()
            .take_while(|s| s.0 <= k)
            .last()
            .map_or(&self.segments[0].1, |s| &s.1)
    }
}

/// Physical plant `x+ = Ax + Bu + E_f f + w`, `y = Cx + Du + F_f f + nu` in state coordinates.
#[derive(Clone, Debug)]
pub struct Plant {
    model: StateSpace,
    x: Vector,
    w_factor: Mat,
    nu_factor: Mat,
    rng: SimRng,
    fault: Option<FaultSource>,
}

impl Plant {
    pub fn new(model: StateSpace, noise: &NoiseSpec, fault: Option<FaultSpec>, seed: u64) -> Result<Self> {
        let (n, p) = (model.n(), model.p());
        check_noise(noise, n, p)?;
        if let Some(f) = &fault {
            f.validate(n, p)?;
        }
        Ok(Plant {
            x: Vector::zeros(n),
            w_factor: linalg::psd_factor(&noise.sigma_w, "Sigma_w")?,
            nu_factor: linalg::psd_factor(&noise.sigma_nu, "Sigma_nu")?,
            rng: stats::rng_stream(seed, NOISE_STREAM),
            fault: fault.map(|f| FaultSource::new(f, seed)).transpose()?,
            model,
        })
    }

    pub fn state(&self) -> &Vector {
        &self.x
    }

    /// Advance one step under `u`, returning `y(k)`.
    pub fn plant_step(&mut self, u: &Vector, k: usize) -> Result<Vector> {
        if u.len() != self.model.m() {
            return Err(Error::dim("plant input has the wrong dimension"));
        }
        let w = stats::gaussian(&mut self.rng, &self.w_factor);
        let nu = stats::gaussian(&mut self.rng, &self.nu_factor);
        let (ef, ff) = match &mut self.fault {
            Some(src) => {
                let f = src.sample(k);
                (&src.spec.e_f * &f, &src.spec.f_f * &f)
            }
            None => (Vector::zeros(self.model.n()), Vector::zeros(self.model.p())),
        };
        let y = self.model.c() * &self.x + self.model.d() * u + ff + nu;
        self.x = self.model.a() * &self.x + self.model.b() * u + ef + w;
        Ok(y)
    }
}

fn check_noise(noise: &NoiseSpec, n: usize, p: usize) -> Result<()> {
    noise.validate_psd()?;
    if noise.sigma_w.nrows() != n || noise.sigma_nu.nrows() != p {
        return Err(Error::dim(format!("noise covariances must be {n}x{n} and {p}x{p}")));
    }
    Ok(())
}

/// Everything the plant side needs to run.
#[derive(Clone, Debug)]
pub struct PlantConfig {
    pub model: StateSpace,
    /// Noise actually injected (may be zero).
    pub noise: NoiseSpec,
    /// Covariances assumed by the embedded design; they fix `Sigma_ry`.
    pub design_noise: NoiseSpec,
    pub fault: Option<FaultSpec>,
    pub gains: FactorGains,
    pub q_r1: StateSpace,
    pub q_r2: StateSpace,
    /// Plant-side copy of `Q_uMC`, used only while the extended residual is transmitted.
    pub q_umc: StateSpace,
    /// Performance filter `Psi` acting on `[u; y]`.
    pub psi: Option<StateSpace>,
    pub reference: ReferenceConfig,
    pub modes: Option<ModeSet>,
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let (n, m, p) = (self.model.n(), self.model.m(), self.model.p());
        check_noise(&self.noise, n, p)?;
        check_noise(&self.design_noise, n, p)?;
        self.design_noise.validate()?;
        self.gains.validate(&self.model)?;
        if let Some(f) = &self.fault {
            f.validate(n, p)?;
        }
        let checks = [
            ("Q_r1", &self.q_r1, p, p),
            ("Q_r2", &self.q_r2, p, m),
            ("Q_uMC", &self.q_umc, m, p),
        ];
        for (name, sys, rows, cols) in checks {
            if sys.p() != rows || sys.m() != cols {
                return Err(Error::dim(format!("{name} must be {rows}x{cols}, got {}x{}", sys.p(), sys.m())));
            }
            if !sys.is_stable()? {
                return Err(Error::invalid(format!("{name} must be stable")));
            }
        }
        if let Some(psi) = &self.psi {
            if psi.p() != p || psi.m() != m + p {
                return Err(Error::dim(format!("Psi must be {p}x{}", m + p)));
            }
            if !psi.is_stable()? {
                return Err(Error::invalid("Psi must be stable"));
            }
        }
        self.reference.validate()?;
        if self.reference.q_v.p() != m {
            return Err(Error::dim(format!("Q_v must produce {m} outputs")));
        }
        Ok(())
    }
}

/// Per-step record sent from the plant side.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFrame {
    pub k: usize,
    pub r_y: Vector,
    pub r_u: Vector,
    pub r_yu: Vector,
    /// `Psi [u; y]` while the extended residual is transmitted.
    pub r_pd: Option<Vector>,
    pub u: Vector,
    pub y: Vector,
    /// Active embedded mode, `None` for the base gains.
    pub mode: Option<usize>,
}

/// Filters and observer of one alternative mode, kept running whether active or not.
#[derive(Clone, Debug)]
struct ModeRuntime {
    f: Mat,
    l: Mat,
    xhat: Vector,
    q_i: LtiFilter,
    v_0i: LtiFilter,
    r_0i: LtiFilter,
    v_i0: LtiFilter,
}

/// Tentative step result; nothing is committed until [`PlantRuntime::commit`].
#[derive(Clone, Debug)]
pub struct PlantEval {
    pub frame: ResidualFrame,
    r_y_base: Vector,
    corr_in: Vector,
    psi_in: Option<Vector>,
    mode_inputs: Vec<(Vector, Vector, Vector)>,
}

/// Solve `x = f(x)` for affine `f` on `R^dim`, probing `f` at `0` and the unit vectors.
pub fn solve_affine_fixed_point(dim: usize, f: impl Fn(&Vector) -> Result<Vector>) -> Result<Vector> {
    let mut lp = AffineLoop::default();
    Ok(lp.solve(dim, |x| f(x).map(|y| (y, ())))?.0)
}

/// Relative tolerance on the fixed-point residual `|f(x) - x|`.
const LOOP_TOL: f64 = 1e-11;

/// Solver for algebraic loops `x = f(x)` with affine `f`.
///
/// The factor `(I - G)^{-1}` of the last probe is reused while it still produces a
/// fixed point; otherwise `f` is probed again. Each evaluation returns a context
/// carried out of the solve together with the value.
#[derive(Clone, Debug, Default)]
pub struct AffineLoop {
    inv: Option<Mat>,
}

impl AffineLoop {
    pub fn solve<T>(&mut self, dim: usize, mut f: impl FnMut(&Vector) -> Result<(Vector, T)>) -> Result<(Vector, T)> {
        let (g0, _) = f(&Vector::zeros(dim))?;
        if g0.len() != dim {
            return Err(Error::dim("fixed-point map changes dimension"));
        }
        let converged = |x: &Vector, gx: &Vector| {
            (gx - x).amax() <= LOOP_TOL * (1.0 + x.amax() + g0.amax())
        };
        if let Some(inv) = &self.inv {
            let x = inv * &g0;
            let (gx, ctx) = f(&x)?;
            if converged(&x, &gx) {
                return Ok((x, ctx));
            }
        }
        let mut jac = Mat::zeros(dim, dim);
        for j in 0..dim {
            let mut e = Vector::zeros(dim);
            e[j] = 1.0;
            jac.set_column(j, &(f(&e)?.0 - &g0));
        }
        let lhs = Mat::identity(dim, dim) - jac;
        if linalg::min_singular_value(&lhs) < 1e-12 * linalg::max_singular_value(&lhs).max(1.0) {
            return Err(Error::numerical("algebraic loop is ill-posed"));
        }
        let inv = linalg::inverse(&lhs, "I - G")?;
        let x = &inv * &g0;
        let (gx, ctx) = f(&x)?;
        if !converged(&x, &gx) {
            return Err(Error::numerical("algebraic loop map is not affine"));
        }
        self.inv = Some(inv);
        Ok((x, ctx))
    }
}

/// Plant plus embedded computation, simulated in estimation-error coordinates.
///
/// The true state is `x = x_hat + e`, where `x_hat` is the base observer. The error
/// `e` and the output residual `r_y = C e + F_f f + nu` evolve independently of
/// the applied input, so channel attacks cannot touch `r_y`.
#[derive(Clone, Debug)]
pub struct PlantRuntime {
    cfg: PlantConfig,
    factors: BezoutFactors,
    xh: Vector,
    e: Vector,
    w_factor: Mat,
    nu_factor: Mat,
    rng: SimRng,
    fault: Option<FaultSource>,
    q_r1: LtiFilter,
    q_r2: LtiFilter,
    q_umc: LtiFilter,
    q_v: LtiFilter,
    psi: Option<LtiFilter>,
    modes: Vec<ModeRuntime>,
    pdd_active: bool,
    sigma_ry_inv: Mat,
    sigma_ry: Mat,
    k: usize,
    draw: Option<(Vector, Vector, Vector)>,
    inner: AffineLoop,
}

impl PlantRuntime {
    pub fn new(cfg: PlantConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let factors = factory::build_bezout_factors(&cfg.model, &cfg.gains)?;
        let n = cfg.model.n();
        let design = innovation_covariance(&cfg.model, &cfg.design_noise, &cfg.gains.l)?;
        let sigma_ry_inv = linalg::inverse(&design, "Sigma_ry")?;
        let mut modes = Vec::new();
        if let Some(set) = &cfg.modes {
            for (f_i, l_i) in set.modes() {
                let comp = factory::reparameterize_mode(&factors, f_i, l_i)?;
                modes.push(ModeRuntime {
                    f: f_i.clone(),
                    l: l_i.clone(),
                    xhat: Vector::zeros(n),
                    q_i: LtiFilter::new(comp.q_i),
                    v_0i: LtiFilter::new(comp.v_0i),
                    r_0i: LtiFilter::new(comp.r_0i),
                    v_i0: LtiFilter::new(comp.v_i0),
                });
            }
        }
        Ok(PlantRuntime {
            xh: Vector::zeros(n),
            e: Vector::zeros(n),
            w_factor: linalg::psd_factor(&cfg.noise.sigma_w, "Sigma_w")?,
            nu_factor: linalg::psd_factor(&cfg.noise.sigma_nu, "Sigma_nu")?,
            rng: stats::rng_stream(seed, NOISE_STREAM),
            fault: cfg.fault.clone().map(|f| FaultSource::new(f, seed)).transpose()?,
            q_r1: LtiFilter::new(cfg.q_r1.clone()),
            q_r2: LtiFilter::new(cfg.q_r2.clone()),
            q_umc: LtiFilter::new(cfg.q_umc.clone()),
            q_v: LtiFilter::new(cfg.reference.q_v.clone()),
            psi: cfg.psi.clone().map(LtiFilter::new),
            modes,
            pdd_active: false,
            sigma_ry_inv,
            sigma_ry: design,
            k: 0,
            draw: None,
            inner: AffineLoop::default(),
            factors,
            cfg,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn factors(&self) -> &BezoutFactors {
        &self.factors
    }

    /// Innovation covariance `Sigma_ry` of the embedded observer.
    pub fn sigma_ry(&self) -> &Mat {
        &self.sigma_ry
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    /// True state `x = x_hat + e`.
    pub fn true_state(&self) -> Vector {
        &self.xh + &self.e
    }

    /// Noise- and fault-free output `C x + D u` of the current step for input `u`.
    pub fn true_output(&self, u: &Vector) -> Vector {
        self.cfg.model.c() * self.true_state() + self.cfg.model.d() * u
    }

    pub fn set_pdd_active(&mut self, active: bool) -> Result<()> {
        if active && self.psi.is_none() {
            return Err(Error::invalid("extended residual requested but Psi is not configured"));
        }
        self.pdd_active = active;
        Ok(())
    }

    pub fn pdd_active(&self) -> bool {
        self.pdd_active
    }

    /// Swap `Q_r1`, `Q_r2` and the `Q_uMC` copy; filter states persist when orders match.
    pub fn reconfigure(&mut self, q_r1: Option<StateSpace>, q_r2: Option<StateSpace>, q_umc: Option<StateSpace>) -> Result<()> {
        let mut cfg = self.cfg.clone();
        if let Some(q) = q_r1.clone() {
            cfg.q_r1 = q;
        }
        if let Some(q) = q_r2.clone() {
            cfg.q_r2 = q;
        }
        if let Some(q) = q_umc.clone() {
            cfg.q_umc = q;
        }
        cfg.validate()?;
        if let Some(q) = q_r1 {
            self.q_r1.replace_system(q)?;
        }
        if let Some(q) = q_r2 {
            self.q_r2.replace_system(q)?;
        }
        if let Some(q) = q_umc {
            self.q_umc.replace_system(q)?;
        }
        self.cfg = cfg;
        Ok(())
    }

    /// Mode active at step `k`, `None` when running the base gains.
    pub fn mode_switch(&self, k: usize) -> Option<usize> {
        self.cfg.modes.as_ref().map(|s| s.mode_at(k))
    }

    fn ensure_draw(&mut self) {
        if self.draw.is_some() {
            return;
        }
        let w = stats::gaussian(&mut self.rng, &self.w_factor);
        let nu = stats::gaussian(&mut self.rng, &self.nu_factor);
        let f = match &mut self.fault {
            Some(src) => src.sample(self.k),
            None => Vector::zeros(0),
        };
        self.draw = Some((w, nu, f));
    }

    fn base_ry(&self) -> Vector {
        let (_, nu, f) = self.draw.as_ref().expect("draw prepared");
        let mut r = self.cfg.model.c() * &self.e + nu;
        if let Some(src) = &self.fault {
            r += &src.spec.f_f * f;
        }
        r
    }

    /// Output residual of the current step; independent of the input.
    pub fn output_residual(&mut self) -> Vector {
        self.ensure_draw();
        self.base_ry()
    }

    /// Evaluate the step for a received `u_MC^a` without committing any state.
    pub fn evaluate(&mut self, u_mc_a: &Vector) -> Result<PlantEval> {
        self.evaluate_with(u_mc_a, false)
    }

    /// Evaluate with `u_MC^a` applied directly as the plant input, bypassing the
    /// embedded law. Used to run the traditional configuration on the same plant.
    pub fn evaluate_direct(&mut self, u: &Vector) -> Result<PlantEval> {
        self.evaluate_with(u, true)
    }

    fn evaluate_with(&mut self, u_mc_a: &Vector, direct: bool) -> Result<PlantEval> {
        self.ensure_draw();
        let mut inner = std::mem::take(&mut self.inner);
        let m = self.cfg.model.m();
        if u_mc_a.len() != m {
            return Err(Error::dim("u_MC has the wrong dimension"));
        }
        let r_y_base = self.base_ry();
        let v0 = self.q_v.peek(&self.cfg.reference.vbar0)?;
        let mode = self.mode_switch(self.k);
        let model = &self.cfg.model;
        let (c, d) = (model.c(), model.d());
        let y_of = |u: &Vector| c * &self.xh + d * u + &r_y_base;
        let pd_of = |u: &Vector| -> Result<Option<Vector>> {
            match &self.psi {
                Some(psi) => {
                    let y = y_of(u);
                    let mut uy = Vector::zeros(u.len() + y.len());
                    uy.rows_mut(0, u.len()).copy_from(u);
                    uy.rows_mut(u.len(), y.len()).copy_from(&y);
                    Ok(Some(psi.peek(&uy)?))
                }
                None => Ok(None),
            }
        };
        let corr_in_of = |pd: &Option<Vector>| -> Vector {
            match pd {
                Some(r) if self.pdd_active => r.clone(),
                _ => Vector::zeros(self.cfg.model.p()),
            }
        };
        let w_of = |u: &Vector| -> Result<Vector> {
            let pd = pd_of(u)?;
            let corr = self.q_umc.peek(&corr_in_of(&pd))?;
            Ok(&v0 + u_mc_a - corr)
        };
        let law = |u: &Vector| -> Result<Vector> {
            if direct {
                return Ok(u_mc_a.clone());
            }
            let w = w_of(u)?;
            match mode {
                Some(i) => {
                    let md = &self.modes[i];
                    let p = self.cfg.model.p();
                    Ok(&md.f * &md.xhat + md.q_i.peek(&Vector::zeros(p))? + md.v_0i.peek(&w)?)
                }
                None => Ok(&self.cfg.gains.f * &self.xh + w),
            }
        };
        let looped = !direct && ((self.psi.is_some() && self.pdd_active) || d.iter().any(|x| *x != 0.0));
        let u = if looped {
            inner.solve(m, |u| law(u).map(|v| (v, ()))).map(|r| r.0)
        } else {
            law(&Vector::zeros(m))
        };
        let u = u?;
        let y = y_of(&u);
        let pd = pd_of(&u)?;
        let corr_in = corr_in_of(&pd);
        let w = w_of(&u)?;
        let mut mode_inputs = Vec::with_capacity(self.modes.len());
        for md in &self.modes {
            let r_yi = &y - c * &md.xhat - d * &u;
            let r_ui = &u - &md.f * &md.xhat;
            let qf = md.q_i.peek(&r_yi)?;
            mode_inputs.push((r_yi, r_ui - qf, w.clone()));
        }
        let (r_y, r_u) = match mode {
            Some(i) => {
                let (r_yi, ru_in, _) = &mode_inputs[i];
                let md = &self.modes[i];
                (md.r_0i.peek(r_yi)?, md.v_i0.peek(ru_in)? - &v0)
            }
            None => (r_y_base.clone(), &u - &self.cfg.gains.f * &self.xh - &v0),
        };
        let mut r_yu = self.q_r1.peek(&r_y)? + self.q_r2.peek(&r_u)?;
        let r_pd = if self.pdd_active { pd.clone() } else { None };
        if let Some(r) = &r_pd {
            r_yu += r;
        }
        let psi_in = self.psi.as_ref().map(|_| {
            let mut uy = Vector::zeros(u.len() + y.len());
            uy.rows_mut(0, u.len()).copy_from(&u);
            uy.rows_mut(u.len(), y.len()).copy_from(&y);
            uy
        });
        let frame = ResidualFrame {
            k: self.k,
            r_y,
            r_u,
            r_yu,
            r_pd,
            u,
            y,
            mode,
        };
        self.inner = inner;
        Ok(PlantEval {
            frame,
            r_y_base,
            corr_in,
            psi_in,
            mode_inputs,
        })
    }

    /// Commit an evaluation produced by [`evaluate`](Self::evaluate) in the same step.
    pub fn commit(&mut self, eval: PlantEval) -> Result<ResidualFrame> {
        let PlantEval {
            frame,
            r_y_base,
            corr_in,
            psi_in,
            mode_inputs,
        } = eval;
        if frame.k != self.k {
            return Err(Error::invalid("evaluation belongs to a different step"));
        }
        let (wn, nu, f) = self.draw.take().expect("draw prepared");
        let model = &self.cfg.model;
        let (a, b, c) = (model.a(), model.b(), model.c());
        let l = &self.cfg.gains.l;
        let mut e_next = (a - l * c) * &self.e + &wn - l * &nu;
        if let Some(src) = &self.fault {
            e_next += &src.spec.e_f * &f - l * (&src.spec.f_f * &f);
        }
        self.xh = a * &self.xh + b * &frame.u + l * &r_y_base;
        self.e = e_next;
        self.q_r1.step(&frame.r_y)?;
        self.q_r2.step(&frame.r_u)?;
        self.q_umc.step(&corr_in)?;
        self.q_v.step(&self.cfg.reference.vbar0)?;
        if let (Some(psi), Some(uy)) = (&mut self.psi, psi_in) {
            psi.step(&uy)?;
        }
        for (md, (r_yi, ru_in, w_i)) in self.modes.iter_mut().zip(mode_inputs) {
            md.xhat = a * &md.xhat + b * &frame.u + &md.l * &r_yi;
            md.q_i.step(&r_yi)?;
            md.v_0i.step(&w_i)?;
            md.r_0i.step(&r_yi)?;
            md.v_i0.step(&ru_in)?;
        }
        self.k += 1;
        Ok(frame)
    }

    /// Evaluate and commit for a known `u_MC^a`.
    pub fn embedded_compute(&mut self, u_mc_a: &Vector) -> Result<ResidualFrame> {
        let eval = self.evaluate(u_mc_a)?;
        self.commit(eval)
    }

    /// One step with the extended residual `r_yu + Psi [u; y]` and the plant-side
    /// `Q_uMC` compensation switched on.
    pub fn pdd_mode_compute(&mut self, u_mc_a: &Vector) -> Result<ResidualFrame> {
        self.set_pdd_active(true)?;
        self.embedded_compute(u_mc_a)
    }

    /// Plant-side fault statistic `r_y^T Sigma_ry^{-1} r_y`.
    pub fn j_rel(&self, r_y: &Vector) -> f64 {
        (r_y.transpose() * &self.sigma_ry_inv * r_y)[(0, 0)]
    }
}

/// `C P C^T + Sigma_nu` for the steady-state error covariance of observer gain `l`.
pub fn innovation_covariance(model: &StateSpace, noise: &NoiseSpec, l: &Mat) -> Result<Mat> {
    // Error dynamics e+ = (A - LC) e + w - L nu.
    let al = model.a() - l * model.c();
    let q = &noise.sigma_w + l * &noise.sigma_nu * l.transpose();
    let p = crate::sscore::dlyap(&al, &q)?;
    Ok(linalg::symmetrize(&(model.c() * p * model.c().transpose() + &noise.sigma_nu)))
}

/// Outcome of one detector evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorVerdict {
    pub detector: String,
    /// Window anchor: the step of the first sample in the evaluated window.
    pub k0: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub alarm: bool,
    pub branch: Option<u8>,
}

/// Per-step fault detection `J_rel = r_y^T Sigma^{-1} r_y > chi2_alpha(k_y)`.
pub fn fd_chi2<'a>(
    frames: impl IntoIterator<Item = &'a ResidualFrame>,
    sigma_ry: &Mat,
    alpha: f64,
) -> Result<Vec<DetectorVerdict>> {
    let p = sigma_ry.nrows();
    let inv = linalg::inverse(sigma_ry, "Sigma_ry")?;
    if linalg::sym_extreme_eigenvalues(sigma_ry).0 <= 0.0 {
        return Err(Error::invalid("Sigma_ry must be positive definite"));
    }
    let th = stats::chi2_quantile(1.0 - alpha, p as f64)?;
    Ok(frames
        .into_iter()
        .map(|f| {
            let j = (f.r_y.transpose() * &inv * &f.r_y)[(0, 0)];
            DetectorVerdict {
                detector: "fault_chi2".into(),
                k0: f.k,
                statistic: j,
                threshold: th,
                alarm: j > th,
                branch: None,
            }
        })
        .collect())
}
