//! MC-station: reference-tracking control law, detector post-filters and their
//! schedule, resilience checks, reconfiguration, and the traditional baseline.

pub mod detectors;

pub use detectors::{
    attack_residual_chi2, build_switch_detector, calibrate_threshold, design_attack_postfilter,
    design_whitening_filter, glr_statistic, llr_branch, llr_branches, llr_statistic, llr_threshold,
    BlockWindow, Chi2Stream, LlrThreshold, SlidingWindow, SwitchDetectorConfig,
};
pub use crate::plantside::DetectorVerdict;

use crate::error::{Error, Result};
use crate::factory::BezoutFactors;
use crate::plantside::ReferenceConfig;
use crate::sscore::{
    add, hinf_norm, invert_io, linalg, series_connect, sub, LtiFilter, Mat, StateSpace, Vector,
};

/// Detector family active in a schedule slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorPhase {
    /// Attack chi-square and switch LLR on the plain fused residual.
    Regular,
    /// Chi-square on the whitened extended residual.
    Additive,
    /// GLR on the whitened extended residual.
    Multiplicative,
}

/// Round-robin detector schedule with per-phase dwell times in steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorSchedule {
    phases: Vec<(DetectorPhase, usize)>,
    /// Steps after each phase change before verdicts are issued.
    pub settle: usize,
}

impl DetectorSchedule {
    pub fn regular_only() -> Self {
        DetectorSchedule {
            phases: vec![(DetectorPhase::Regular, 1)],
            settle: 0,
        }
    }

    pub fn new(phases: Vec<(DetectorPhase, usize)>, settle: usize) -> Result<Self> {
        if phases.is_empty() || phases.iter().any(|p| p.1 == 0) {
            return Err(Error::invalid("detector schedule needs phases with positive dwell"));
        }
        if phases.len() > 1 && phases.iter().any(|p| p.1 <= settle) {
            return Err(Error::invalid("every dwell must exceed the settle period"));
        }
        Ok(DetectorSchedule { phases, settle })
    }

    pub fn phases(&self) -> &[(DetectorPhase, usize)] {
        &self.phases
    }

    fn period(&self) -> usize {
        self.phases.iter().map(|p| p.1).sum()
    }

    /// Phase at step `k` and the number of steps already spent in it.
    pub fn phase_at(&self, k: usize) -> (DetectorPhase, usize) {
        if self.phases.len() == 1 {
            return (self.phases[0].0, k);
        }
        let mut r = k % self.period();
        for &(ph, dwell) in &self.phases {
            if r < dwell {
                return (ph, r);
            }
            r -= dwell;
        }
        unreachable!("offset lies inside one period")
    }

    pub fn uses_extended_residual(&self) -> bool {
        self.phases.iter().any(|p| p.0 != DetectorPhase::Regular)
    }
}

/// Switch detector parameters before assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchParams {
    pub s: usize,
    pub gamma: usize,
    pub l0: f64,
    /// Replace the computed bounds, e.g. with externally fixed values.
    pub bounds_override: Option<(f64, f64)>,
}

/// Performance-degradation detection settings.
#[derive(Clone, Debug)]
pub struct PddConfig {
    pub psi: StateSpace,
    /// GLR window length `N`.
    pub window: usize,
    pub glr_threshold: f64,
    /// Nominal covariance of the whitened extended residual.
    pub sigma_nominal: Mat,
}

/// Everything the MC-station is configured with.
#[derive(Clone, Debug)]
pub struct McConfig {
    /// Plant model knowledge (factorization with the embedded gains).
    pub factors: BezoutFactors,
    pub q_r1: StateSpace,
    pub q_r2: StateSpace,
    pub q_umc: StateSpace,
    pub reference: ReferenceConfig,
    pub sigma_ry: Mat,
    pub alpha: f64,
    pub switch: Option<SwitchParams>,
    pub pdd: Option<PddConfig>,
    pub schedule: DetectorSchedule,
}

/// Filters derived from an [`McConfig`].
#[derive(Clone, Debug)]
pub struct McDesign {
    /// Whitening post-filter of `Q_r1 r_y`.
    pub r: StateSpace,
    /// `R (I - Q_r2 Q_uMC)`, applied to `r_yu^a - Q_r2 v`.
    pub r_bar: StateSpace,
    pub switch: Option<(SwitchDetectorConfig, LlrThreshold)>,
    pub pdd: Option<PddDesign>,
}

/// Filters of the extended-residual detectors.
#[derive(Clone, Debug)]
pub struct PddDesign {
    /// Map from `r_y` to the extended residual.
    pub gamma: StateSpace,
    /// Whitening filter of `gamma`.
    pub r_gamma: StateSpace,
    /// `Psi [M; N]`, applied to `v_0 + v`.
    pub psi_img: StateSpace,
}

/// `Q_uMC Q_r2` (input side loop) and `Q_r2 Q_uMC` (output side loop).
fn loops(q_r2: &StateSpace, q_umc: &StateSpace) -> Result<(StateSpace, StateSpace)> {
    Ok((series_connect(q_r2, q_umc)?, series_connect(q_umc, q_r2)?))
}

/// `(I - Q_uMC Q_r2)^{-1}`.
pub fn theta_gain_system(q_r2: &StateSpace, q_umc: &StateSpace) -> Result<StateSpace> {
    let (inner, _) = loops(q_r2, q_umc)?;
    invert_io(&sub(&StateSpace::identity(inner.m(), inner.ts()), &inner)?)
}

/// `Q_bar_r1 = (I - Q_r2 Q_uMC)^{-1} Q_r1`.
pub fn q_bar_r1(q_r1: &StateSpace, q_r2: &StateSpace, q_umc: &StateSpace) -> Result<StateSpace> {
    let (_, outer) = loops(q_r2, q_umc)?;
    let inv = invert_io(&sub(&StateSpace::identity(outer.m(), outer.ts()), &outer)?)?;
    series_connect(q_r1, &inv)
}

/// `[-Y^; X^] + [M; N] Q_uMC Q_bar_r1`: map from `r_y` to `[u; y]` in closed loop.
pub fn ry_to_io(factors: &BezoutFactors, q_r1: &StateSpace, q_r2: &StateSpace, q_umc: &StateSpace) -> Result<StateSpace> {
    let qb = q_bar_r1(q_r1, q_r2, q_umc)?;
    let path = series_connect(&series_connect(&qb, q_umc)?, &factors.plant_image()?)?;
    add(&factors.controller_image()?, &path)
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.factors.model.m(), self.factors.model.p());
        if self.q_r1.shape() != (p, p) || self.q_r2.shape() != (p, m) || self.q_umc.shape() != (m, p) {
            return Err(Error::dim("MC filters have inconsistent dimensions"));
        }
        for (name, s) in [("Q_r1", &self.q_r1), ("Q_r2", &self.q_r2), ("Q_uMC", &self.q_umc)] {
            if !s.is_stable()? {
                return Err(Error::invalid(format!("{name} must be stable")));
            }
        }
        let (inner, _) = loops(&self.q_r2, &self.q_umc)?;
        let d = Mat::identity(m, m) - inner.d();
        if linalg::min_singular_value(&d) < 1e-10 {
            return Err(Error::invalid("I - Q_uMC Q_r2 has a singular static part"));
        }
        if !theta_gain_system(&self.q_r2, &self.q_umc)?.is_stable()? {
            return Err(Error::invalid("I - Q_uMC Q_r2 has no stable inverse"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        self.reference.validate()?;
        if self.schedule.uses_extended_residual() && self.pdd.is_none() {
            return Err(Error::invalid("schedule uses the extended residual but no PDD settings are given"));
        }
        if let Some(pdd) = &self.pdd {
            if pdd.window < p {
                return Err(Error::invalid("GLR window must be at least the residual dimension"));
            }
            if pdd.sigma_nominal.shape() != (p, p) {
                return Err(Error::dim("nominal extended-residual covariance must be p x p"));
            }
        }
        Ok(())
    }

    pub fn design(&self) -> Result<McDesign> {
        self.validate()?;
        let r = design_attack_postfilter(&self.q_r1, &self.sigma_ry)?;
        let (_, outer) = loops(&self.q_r2, &self.q_umc)?;
        let pre = sub(&StateSpace::identity(outer.m(), outer.ts()), &outer)?;
        let r_bar = series_connect(&pre, &r)?;
        let switch = match &self.switch {
            Some(sp) => {
                let mut sw = build_switch_detector(&r, sp.s, sp.gamma, sp.l0)?;
                if let Some((lo, hi)) = sp.bounds_override {
                    if !(lo < hi) {
                        return Err(Error::invalid("LLR bounds must satisfy L_l < L_u"));
                    }
                    sw.l_l = lo;
                    sw.l_u = hi;
                }
                let th = llr_threshold(&sw, self.alpha)?;
                Some((sw, th))
            }
            None => None,
        };
        let pdd = match &self.pdd {
            Some(pc) => {
                let to_io = ry_to_io(&self.factors, &self.q_r1, &self.q_r2, &self.q_umc)?;
                let qb = q_bar_r1(&self.q_r1, &self.q_r2, &self.q_umc)?;
                let gamma = add(&qb, &series_connect(&to_io, &pc.psi)?)?;
                let r_gamma = design_whitening_filter(&gamma, &self.sigma_ry)?;
                let psi_img = series_connect(&self.factors.plant_image()?, &pc.psi)?;
                Some(PddDesign {
                    gamma,
                    r_gamma,
                    psi_img,
                })
            }
            None => None,
        };
        Ok(McDesign {
            r,
            r_bar,
            switch,
            pdd,
        })
    }
}

/// Achieved resilience norms and their pass flags.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PerformanceReport {
    pub gamma_theta: f64,
    pub gamma_ry: f64,
    pub gamma_theta_target: Option<f64>,
    pub gamma_ry_target: Option<f64>,
    pub gamma_theta_pass: bool,
    pub gamma_ry_pass: bool,
}

/// H-infinity norms of `(I - Q_uMC Q_r2)^{-1}` and of the `r_y -> [u; y]` map.
pub fn resilient_performance_check(
    factors: &BezoutFactors,
    q_r1: &StateSpace,
    q_r2: &StateSpace,
    q_umc: &StateSpace,
    targets: (Option<f64>, Option<f64>),
) -> Result<PerformanceReport> {
    let theta = theta_gain_system(q_r2, q_umc)?;
    let fry = ry_to_io(factors, q_r1, q_r2, q_umc)?;
    for (name, s) in [("theta gain", &theta), ("fault map", &fry)] {
        if !s.is_stable()? {
            return Err(Error::numerical(format!("assembled {name} system is unstable")));
        }
    }
    let gamma_theta = hinf_norm(&theta)?;
    let gamma_ry = hinf_norm(&fry)?;
    Ok(PerformanceReport {
        gamma_theta,
        gamma_ry,
        gamma_theta_target: targets.0,
        gamma_ry_target: targets.1,
        gamma_theta_pass: targets.0.is_none_or(|t| gamma_theta <= t),
        gamma_ry_pass: targets.1.is_none_or(|t| gamma_ry <= t),
    })
}

/// Result of committing one MC-station step.
#[derive(Clone, Debug)]
pub struct McStep {
    pub u_mc: Vector,
    pub phase: DetectorPhase,
    /// `R_bar (r_yu^a - Q_r2 v)` when the regular detector was fed this step.
    pub r_bar: Option<Vector>,
    pub verdicts: Vec<DetectorVerdict>,
}

/// MC-station runtime.
#[derive(Clone, Debug)]
pub struct McStation {
    cfg: McConfig,
    design: McDesign,
    q_v: LtiFilter,
    q_v0: LtiFilter,
    q_r2: LtiFilter,
    q_umc: LtiFilter,
    r_bar: LtiFilter,
    chi2: Chi2Stream,
    llr: Option<SlidingWindow>,
    psi_img: Option<LtiFilter>,
    r_gamma: Option<LtiFilter>,
    additive: Chi2Stream,
    glr: Option<BlockWindow>,
    k: usize,
}

impl McStation {
    pub fn new(cfg: McConfig) -> Result<Self> {
        let design = cfg.design()?;
        let p = cfg.factors.model.p();
        Ok(McStation {
            q_v: LtiFilter::new(cfg.reference.q_v.clone()),
            q_v0: LtiFilter::new(cfg.reference.q_v.clone()),
            q_r2: LtiFilter::new(cfg.q_r2.clone()),
            q_umc: LtiFilter::new(cfg.q_umc.clone()),
            r_bar: LtiFilter::new(design.r_bar.clone()),
            chi2: Chi2Stream::new("attack_chi2", p, cfg.alpha)?,
            llr: design.switch.as_ref().map(|(sw, _)| SlidingWindow::new(sw.s + 1)),
            psi_img: design.pdd.as_ref().map(|d| LtiFilter::new(d.psi_img.clone())),
            r_gamma: design.pdd.as_ref().map(|d| LtiFilter::new(d.r_gamma.clone())),
            additive: Chi2Stream::new("additive_chi2", p, cfg.alpha)?,
            glr: cfg.pdd.as_ref().map(|c| BlockWindow::new(c.window)),
            k: 0,
            design,
            cfg,
        })
    }

    pub fn config(&self) -> &McConfig {
        &self.cfg
    }

    pub fn design(&self) -> &McDesign {
        &self.design
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    /// Detector phase of the current step; the plant side mirrors it.
    pub fn phase(&self) -> DetectorPhase {
        self.cfg.schedule.phase_at(self.k).0
    }

    fn v(&self) -> Result<Vector> {
        let r = &self.cfg.reference;
        self.q_v.peek(&(r.target(self.k) - &r.vbar0))
    }

    /// Control law `u_MC = Q_uMC (r_yu^a - Q_r2 v) + v` without advancing any state.
    pub fn mc_control(&self, r_yu_a: &Vector) -> Result<Vector> {
        let v = self.v()?;
        let d = r_yu_a - self.q_r2.peek(&v)?;
        Ok(self.q_umc.peek(&d)? + v)
    }

    /// Advance one step with the received fused residual and run the scheduled detectors.
    pub fn commit(&mut self, r_yu_a: &Vector) -> Result<McStep> {
        let r = &self.cfg.reference;
        let dv = r.target(self.k) - &r.vbar0;
        let vbar0 = r.vbar0.clone();
        let v = self.q_v.step(&dv)?;
        let v0 = self.q_v0.step(&vbar0)?;
        let d = r_yu_a - self.q_r2.step(&v)?;
        let u_mc = self.q_umc.step(&d)? + &v;
        let img = match &mut self.psi_img {
            Some(f) => Some(f.step(&(&v0 + &v))?),
            None => None,
        };
        let (phase, into) = self.cfg.schedule.phase_at(self.k);
        let ready = into >= self.cfg.schedule.settle;
        let k = self.k;
        let mut verdicts = Vec::new();
        let mut r_bar_out = None;
        match phase {
            DetectorPhase::Regular => {
                if into == 0 && self.cfg.schedule.phases().len() > 1 {
                    self.r_bar.reset();
                    if let Some(w) = &mut self.llr {
                        w.clear();
                    }
                }
                let rb = self.r_bar.step(&d)?;
                if ready {
                    verdicts.push(self.chi2.evaluate(k, &rb));
                    if let (Some(w), Some((sw, th))) = (&mut self.llr, &self.design.switch) {
                        if let Some(stack) = w.push(rb.clone()) {
                            verdicts.push(llr_statistic(sw, th, k - sw.s, &stack)?);
                        }
                    }
                }
                r_bar_out = Some(rb);
            }
            DetectorPhase::Additive | DetectorPhase::Multiplicative => {
                let (rg, img) = match (&mut self.r_gamma, img) {
                    (Some(f), Some(i)) => (f, i),
                    _ => return Err(Error::invalid("extended residual phase without PDD design")),
                };
                if into == 0 {
                    rg.reset();
                    if let Some(g) = &mut self.glr {
                        g.clear();
                    }
                }
                let white = rg.step(&(&d - img))?;
                if ready {
                    if phase == DetectorPhase::Additive {
                        verdicts.push(self.additive.evaluate(k, &white));
                    } else if let (Some(g), Some(pc)) = (&mut self.glr, &self.cfg.pdd) {
                        if let Some((k0, win)) = g.push(k, white) {
                            let j = glr_statistic(&win, &pc.sigma_nominal)?;
                            verdicts.push(DetectorVerdict {
                                detector: "glr_pdd".into(),
                                k0,
                                statistic: j,
                                threshold: pc.glr_threshold,
                                alarm: j > pc.glr_threshold,
                                branch: None,
                            });
                        }
                    }
                }
            }
        }
        self.k += 1;
        Ok(McStep {
            u_mc,
            phase,
            r_bar: r_bar_out,
            verdicts,
        })
    }

    /// Swap the MC-side parameters at a step boundary. Filter states persist when orders match.
    pub fn reconfigure(&mut self, q_r1: Option<StateSpace>, q_r2: Option<StateSpace>, q_umc: Option<StateSpace>) -> Result<()> {
        let mut cfg = self.cfg.clone();
        if let Some(q) = q_r1 {
            cfg.q_r1 = q;
        }
        if let Some(q) = q_r2 {
            cfg.q_r2 = q;
        }
        if let Some(q) = q_umc {
            cfg.q_umc = q;
        }
        let design = cfg.design()?;
        self.q_r2.replace_system(cfg.q_r2.clone())?;
        self.q_umc.replace_system(cfg.q_umc.clone())?;
        self.r_bar.replace_system(design.r_bar.clone())?;
        if let (Some(f), Some(d)) = (&mut self.r_gamma, &design.pdd) {
            f.replace_system(d.r_gamma.clone())?;
        }
        self.cfg = cfg;
        self.design = design;
        Ok(())
    }
}

/// Traditional configuration: the MC-station receives `y` and runs an observer-form
/// Youla controller `u = F x^ + Q r_y + v_0 + v` with a chi-square detector on `r_y`.
#[derive(Clone, Debug)]
pub struct TraditionalMc {
    model: StateSpace,
    f: Mat,
    l: Mat,
    xhat: Vector,
    q: LtiFilter,
    q_v: LtiFilter,
    reference: ReferenceConfig,
    detector: Chi2Stream,
    sigma_inv_sqrt: Mat,
    k: usize,
}

/// Output of one traditional-configuration step.
#[derive(Clone, Debug)]
pub struct TraditionalStep {
    pub u: Vector,
    pub r_y: Vector,
    pub verdict: DetectorVerdict,
}

impl TraditionalMc {
    pub fn new(factors: &BezoutFactors, q: StateSpace, reference: ReferenceConfig, sigma_ry: &Mat, alpha: f64) -> Result<Self> {
        let model = factors.model.clone();
        if q.shape() != (model.m(), model.p()) || !q.is_stable()? {
            return Err(Error::invalid("Youla parameter must be a stable m x p system"));
        }
        Ok(TraditionalMc {
            f: factors.gains.f.clone(),
            l: factors.gains.l.clone(),
            xhat: Vector::zeros(model.n()),
            q: LtiFilter::new(q),
            q_v: LtiFilter::new(reference.q_v.clone()),
            detector: Chi2Stream::new("traditional_chi2", model.p(), alpha)?,
            sigma_inv_sqrt: linalg::inv_sqrtm_pd(sigma_ry, "Sigma_ry")?,
            reference,
            model,
            k: 0,
        })
    }

    /// Commanded input and MC-side residual for a received output, without advancing.
    pub fn control(&self, y_a: &Vector) -> Result<(Vector, Vector)> {
        let (c, d) = (self.model.c(), self.model.d());
        let qs = self.q.peek(&Vector::zeros(self.model.p()))?;
        let dq = self.q.system().d();
        let ref_in = self.q_v.peek(self.reference.target(self.k))?;
        // u = F x^ + qs + D_Q (y - C x^ - D u) + ref, solved for u.
        let rhs = &self.f * &self.xhat + qs + dq * (y_a - c * &self.xhat) + ref_in;
        let lhs = Mat::identity(self.model.m(), self.model.m()) + dq * d;
        let u = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("traditional controller loop is singular"))?;
        let r_y = y_a - c * &self.xhat - d * &u;
        Ok((u, r_y))
    }

    /// Consume the received output and return the commanded input.
    pub fn step(&mut self, y_a: &Vector) -> Result<TraditionalStep> {
        let (u, r_y) = self.control(y_a)?;
        self.q.step(&r_y)?;
        self.q_v.step(self.reference.target(self.k))?;
        self.xhat = self.model.a() * &self.xhat + self.model.b() * &u + &self.l * &r_y;
        let verdict = self.detector.evaluate(self.k, &(&self.sigma_inv_sqrt * &r_y));
        self.k += 1;
        Ok(TraditionalStep { u, r_y, verdict })
    }

    /// Replace the Youla parameter; the state is kept when the order matches.
    pub fn reconfigure(&mut self, q: StateSpace) -> Result<()> {
        if q.shape() != (self.model.m(), self.model.p()) || !q.is_stable()? {
            return Err(Error::invalid("Youla parameter must be a stable m x p system"));
        }
        self.q.replace_system(q)
    }

    pub fn step_index(&self) -> usize {
        self.k
    }
}

#[cfg(test)]
mod tests;
