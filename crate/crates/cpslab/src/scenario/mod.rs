//! Scenario configuration, deterministic execution of the networked loop,
//! bundled experiment presets and file output.
//!
//! Configs are JSON trees. Times are given in seconds and converted to steps at
//! the sample period; matrices are row-major nested arrays and LTI blocks use
//! the [`SystemSpec`] forms `gain`, `diag`, `tf` and `ss`.

mod engine;
mod experiments;
mod output;
mod presets;

pub use engine::{calibrate_glr, run_resolved, run_scenario, RunLog, Simulation, TrajectoryRow, VerdictRow};
pub use experiments::{reproduce, reproduce_all, Experiment, ExperimentReport, SummaryLine};
pub use output::{emit_outputs, TRAJECTORY_COLUMNS, VERDICT_COLUMNS};
pub use presets::{preset, preset_names};

use serde::{Deserialize, Serialize};

use crate::attacks::{covert_attack_gen, AttackSpec, AttackVariant, ChannelLayout, Window};
use crate::error::{Error, Result};
use crate::factory::{build_bezout_factors, FactorGains, ModeSet};
use crate::mcstation::{DetectorPhase, DetectorSchedule, McConfig, PddConfig, SwitchParams};
use crate::plantside::{innovation_covariance, FaultProfile, FaultSpec, PlantConfig, ReferenceConfig};
use crate::sscore::{kalman_gain, linalg, lq_gain, Mat, NoiseSpec, StateSpace, SystemSpec, Vector};

/// Process and measurement noise covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_nu: Vec<Vec<f64>>,
}

impl NoiseSection {
    fn build(&self) -> Result<NoiseSpec> {
        Ok(NoiseSpec {
            sigma_w: linalg::mat_from_rows(&self.sigma_w)?,
            sigma_nu: linalg::mat_from_rows(&self.sigma_nu)?,
        })
    }
}

/// Feedback gain `F` and observer gain `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainPair {
    pub f: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
}

impl GainPair {
    fn build(&self) -> Result<(Mat, Mat)> {
        Ok((linalg::mat_from_rows(&self.f)?, linalg::mat_from_rows(&self.l)?))
    }
}

/// How the embedded gains are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSection {
    /// LQ state feedback with weights `qx`, `ru` and the Kalman gain for the design noise.
    Lq { qx: Vec<Vec<f64>>, ru: Vec<Vec<f64>> },
    Explicit(GainPair),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultProfileEntry {
    Constant(Vec<f64>),
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

/// Fault entering as `E_f f` and `F_f f`, active over `[start, end)` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEntry {
    pub start: f64,
    pub end: f64,
    pub e_f: Vec<Vec<f64>>,
    pub f_f: Vec<Vec<f64>>,
    pub profile: FaultProfileEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSwitch {
    pub time: f64,
    pub mode: usize,
}

/// Moving-target mode set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSection {
    pub modes: Vec<GainPair>,
    #[serde(default)]
    pub schedule: Vec<ModeSwitch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub model: SystemSpec,
    /// Noise injected into the simulation.
    pub noise: NoiseSection,
    /// Noise assumed for the Kalman and detector designs; defaults to `noise`.
    #[serde(default)]
    pub design_noise: Option<NoiseSection>,
    pub gains: GainSection,
    #[serde(default)]
    pub fault: Option<FaultEntry>,
    #[serde(default)]
    pub modes: Option<ModesSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub q_r1: SystemSpec,
    pub q_r2: SystemSpec,
    pub q_umc: SystemSpec,
    /// Performance filter on `[u; y]` for the extended residual.
    #[serde(default)]
    pub psi: Option<SystemSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSegment {
    pub time: f64,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    /// Static reference shaping `Q_v`.
    pub q_v: SystemSpec,
    pub segments: Vec<TargetSegment>,
    /// Embedded baseline target; defaults to the first segment.
    #[serde(default)]
    pub vbar0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSection {
    pub s: usize,
    pub gamma: usize,
    pub l0: f64,
    /// Use these `(L_l, L_u)` instead of the computed bounds.
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
}

/// GLR threshold, fixed or calibrated on an attack-free run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlrThreshold {
    Fixed(f64),
    Calibrate { far: f64, windows: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PddSection {
    /// GLR window length in steps.
    pub window: usize,
    pub threshold: GlrThreshold,
    /// Nominal covariance of the whitened extended residual, identity by default.
    #[serde(default)]
    pub sigma_nominal: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEntry {
    pub phase: DetectorPhase,
    /// Dwell in seconds.
    pub dwell: f64,
}

fn default_alpha() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub switch: Option<SwitchSection>,
    #[serde(default)]
    pub pdd: Option<PddSection>,
    /// Round-robin schedule; regular detection only when absent.
    #[serde(default)]
    pub schedule: Option<Vec<PhaseEntry>>,
    /// Seconds after each phase change before verdicts are issued.
    #[serde(default)]
    pub settle: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            alpha: default_alpha(),
            switch: None,
            pdd: None,
            schedule: None,
            settle: 0.0,
        }
    }
}

/// Attack entry with its window in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackEntry {
    pub start: f64,
    pub end: f64,
    #[serde(flatten)]
    pub variant: AttackVariant,
}

/// Parameter swap applied on both sides at the same step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconfigEntry {
    pub time: f64,
    #[serde(default)]
    pub q_r1: Option<SystemSpec>,
    #[serde(default)]
    pub q_r2: Option<SystemSpec>,
    #[serde(default)]
    pub q_umc: Option<SystemSpec>,
    /// Youla parameter of the traditional configuration.
    #[serde(default)]
    pub q: Option<SystemSpec>,
}

/// Which loop is simulated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    #[default]
    Modified,
    /// The plant sends `y`; the MC-station runs an observer-form Youla controller.
    Traditional { q: SystemSpec },
}

/// Complete scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub ts: f64,
    /// Run length in seconds.
    pub duration: f64,
    /// Run length in steps; overrides `duration`.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSection,
    pub filters: FilterSection,
    pub reference: ReferenceSection,
    #[serde(default)]
    pub detectors: DetectorSection,
    #[serde(default)]
    pub attacks: Vec<AttackEntry>,
    #[serde(default)]
    pub reconfigurations: Vec<ReconfigEntry>,
    #[serde(default)]
    pub configuration: Configuration,
}

/// Reconfiguration event in steps with realized systems.
#[derive(Clone, Debug)]
pub struct Reconfiguration {
    pub step: usize,
    pub q_r1: Option<StateSpace>,
    pub q_r2: Option<StateSpace>,
    pub q_umc: Option<StateSpace>,
    pub q: Option<StateSpace>,
}

/// Fully validated scenario in step units.
#[derive(Clone, Debug)]
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub steps: usize,
    pub plant: PlantConfig,
    pub mc: McConfig,
    /// Youla parameter when running the traditional configuration.
    pub traditional_q: Option<StateSpace>,
    pub attacks: Vec<AttackSpec>,
    pub reconfigurations: Vec<Reconfiguration>,
    pub glr_calibration: Option<(f64, usize)>,
    pub warnings: Vec<String>,
}

impl ResolvedScenario {
    pub fn layout(&self) -> ChannelLayout {
        if self.traditional_q.is_some() {
            ChannelLayout::Traditional
        } else {
            ChannelLayout::Modified
        }
    }
}

struct StepClock {
    ts: f64,
    warnings: Vec<String>,
}

impl StepClock {
    /// Seconds to steps; fractional boundaries round down with a warning.
    fn steps(&mut self, what: &str, t: f64) -> Result<usize> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("{what}: time must be finite and nonnegative, got {t}")));
        }
        let x = t / self.ts;
        let r = x.round();
        if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
            return Ok(r as usize);
        }
        let k = x.floor() as usize;
        self.warnings.push(format!("{what}: {t} s is not a multiple of Ts = {}; rounded down to step {k}", self.ts));
        Ok(k)
    }
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validate and convert to step units.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let ts = self.ts;
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::invalid("ts must be positive"));
        }
        let mut clock = StepClock {
            ts,
            warnings: Vec::new(),
        };
        let steps = match self.steps {
            Some(s) => s,
            None => clock.steps("duration", self.duration)?,
        };
        let model = self.plant.model.realize(ts).map_err(|e| Error::invalid(format!("plant.model: {e}")))?;
        let (n, m, p) = (model.n(), model.m(), model.p());
        let noise = self.plant.noise.build()?;
        let design_noise = match &self.plant.design_noise {
            Some(d) => d.build()?,
            None => noise.clone(),
        };
        noise.validate_psd().map_err(|e| Error::invalid(format!("plant.noise: {e}")))?;
        design_noise
            .validate()
            .map_err(|e| Error::invalid(format!("plant.design_noise: {e}")))?;
        let gains = match &self.plant.gains {
            GainSection::Lq { qx, ru } => {
                let f = lq_gain(&model, &linalg::mat_from_rows(qx)?, &linalg::mat_from_rows(ru)?)?.gain;
                let l = kalman_gain(&model, &design_noise)?.gain;
                FactorGains::new(f, l)
            }
            GainSection::Explicit(g) => {
                let (f, l) = g.build()?;
                FactorGains::new(f, l)
            }
        };
        let fault = match &self.plant.fault {
            Some(fe) => {
                let start = clock.steps("fault.start", fe.start)?;
                let end = clock.steps("fault.end", fe.end)?;
                if end > steps {
                    return Err(Error::invalid(format!("fault window ends at step {end}, beyond the run length {steps}")));
                }
                let profile = match &fe.profile {
                    FaultProfileEntry::Constant(v) => FaultProfile::Constant(vector(v)),
                    FaultProfileEntry::Gaussian { mean, cov } => FaultProfile::Gaussian {
                        mean: vector(mean),
                        cov: linalg::mat_from_rows(cov)?,
                    },
                };
                let e_f = linalg::mat_from_rows(&fe.e_f)?;
                let f_f = linalg::mat_from_rows(&fe.f_f)?;
                // An all-zero E_f may be written as empty rows.
                let e_f = if e_f.nrows() == 0 { Mat::zeros(n, f_f.ncols()) } else { e_f };
                let spec = FaultSpec {
                    e_f,
                    f_f,
                    profile,
                    start,
                    end,
                };
                spec.validate(n, p).map_err(|e| Error::invalid(format!("plant.fault: {e}")))?;
                Some(spec)
            }
            None => None,
        };
        let modes = match &self.plant.modes {
            Some(ms) => {
                let pairs = ms.modes.iter().map(GainPair::build).collect::<Result<Vec<_>>>()?;
                let mut sched = Vec::new();
                for sw in &ms.schedule {
                    sched.push((clock.steps("modes.schedule", sw.time)?, sw.mode));
                }
                Some(ModeSet::new(&model, pairs, sched)?)
            }
            None => None,
        };
        let realize = |what: &str, s: &SystemSpec| s.realize(ts).map_err(|e| Error::invalid(format!("{what}: {e}")));
        let q_r1 = realize("filters.q_r1", &self.filters.q_r1)?;
        let q_r2 = realize("filters.q_r2", &self.filters.q_r2)?;
        let q_umc = realize("filters.q_umc", &self.filters.q_umc)?;
        let psi = self.filters.psi.as_ref().map(|s| realize("filters.psi", s)).transpose()?;
        let q_v = realize("reference.q_v", &self.reference.q_v)?;
        let mut segments = Vec::new();
        for seg in &self.reference.segments {
            segments.push((clock.steps("reference.segments", seg.time)?, vector(&seg.target)));
        }
        let reference = ReferenceConfig::new(segments, self.reference.vbar0.as_deref().map(vector), q_v)?;
        let plant = PlantConfig {
            model: model.clone(),
            noise,
            design_noise: design_noise.clone(),
            fault,
            gains: gains.clone(),
            q_r1: q_r1.clone(),
            q_r2: q_r2.clone(),
            q_umc: q_umc.clone(),
            psi: psi.clone(),
            reference: reference.clone(),
            modes,
        };
        plant.validate()?;
        let factors = build_bezout_factors(&model, &gains)?;
        let sigma_ry = innovation_covariance(&model, &design_noise, &gains.l)?;
        let det = &self.detectors;
        let schedule = match &det.schedule {
            Some(entries) => {
                let mut phases = Vec::new();
                for e in entries {
                    phases.push((e.phase, clock.steps("detectors.schedule", e.dwell)?));
                }
                DetectorSchedule::new(phases, clock.steps("detectors.settle", det.settle)?)?
            }
            None => DetectorSchedule::regular_only(),
        };
        let mut glr_calibration = None;
        let pdd = match &det.pdd {
            Some(ps) => {
                let psi = psi
                    .clone()
                    .ok_or_else(|| Error::invalid("detectors.pdd needs filters.psi"))?;
                let threshold = match ps.threshold {
                    GlrThreshold::Fixed(t) => t,
                    GlrThreshold::Calibrate { far, windows } => {
                        if !(far > 0.0 && far < 1.0) || windows == 0 {
                            return Err(Error::invalid("GLR calibration needs 0 < far < 1 and windows > 0"));
                        }
                        glr_calibration = Some((far, windows));
                        f64::INFINITY
                    }
                };
                let sigma_nominal = match &ps.sigma_nominal {
                    Some(r) => linalg::mat_from_rows(r)?,
                    None => Mat::identity(p, p),
                };
                Some(PddConfig {
                    psi,
                    window: ps.window,
                    glr_threshold: threshold,
                    sigma_nominal,
                })
            }
            None => None,
        };
        let mc = McConfig {
            factors: factors.clone(),
            q_r1,
            q_r2,
            q_umc,
            reference,
            sigma_ry,
            alpha: det.alpha,
            switch: det.switch.as_ref().map(|s| SwitchParams {
                s: s.s,
                gamma: s.gamma,
                l0: s.l0,
                bounds_override: s.bounds.map(|b| (b[0], b[1])),
            }),
            pdd,
            schedule,
        };
        mc.validate()?;
        let traditional_q = match &self.configuration {
            Configuration::Modified => None,
            Configuration::Traditional { q } => {
                let q = realize("configuration.q", q)?;
                if q.shape() != (m, p) {
                    return Err(Error::dim("traditional Youla parameter must be m x p"));
                }
                Some(q)
            }
        };
        let layout = if traditional_q.is_some() {
            ChannelLayout::Traditional
        } else {
            ChannelLayout::Modified
        };
        let mut attacks = Vec::new();
        for (i, a) in self.attacks.iter().enumerate() {
            let what = format!("attacks[{i}]");
            let window = Window::new(clock.steps(&what, a.start)?, clock.steps(&what, a.end)?)?;
            if window.end > steps {
                return Err(Error::invalid(format!("{what}: window ends at step {}, beyond the run length {steps}", window.end)));
            }
            let spec = match &a.variant {
                AttackVariant::Covert { a_umc, q_r2: None } => covert_attack_gen(&mc, a_umc.clone(), window),
                v => AttackSpec {
                    window,
                    variant: v.clone(),
                },
            };
            spec.validate(layout, m, p, ts)
                .map_err(|e| Error::invalid(format!("{what}: {e}")))?;
            attacks.push(spec);
        }
        let mut reconfigurations = Vec::new();
        for (i, r) in self.reconfigurations.iter().enumerate() {
            let what = format!("reconfigurations[{i}]");
            let step = clock.steps(&what, r.time)?;
            if step >= steps.max(1) {
                return Err(Error::invalid(format!("{what}: step {step} lies beyond the run length {steps}")));
            }
            let opt = |s: &Option<SystemSpec>| s.as_ref().map(|s| realize(&what, s)).transpose();
            let ev = Reconfiguration {
                step,
                q_r1: opt(&r.q_r1)?,
                q_r2: opt(&r.q_r2)?,
                q_umc: opt(&r.q_umc)?,
                q: opt(&r.q)?,
            };
            if traditional_q.is_some() && (ev.q_r1.is_some() || ev.q_r2.is_some() || ev.q_umc.is_some()) {
                return Err(Error::invalid(format!("{what}: the traditional configuration only reconfigures q")));
            }
            if traditional_q.is_none() && ev.q.is_some() {
                return Err(Error::invalid(format!("{what}: q applies to the traditional configuration only")));
            }
            reconfigurations.push(ev);
        }
        reconfigurations.sort_by_key(|r| r.step);
        Ok(ResolvedScenario {
            config: self.clone(),
            steps,
            plant,
            mc,
            traditional_q,
            attacks,
            reconfigurations,
            glr_calibration,
            warnings: clock.warnings,
        })
    }
}

/// Load a config file, or a built-in preset when `path` names one.
pub fn load_config(path: &str) -> Result<ScenarioConfig> {
    if let Some(cfg) = preset(path) {
        return Ok(cfg);
    }
    let text = std::fs::read_to_string(path)?;
    let cfg = ScenarioConfig::from_json(&text)?;
    cfg.resolve()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests;
