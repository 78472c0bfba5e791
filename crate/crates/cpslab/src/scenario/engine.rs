//! Step-by-step execution of a resolved scenario.
//!
//! Each step the plant output, the plant-side computation, both channel directions
//! and the MC-station law form one algebraic loop when the filters have direct
//! feedthrough. The loop is solved within the sample, so the realized values are
//! those of the fixed ordering plant -> channel -> MC-station -> channel with no
//! transport delay. Detectors consume the committed MC-bound payload.

use crate::attacks::{AppliedAttack, AttackRuntime};
use crate::error::{Error, Result};
use crate::mcstation::{
    calibrate_threshold, resilient_performance_check, DetectorPhase, DetectorSchedule, DetectorVerdict, McStation,
    PerformanceReport, TraditionalMc,
};
use crate::plantside::{AffineLoop, PlantRuntime};
use crate::sscore::Vector;
use crate::stats;

use super::{ResolvedScenario, ScenarioConfig};

/// Signals beyond this magnitude abort the run.
const DIVERGENCE_GUARD: f64 = 1e9;
/// Offset applied to the scenario seed for the GLR calibration run.
const CALIBRATION_SEED_OFFSET: u64 = 0x5EED_CA1B;

/// One row of the trajectory table.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t: f64,
    pub u: Vector,
    pub y: Vector,
    pub r_y: Vector,
    pub r_u: Vector,
    pub r_yu: Vector,
    pub j_rel: f64,
    /// Noise- and fault-free output `C x + D u`.
    pub y_true: Vector,
    /// Control command sent by the MC-station.
    pub u_mc: Vector,
    pub phase: Option<DetectorPhase>,
}

/// One detector evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct VerdictRow {
    pub k: usize,
    pub t: f64,
    pub phase: Option<DetectorPhase>,
    pub verdict: DetectorVerdict,
}

/// Everything recorded during a run.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub name: String,
    pub seed: u64,
    pub ts: f64,
    pub steps: usize,
    pub trajectory: Vec<TrajectoryRow>,
    pub verdicts: Vec<VerdictRow>,
    pub applied: Vec<AppliedAttack>,
    /// `(step, report)` for the initial parameters and after each reconfiguration.
    pub performance: Vec<(usize, PerformanceReport)>,
    /// Threshold obtained from the attack-free calibration run, if one was requested.
    pub glr_threshold: Option<f64>,
    pub config: ScenarioConfig,
    pub warnings: Vec<String>,
}

impl RunLog {
    /// Verdicts of one detector in step order.
    pub fn verdicts_of<'a>(&'a self, detector: &'a str) -> impl Iterator<Item = &'a VerdictRow> + 'a {
        self.verdicts.iter().filter(move |v| v.verdict.detector == detector)
    }
}

#[derive(Clone, Debug)]
enum Station {
    Modified(Box<McStation>),
    Traditional(Box<TraditionalMc>),
}

/// Output of one simulated step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub row: TrajectoryRow,
    pub verdicts: Vec<DetectorVerdict>,
    pub applied: AppliedAttack,
    pub performance: Option<PerformanceReport>,
}

/// Stepper for a resolved scenario.
#[derive(Clone, Debug)]
pub struct Simulation {
    scenario: ResolvedScenario,
    plant: PlantRuntime,
    station: Station,
    attacks: AttackRuntime,
    lp: AffineLoop,
    fault_threshold: f64,
    next_reconfig: usize,
    k: usize,
}

impl Simulation {
    pub fn new(scenario: &ResolvedScenario) -> Result<Self> {
        let seed = scenario.config.seed;
        let plant = PlantRuntime::new(scenario.plant.clone(), seed)?;
        let (m, p) = (scenario.plant.model.m(), scenario.plant.model.p());
        let station = match &scenario.traditional_q {
            None => Station::Modified(Box::new(McStation::new(scenario.mc.clone())?)),
            Some(q) => Station::Traditional(Box::new(TraditionalMc::new(
                &scenario.mc.factors,
                q.clone(),
                scenario.mc.reference.clone(),
                &scenario.mc.sigma_ry,
                scenario.mc.alpha,
            )?)),
        };
        let attacks = AttackRuntime::new(&scenario.attacks, scenario.layout(), m, p, scenario.plant.model.ts(), seed)?;
        Ok(Simulation {
            fault_threshold: stats::chi2_quantile(1.0 - scenario.mc.alpha, p as f64)?,
            scenario: scenario.clone(),
            plant,
            station,
            attacks,
            lp: AffineLoop::default(),
            next_reconfig: 0,
            k: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn plant(&self) -> &PlantRuntime {
        &self.plant
    }

    /// Performance norms of the MC-station's current parameters.
    pub fn performance(&self) -> Result<Option<PerformanceReport>> {
        match &self.station {
            Station::Modified(mc) => {
                let c = mc.config();
                Ok(Some(resilient_performance_check(&c.factors, &c.q_r1, &c.q_r2, &c.q_umc, (None, None))?))
            }
            Station::Traditional(_) => Ok(None),
        }
    }

    /// Apply the reconfiguration events due now on both sides.
    fn reconfigure(&mut self) -> Result<bool> {
        let mut changed = false;
        while let Some(ev) = self.scenario.reconfigurations.get(self.next_reconfig) {
            if ev.step != self.k {
                break;
            }
            match &mut self.station {
                Station::Modified(mc) => {
                    self.plant
                        .reconfigure(ev.q_r1.clone(), ev.q_r2.clone(), ev.q_umc.clone())?;
                    mc.reconfigure(ev.q_r1.clone(), ev.q_r2.clone(), ev.q_umc.clone())?;
                }
                Station::Traditional(tr) => {
                    if let Some(q) = &ev.q {
                        tr.reconfigure(q.clone())?;
                    }
                }
            }
            self.next_reconfig += 1;
            changed = true;
        }
        Ok(changed)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let k = self.k;
        let performance = if self.reconfigure()? { self.performance()? } else { None };
        let (m, p) = (self.scenario.plant.model.m(), self.scenario.plant.model.p());
        self.attacks.prepare();
        let phase = match &self.station {
            Station::Modified(mc) => {
                let ph = mc.phase();
                self.plant.set_pdd_active(ph != DetectorPhase::Regular)?;
                Some(ph)
            }
            Station::Traditional(_) => None,
        };
        let (plant, attacks, station) = (&mut self.plant, &self.attacks, &self.station);
        // Unknowns: [u_MC; MC-bound payload] as sent, before the channel.
        let (xi, (eval, to_mc_a)) = self.lp.solve(m + p, |xi: &Vector| {
            let (u_sent, out_sent) = (xi.rows(0, m).into_owned(), xi.rows(m, p).into_owned());
            let (ua, oa) = attacks.apply(&u_sent, &out_sent)?;
            let (eval, u_next, out) = match station {
                Station::Modified(mc) => {
                    let ev = plant.evaluate(&ua)?;
                    let out = ev.frame.r_yu.clone();
                    (ev, mc.mc_control(&oa)?, out)
                }
                Station::Traditional(tr) => {
                    let ev = plant.evaluate_direct(&ua)?;
                    let out = ev.frame.y.clone();
                    (ev, tr.control(&oa)?.0, out)
                }
            };
            let mut next = Vector::zeros(m + p);
            next.rows_mut(0, m).copy_from(&u_next);
            next.rows_mut(m, p).copy_from(&out);
            Ok((next, (eval, oa)))
        })?;
        let (u_sent, out_sent) = (xi.rows(0, m).into_owned(), xi.rows(m, p).into_owned());
        let y_true = self.plant.true_output(&eval.frame.u);
        let frame = self.plant.commit(eval)?;
        let applied = self.attacks.commit(&u_sent, &out_sent)?;
        let j_rel = self.plant.j_rel(&frame.r_y);
        let mut verdicts = Vec::new();
        match &mut self.station {
            Station::Modified(mc) => {
                verdicts.push(DetectorVerdict {
                    detector: "fault_chi2".into(),
                    k0: k,
                    statistic: j_rel,
                    threshold: self.fault_threshold,
                    alarm: j_rel > self.fault_threshold,
                    branch: None,
                });
                verdicts.extend(mc.commit(&to_mc_a)?.verdicts);
            }
            Station::Traditional(tr) => verdicts.push(tr.step(&to_mc_a)?.verdict),
        }
        for (name, v) in [("u", &frame.u), ("y", &frame.y), ("r_yu", &frame.r_yu), ("u_MC", &u_sent)] {
            if v.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_GUARD) {
                return Err(Error::numerical(format!("{name} diverged at step {k} (|.| = {:e})", v.amax())));
            }
        }
        self.k += 1;
        Ok(StepRecord {
            row: TrajectoryRow {
                k,
                t: k as f64 * self.scenario.plant.model.ts(),
                u: frame.u,
                y: frame.y,
                r_y: frame.r_y,
                r_u: frame.r_u,
                r_yu: frame.r_yu,
                j_rel,
                y_true,
                u_mc: u_sent,
                phase,
            },
            verdicts,
            applied,
            performance,
        })
    }
}

/// GLR threshold at false-alarm rate `far` from `windows` attack- and fault-free
/// windows of a continuous multiplicative-phase run with a derived seed.
pub fn calibrate_glr(scenario: &ResolvedScenario, far: f64, windows: usize) -> Result<f64> {
    let pdd = scenario
        .mc
        .pdd
        .as_ref()
        .ok_or_else(|| Error::invalid("GLR calibration needs PDD settings"))?;
    if scenario.traditional_q.is_some() {
        return Err(Error::invalid("GLR calibration applies to the modified configuration"));
    }
    let mut cal = scenario.clone();
    let settle = scenario.mc.schedule.settle;
    cal.config.seed = scenario.config.seed.wrapping_add(CALIBRATION_SEED_OFFSET);
    cal.attacks.clear();
    cal.reconfigurations.clear();
    cal.plant.fault = None;
    cal.mc.schedule = DetectorSchedule::new(vec![(DetectorPhase::Multiplicative, 1)], settle)?;
    if let Some(pc) = &mut cal.mc.pdd {
        pc.glr_threshold = f64::INFINITY;
    }
    cal.steps = settle + windows * pdd.window;
    let mut sim = Simulation::new(&cal)?;
    let mut samples = Vec::with_capacity(windows);
    for _ in 0..cal.steps {
        for v in sim.step()?.verdicts {
            if v.detector == "glr_pdd" {
                samples.push(v.statistic);
            }
        }
    }
    calibrate_threshold(&samples, far)
}

/// Resolve and run.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    run_resolved(&cfg.resolve()?)
}

pub fn run_resolved(scenario: &ResolvedScenario) -> Result<RunLog> {
    let mut scenario = scenario.clone();
    let mut glr_threshold = None;
    if let Some((far, windows)) = scenario.glr_calibration {
        let th = calibrate_glr(&scenario, far, windows)?;
        if let Some(pc) = &mut scenario.mc.pdd {
            pc.glr_threshold = th;
        }
        glr_threshold = Some(th);
    }
    let mut sim = Simulation::new(&scenario)?;
    let mut log = RunLog {
        name: scenario.config.name.clone(),
        seed: scenario.config.seed,
        ts: scenario.plant.model.ts(),
        steps: scenario.steps,
        trajectory: Vec::with_capacity(scenario.steps),
        verdicts: Vec::new(),
        applied: Vec::with_capacity(scenario.steps),
        performance: Vec::new(),
        glr_threshold,
        config: scenario.config.clone(),
        warnings: scenario.warnings.clone(),
    };
    if let Some(rep) = sim.performance()? {
        log.performance.push((0, rep));
    }
    for _ in 0..scenario.steps {
        let rec = sim.step()?;
        let (k, t, phase) = (rec.row.k, rec.row.t, rec.row.phase);
        if let Some(rep) = rec.performance {
            log.performance.push((k, rep));
        }
        log.verdicts
            .extend(rec.verdicts.into_iter().map(|verdict| VerdictRow { k, t, phase, verdict }));
        log.trajectory.push(rec.row);
        log.applied.push(rec.applied);
    }
    Ok(log)
}
