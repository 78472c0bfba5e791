//! Built-in scenarios for the three-wheel robot.

use crate::attacks::{AttackVariant, Profile, StealthOperator, StealthStats};
use crate::mcstation::DetectorPhase;
use crate::robotino;
use crate::sscore::{linalg, Mat, SystemSpec, Tf};

use super::{
    AttackEntry, Configuration, DetectorSection, FaultEntry, FaultProfileEntry, FilterSection, GainSection,
    GlrThreshold, NoiseSection, PddSection, PhaseEntry, PlantSection, ReconfigEntry, ReferenceSection, ScenarioConfig,
    SwitchSection, TargetSegment,
};

const NAMES: &[&str] = &[
    "robotino.nominal",
    "robotino.e1",
    "robotino.e2",
    "robotino.e3",
    "robotino.e4",
    "robotino.e4_input_only",
    "robotino.e5",
    "robotino.e6",
];

pub fn preset_names() -> &'static [&'static str] {
    NAMES
}

/// Built-in config by name, `None` if no preset has that name.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "robotino.nominal" => nominal(),
        "robotino.e1" => e1(),
        "robotino.e2" => e2(),
        "robotino.e3" => e3(),
        "robotino.e4" => e4(true),
        "robotino.e4_input_only" => e4(false),
        "robotino.e5" => e5(),
        "robotino.e6" => e6(),
        _ => return None,
    };
    Some(cfg)
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    linalg::mat_to_rows(m)
}

fn eye_rows(n: usize, s: f64) -> Vec<Vec<f64>> {
    rows(&(Mat::identity(n, n) * s))
}

fn diag_tf(entries: Vec<Tf>) -> SystemSpec {
    SystemSpec::Diag(entries)
}

pub(crate) fn q_r1_spec() -> SystemSpec {
    diag_tf(vec![Tf::new(vec![1.0], vec![1.0, -0.1]); 3])
}

pub(crate) fn q_r2_spec(scale: f64) -> SystemSpec {
    diag_tf(
        [0.4, 0.3, 0.2]
            .iter()
            .map(|c| Tf::new(vec![scale, scale * c], vec![1.0, 0.1]))
            .collect(),
    )
}

pub(crate) fn q_umc_spec() -> SystemSpec {
    diag_tf(
        [0.4, 0.3, 0.2]
            .iter()
            .map(|c| Tf::new(vec![10.0, 1.0], vec![1.0, *c]))
            .collect(),
    )
}

pub(crate) fn psi_spec() -> SystemSpec {
    let mut d = Mat::zeros(3, 6);
    d.view_mut((0, 0), (3, 3)).copy_from(&(Mat::identity(3, 3) * 0.05));
    d.view_mut((0, 3), (3, 3)).copy_from(&Mat::identity(3, 3));
    SystemSpec::Gain(rows(&d))
}

/// Periodic input attack on motors 1 and 3, `+-0.05 sin(0.2 pi k)`, plus `offset`.
pub(crate) fn input_attack(offset: f64) -> Profile {
    let sine = Profile::sine(&[0.05, 0.0, -0.05], 0.2 * std::f64::consts::PI);
    if offset == 0.0 {
        sine
    } else {
        sine.plus(Profile::constant(&[offset, 0.0, offset]))
    }
}

/// Gaussian injection `N(-0.025, 1e-10)` on the second residual channel.
pub(crate) fn residual_attack() -> Profile {
    Profile::gaussian(&[0.0, -0.025, 0.0], &[0.0, 1e-10, 0.0])
}

/// Robot with the nominal filters, LQ and Kalman gains and two target segments.
pub fn nominal() -> ScenarioConfig {
    let a = robotino::a_f();
    let b = robotino::b_f();
    ScenarioConfig {
        name: "robotino.nominal".into(),
        ts: robotino::TS,
        duration: 200.0,
        steps: None,
        seed: 1,
        plant: PlantSection {
            model: SystemSpec::Ss {
                a: rows(&a),
                b: rows(&b),
                c: eye_rows(3, 1.0),
                d: eye_rows(3, 0.0),
            },
            noise: NoiseSection {
                sigma_w: eye_rows(3, robotino::NOISE_VAR),
                sigma_nu: eye_rows(3, robotino::NOISE_VAR),
            },
            design_noise: None,
            gains: GainSection::Lq {
                qx: eye_rows(3, 1.0),
                ru: eye_rows(3, 1.0),
            },
            fault: None,
            modes: None,
        },
        filters: FilterSection {
            q_r1: q_r1_spec(),
            q_r2: q_r2_spec(-0.15),
            q_umc: q_umc_spec(),
            psi: None,
        },
        reference: ReferenceSection {
            q_v: SystemSpec::Gain(rows(&robotino::q_v_gain())),
            segments: robotino::default_targets()
                .into_iter()
                .map(|(time, v)| TargetSegment {
                    time,
                    target: v.to_vec(),
                })
                .collect(),
            vbar0: None,
        },
        detectors: DetectorSection::default(),
        attacks: Vec::new(),
        reconfigurations: Vec::new(),
        configuration: Configuration::Modified,
    }
}

fn q_r2_swap(time: f64, scale: f64) -> ReconfigEntry {
    ReconfigEntry {
        time,
        q_r1: None,
        q_r2: Some(q_r2_spec(scale)),
        q_umc: None,
        q: None,
    }
}

/// Sensor-1 bias `N(0.025, 1e-6)` over [50, 125) s and the fault-tolerant `Q_r2` from 125 s.
pub fn e1() -> ScenarioConfig {
    let mut cfg = nominal();
    cfg.name = "robotino.e1".into();
    cfg.plant.fault = Some(FaultEntry {
        start: 50.0,
        end: 125.0,
        e_f: vec![vec![0.0]; 3],
        f_f: vec![vec![1.0], vec![0.0], vec![0.0]],
        profile: FaultProfileEntry::Gaussian {
            mean: vec![0.025],
            cov: vec![vec![1e-6]],
        },
    });
    cfg.reconfigurations = vec![q_r2_swap(125.0, -90.0)];
    cfg
}

fn e2_attack(start: f64, end: f64) -> AttackEntry {
    AttackEntry {
        start,
        end,
        variant: AttackVariant::Additive {
            a_umc: Some(input_attack(0.0)),
            a_ryu: Some(residual_attack()),
            a_y: None,
        },
    }
}

/// Additive input and residual attacks over [50, 150) s, resilient `Q_r2` over [100, 150) s.
pub fn e2() -> ScenarioConfig {
    let mut cfg = nominal();
    cfg.name = "robotino.e2".into();
    cfg.attacks = vec![e2_attack(50.0, 150.0)];
    cfg.reconfigurations = vec![q_r2_swap(100.0, -90.0), q_r2_swap(150.0, -0.15)];
    cfg
}

/// Switch LLR detector with fixed bounds 0.1433 and 1.0474; attacks over [20, 170) s.
pub fn e3() -> ScenarioConfig {
    let mut cfg = nominal();
    cfg.name = "robotino.e3".into();
    cfg.attacks = vec![e2_attack(20.0, 170.0)];
    cfg.detectors.switch = Some(SwitchSection {
        s: 30,
        gamma: 500,
        l0: 1e-4,
        bounds: Some([0.1433, 1.0474]),
    });
    cfg
}

/// Traditional configuration with `Q = Q_r1`, attacked on the input and, optionally, the output.
pub fn e4(with_output: bool) -> ScenarioConfig {
    let mut cfg = nominal();
    cfg.name = if with_output { "robotino.e4" } else { "robotino.e4_input_only" }.into();
    cfg.configuration = Configuration::Traditional { q: q_r1_spec() };
    cfg.attacks = vec![AttackEntry {
        start: 50.0,
        end: 150.0,
        variant: AttackVariant::Additive {
            a_umc: Some(input_attack(0.0)),
            a_ryu: None,
            a_y: with_output.then(residual_attack),
        },
    }];
    cfg
}

fn stealth_detectors(threshold: GlrThreshold, window: usize, settle: f64) -> DetectorSection {
    DetectorSection {
        pdd: Some(PddSection {
            window,
            threshold,
            sigma_nominal: None,
        }),
        schedule: Some(vec![
            PhaseEntry {
                phase: DetectorPhase::Regular,
                dwell: 15.0,
            },
            PhaseEntry {
                phase: DetectorPhase::Additive,
                dwell: 5.0,
            },
            PhaseEntry {
                phase: DetectorPhase::Multiplicative,
                dwell: 5.0,
            },
        ]),
        settle,
        ..DetectorSection::default()
    }
}

/// Covert input attack with offset over [75, 100) s under the 15/5/5 s detector schedule.
pub fn e5() -> ScenarioConfig {
    let mut cfg = nominal();
    cfg.name = "robotino.e5".into();
    cfg.duration = 125.0;
    cfg.filters.psi = Some(psi_spec());
    cfg.detectors = stealth_detectors(GlrThreshold::Calibrate { far: 0.01, windows: 2000 }, 30, 2.0);
    cfg.attacks = vec![AttackEntry {
        start: 75.0,
        end: 100.0,
        variant: AttackVariant::Covert {
            a_umc: input_attack(1.0),
            q_r2: None,
        },
    }];
    cfg
}

/// `Pi_a = -I` feedback stealth over [25, 50) s with a zero target.
pub fn e6() -> ScenarioConfig {
    let mut cfg = nominal();
    cfg.name = "robotino.e6".into();
    cfg.duration = 75.0;
    cfg.filters.psi = Some(psi_spec());
    cfg.reference.segments = vec![TargetSegment {
        time: 0.0,
        target: vec![0.0; 3],
    }];
    cfg.detectors = stealth_detectors(GlrThreshold::Calibrate { far: 0.01, windows: 2000 }, 30, 2.0);
    cfg.attacks = vec![AttackEntry {
        start: 25.0,
        end: 50.0,
        variant: AttackVariant::FeedbackStealth {
            pi_a: StealthOperator::NegIdentity,
            stats: StealthStats::Given {
                zeta: vec![0.0; 3],
                sigma: eye_rows(3, 1.0),
            },
        },
    }];
    cfg
}
