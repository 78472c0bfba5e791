use super::experiments::{attack_free, reference_config};
use super::*;
use crate::mcstation::DetectorPhase;
use crate::Error;

fn short(mut cfg: ScenarioConfig, steps: usize) -> ScenarioConfig {
    cfg.steps = Some(steps);
    cfg
}

#[test]
fn noise_free_attack_free_run_has_vanishing_residuals() {
    let cfg = short(reference_config(&presets::nominal()), 400);
    let log = run_scenario(&cfg).unwrap();
    assert_eq!(log.trajectory.len(), 400);
    for row in &log.trajectory {
        assert!(row.r_y.amax() < 1e-10, "r_y at step {}: {}", row.k, row.r_y.amax());
        assert!(row.j_rel < 1e-12);
    }
    assert!(log.verdicts_of("attack_chi2").all(|v| !v.verdict.alarm));
}

#[test]
fn same_seed_gives_identical_runs() {
    let cfg = presets::e2();
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.verdicts, b.verdicts);
    let mut other = cfg.clone();
    other.seed += 1;
    let c = run_scenario(&other).unwrap();
    assert_ne!(a.trajectory[10].y, c.trajectory[10].y);
}

#[test]
fn presets_round_trip_through_json() {
    for name in preset_names() {
        let cfg = preset(name).unwrap();
        let back = ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back, "{name}");
        cfg.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(preset("robotino.missing").is_none());
}

#[test]
fn unknown_fields_are_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&presets::nominal().to_json().unwrap()).unwrap();
    v["bogus"] = serde_json::json!(1);
    assert!(matches!(ScenarioConfig::from_json(&v.to_string()), Err(Error::Parse(_))));
}

#[test]
fn fault_window_beyond_run_is_a_validation_error() {
    let mut cfg = presets::e1();
    cfg.duration = 100.0;
    assert!(matches!(cfg.resolve(), Err(Error::Validation(_))));
}

#[test]
fn attack_window_beyond_run_is_a_validation_error() {
    let mut cfg = presets::e2();
    cfg.steps = Some(1200);
    assert!(matches!(cfg.resolve(), Err(Error::Validation(_))));
}

#[test]
fn negative_times_are_rejected() {
    let mut cfg = presets::e2();
    cfg.attacks[0].start = -1.0;
    assert!(matches!(cfg.resolve(), Err(Error::Validation(_))));
}

#[test]
fn fractional_boundary_warns_and_rounds_down() {
    let mut cfg = presets::e2();
    cfg.attacks[0].start = 50.05;
    let r = cfg.resolve().unwrap();
    assert_eq!(r.warnings.len(), 1, "{:?}", r.warnings);
    assert!(r.warnings[0].contains("step 500"));
    assert!(presets::e2().resolve().unwrap().warnings.is_empty());
}

#[test]
fn zero_step_run_emits_headers_only() {
    let cfg = short(presets::nominal(), 0);
    let log = run_scenario(&cfg).unwrap();
    assert!(log.trajectory.is_empty());
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&log, dir.path()).unwrap();
    let traj = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert_eq!(traj, format!("{}\n", TRAJECTORY_COLUMNS.join(",")));
    let verd = std::fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    assert_eq!(verd, format!("{}\n", VERDICT_COLUMNS.join(",")));
}

#[test]
fn emitted_files_are_reproducible_and_parse_back() {
    let cfg = presets::e2();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let log = run_scenario(&cfg).unwrap();
    emit_outputs(&log, &a).unwrap();
    emit_outputs(&run_scenario(&cfg).unwrap(), &b).unwrap();
    for f in ["trajectories.csv", "verdicts.csv", "report.txt", "config_echo.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mut rd = csv::Reader::from_path(a.join("trajectories.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), TRAJECTORY_COLUMNS);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2000);
    let y1: f64 = rows[123][5].parse().unwrap();
    assert_eq!(y1, log.trajectory[123].y[0]);
    let echo = std::fs::read_to_string(a.join("config_echo.json")).unwrap();
    assert_eq!(ScenarioConfig::from_json(&echo).unwrap(), cfg);
}

#[test]
fn schedule_phases_follow_the_dwell_times() {
    let cfg = short(attack_free(&presets::e6()), 500);
    let log = run_scenario(&cfg).unwrap();
    // 15 s regular, 5 s additive, 5 s multiplicative at Ts = 0.1 s.
    let expect = |k: usize| match k % 250 {
        0..=149 => DetectorPhase::Regular,
        150..=199 => DetectorPhase::Additive,
        _ => DetectorPhase::Multiplicative,
    };
    for row in &log.trajectory {
        assert_eq!(row.phase, Some(expect(row.k)), "step {}", row.k);
    }
    // No verdicts during the settle period after each phase change.
    for v in &log.verdicts {
        if v.verdict.detector == "fault_chi2" {
            continue;
        }
        let into = (v.k % 250) - [0, 150, 200][(v.k % 250 >= 150) as usize + (v.k % 250 >= 200) as usize];
        assert!(into >= 20, "{} at step {}", v.verdict.detector, v.k);
    }
}

#[test]
fn reconfiguration_swaps_both_sides_at_one_step() {
    let cfg = short(reference_config(&presets::e1()), 1300);
    let log = run_scenario(&cfg).unwrap();
    let steps: Vec<usize> = log.performance.iter().map(|(k, _)| *k).collect();
    assert_eq!(steps, vec![0, 1250]);
    // Without noise or attack a simultaneous swap keeps the loop exactly consistent.
    for row in &log.trajectory {
        assert!(row.r_y.amax() < 1e-10, "step {}", row.k);
    }
    assert!(log.verdicts_of("attack_chi2").all(|v| !v.verdict.alarm));
    assert!((log.performance[1].1.gamma_theta - 1.1099e-3).abs() < 1e-7);
}

#[test]
fn traditional_configuration_reports_its_own_detector() {
    let log = run_scenario(&presets::e4(true)).unwrap();
    assert_eq!(log.verdicts_of("traditional_chi2").count(), 2000);
    assert_eq!(log.verdicts_of("attack_chi2").count(), 0);
}
