use cpslab::attacks::{predict_attacked_closed_loop, AttackVariant, LoopModel};
use cpslab::scenario::{preset, run_resolved, run_scenario, RunLog, ScenarioConfig};
use cpslab::sscore::Vector;

fn stack(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn io(log: &RunLog, k: usize) -> Vector {
    stack(&log.trajectory[k].u, &log.trajectory[k].y)
}

fn without_attacks(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.attacks.clear();
    c
}

fn max_gap(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Attacked minus attack-free `[u; y]` for the same seed against the closed-form prediction.
fn superposition_gap(cfg: &ScenarioConfig) -> f64 {
    let resolved = cfg.resolve().unwrap();
    let mc = &resolved.mc;
    let variant = &cfg.attacks[0].variant;
    let model = match &resolved.traditional_q {
        Some(q) => LoopModel::Traditional { q },
        None => LoopModel::Modified {
            q_r1: &mc.q_r1,
            q_r2: &mc.q_r2,
            q_umc: &mc.q_umc,
        },
    };
    let pred = predict_attacked_closed_loop(&mc.factors, model, variant).unwrap();
    let attacked = run_resolved(&resolved).unwrap();
    let clean = run_scenario(&without_attacks(cfg)).unwrap();
    let inputs: Vec<Vector> = attacked
        .applied
        .iter()
        .map(|a| match variant {
            AttackVariant::Covert { .. } => a.to_plant.clone(),
            _ => stack(&a.to_plant, &a.to_mc),
        })
        .collect();
    let predicted = pred.attack_to_io.simulate(&inputs).unwrap();
    let measured: Vec<Vector> = (0..attacked.steps).map(|k| io(&attacked, k) - io(&clean, k)).collect();
    max_gap(&predicted, &measured)
}

#[test]
fn additive_attack_superposes_on_the_attack_free_run() {
    let mut cfg = preset("robotino.e2").unwrap();
    cfg.reconfigurations.clear();
    assert!(superposition_gap(&cfg) < 1e-8);
}

#[test]
fn traditional_additive_attack_matches_prediction() {
    assert!(superposition_gap(&preset("robotino.e4").unwrap()) < 1e-8);
}

#[test]
fn covert_attack_deviation_is_the_plant_image() {
    let mut cfg = preset("robotino.e5").unwrap();
    cfg.detectors = Default::default();
    cfg.filters.psi = None;
    assert!(superposition_gap(&cfg) < 1e-8);
}

#[test]
fn covert_attack_leaves_the_attack_detector_unchanged() {
    let mut cfg = preset("robotino.e5").unwrap();
    cfg.detectors = Default::default();
    cfg.filters.psi = None;
    let attacked = run_scenario(&cfg).unwrap();
    let clean = run_scenario(&without_attacks(&cfg)).unwrap();
    let stat = |log: &RunLog| -> Vec<f64> { log.verdicts_of("attack_chi2").map(|v| v.verdict.statistic).collect() };
    let (a, c) = (stat(&attacked), stat(&clean));
    assert_eq!(a.len(), c.len());
    let gap = a.iter().zip(&c).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max);
    assert!(gap < 1e-8, "{gap}");
    // The plant itself moves.
    let dev = (750..1000).map(|k| (io(&attacked, k) - io(&clean, k)).amax()).fold(0.0, f64::max);
    assert!(dev > 0.1);
}

#[test]
fn output_residual_is_invariant_to_attacks() {
    for name in ["robotino.e2", "robotino.e5", "robotino.e6"] {
        let cfg = preset(name).unwrap();
        let attacked = run_scenario(&cfg).unwrap();
        let clean = run_scenario(&without_attacks(&cfg)).unwrap();
        let a: Vec<Vector> = attacked.trajectory.iter().map(|r| r.r_y.clone()).collect();
        let c: Vec<Vector> = clean.trajectory.iter().map(|r| r.r_y.clone()).collect();
        assert!(max_gap(&a, &c) < 1e-10, "{name}");
    }
}

#[test]
fn extended_residual_phases_do_not_disturb_the_loop() {
    let with_pdd = without_attacks(&preset("robotino.e6").unwrap());
    let mut plain = with_pdd.clone();
    plain.detectors = Default::default();
    plain.filters.psi = None;
    let a = run_scenario(&with_pdd).unwrap();
    let b = run_scenario(&plain).unwrap();
    let ua: Vec<Vector> = (0..a.steps).map(|k| io(&a, k)).collect();
    let ub: Vec<Vector> = (0..b.steps).map(|k| io(&b, k)).collect();
    assert!(max_gap(&ua, &ub) < 1e-8);
}

#[test]
fn seeds_are_reproducible_across_configs() {
    let cfg = preset("robotino.e3").unwrap();
    let text = cfg.to_json().unwrap();
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&ScenarioConfig::from_json(&text).unwrap()).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.verdicts, b.verdicts);
}
