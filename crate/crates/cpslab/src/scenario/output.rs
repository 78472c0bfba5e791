//! CSV, report and config-echo files for a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::mcstation::DetectorPhase;

use super::RunLog;

/// Trajectory columns for the three-input, three-output robot; other sizes number
/// their channels the same way.
pub const TRAJECTORY_COLUMNS: &[&str] = &[
    "k", "t", "u1", "u2", "u3", "y1", "y2", "y3", "ry1", "ry2", "ry3", "ru1", "ru2", "ru3", "ryu1", "ryu2", "ryu3",
    "J_rel",
];

pub const VERDICT_COLUMNS: &[&str] = &["k", "t", "detector", "k0", "statistic", "threshold", "alarm", "branch", "phase"];

fn trajectory_header(m: usize, p: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "t".to_string()];
    let mut chan = |prefix: &str, n: usize| h.extend((1..=n).map(|i| format!("{prefix}{i}")));
    chan("u", m);
    chan("y", p);
    chan("ry", p);
    chan("ru", m);
    chan("ryu", p);
    h.push("J_rel".into());
    h
}

fn phase_name(p: Option<DetectorPhase>) -> &'static str {
    match p {
        Some(DetectorPhase::Regular) => "regular",
        Some(DetectorPhase::Additive) => "additive",
        Some(DetectorPhase::Multiplicative) => "multiplicative",
        None => "",
    }
}

/// Shortest representation that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn dims(log: &RunLog) -> Result<(usize, usize)> {
    let model = log.config.plant.model.realize(log.config.ts)?;
    Ok((model.m(), model.p()))
}

fn trajectories_csv(log: &RunLog) -> Result<Vec<u8>> {
    let (m, p) = dims(log)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(trajectory_header(m, p))?;
    for r in &log.trajectory {
        let mut rec = vec![r.k.to_string(), num(r.t)];
        for v in [&r.u, &r.y, &r.r_y, &r.r_u, &r.r_yu] {
            rec.extend(v.iter().map(|x| num(*x)));
        }
        rec.push(num(r.j_rel));
        w.write_record(rec)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn verdicts_csv(log: &RunLog) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(VERDICT_COLUMNS)?;
    for r in &log.verdicts {
        let v = &r.verdict;
        w.write_record([
            r.k.to_string(),
            num(r.t),
            v.detector.clone(),
            v.k0.to_string(),
            num(v.statistic),
            num(v.threshold),
            (v.alarm as u8).to_string(),
            v.branch.map_or_else(String::new, |b| b.to_string()),
            phase_name(r.phase).to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Plain-text run summary: seed, length, alarm counts per detector, performance norms, warnings.
pub fn report_text(log: &RunLog) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", log.name);
    let _ = writeln!(s, "seed: {}", log.seed);
    let _ = writeln!(s, "ts: {}", num(log.ts));
    let _ = writeln!(s, "steps: {}", log.steps);
    let mut names: Vec<&str> = log.verdicts.iter().map(|v| v.verdict.detector.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    for name in names {
        let (mut n, mut a) = (0usize, 0usize);
        for v in log.verdicts_of(name) {
            n += 1;
            a += v.verdict.alarm as usize;
        }
        let th = log.verdicts_of(name).next().map_or(f64::NAN, |v| v.verdict.threshold);
        let _ = writeln!(s, "detector {name}: {a} alarms in {n} evaluations, threshold {}", num(th));
    }
    if let Some(th) = log.glr_threshold {
        let _ = writeln!(s, "calibrated GLR threshold: {}", num(th));
    }
    for (k, rep) in &log.performance {
        let _ = writeln!(
            s,
            "performance from step {k}: gamma_theta = {}, gamma_ry = {}",
            num(rep.gamma_theta),
            num(rep.gamma_ry)
        );
    }
    for w in &log.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Write `trajectories.csv`, `verdicts.csv`, `report.txt` and `config_echo.json` into `dir`.
pub fn emit_outputs(log: &RunLog, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut echo = log.config.to_json()?;
    echo.push('\n');
    let files: [(&str, Vec<u8>); 4] = [
        ("trajectories.csv", trajectories_csv(log)?),
        ("verdicts.csv", verdicts_csv(log)?),
        ("report.txt", report_text(log).into_bytes()),
        ("config_echo.json", echo.into_bytes()),
    ];
    let mut out = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        out.push(path);
    }
    Ok(out)
}
