use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use cpslab_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = cpslab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut CpslabScenario {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { cpslab_scenario_load(c(name).as_ptr(), &mut s) }, CpslabStatus::Ok);
    assert!(!s.is_null());
    s
}

#[test]
fn preset_run_round_trip() {
    let s = load("robotino.e2");
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(cpslab_scenario_set_seed(s, 3), CpslabStatus::Ok);
        assert_eq!(cpslab_run(s, &mut run), CpslabStatus::Ok);
        let (mut n, mut m, mut p) = (0, 0, 0);
        assert_eq!(cpslab_run_dims(run, &mut n, &mut m, &mut p), CpslabStatus::Ok);
        assert_eq!((n, m, p), (2000, 3, 3));
        let mut y = [0.0f64; 3];
        assert_eq!(cpslab_run_signal(run, CpslabSignal::Y, 10, y.as_mut_ptr(), 3), CpslabStatus::Ok);
        assert!(y.iter().all(|v| v.is_finite()));
        let (mut evals, mut alarms) = (0, 0);
        assert_eq!(
            cpslab_run_alarms(run, c("attack_chi2").as_ptr(), &mut evals, &mut alarms),
            CpslabStatus::Ok
        );
        assert_eq!(evals, 2000);
        assert!(alarms > 500);
        let dir = tempfile::tempdir().unwrap();
        let d = c(dir.path().to_str().unwrap());
        assert_eq!(cpslab_run_write(run, d.as_ptr()), CpslabStatus::Ok);
        assert!(dir.path().join("trajectories.csv").exists());
        cpslab_run_free(run);
        cpslab_scenario_free(s);
    }
}

#[test]
fn json_scenarios_are_validated() {
    let cfg = cpslab::scenario::preset("robotino.nominal").unwrap();
    let json = c(&cfg.to_json().unwrap());
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(cpslab_scenario_from_json(json.as_ptr(), &mut s), CpslabStatus::Ok);
        assert_eq!(cpslab_scenario_set_steps(s, 5), CpslabStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(cpslab_run(s, &mut run), CpslabStatus::Ok);
        cpslab_run_free(run);
        cpslab_scenario_free(s);

        let mut bad = ptr::null_mut();
        assert_eq!(cpslab_scenario_from_json(c("{").as_ptr(), &mut bad), CpslabStatus::Parse);
        assert!(bad.is_null());
        let mut e1 = cpslab::scenario::preset("robotino.e1").unwrap();
        e1.duration = 10.0;
        let text = c(&e1.to_json().unwrap());
        assert_eq!(cpslab_scenario_from_json(text.as_ptr(), &mut bad), CpslabStatus::Validation);
        assert!(last_error().contains("fault"));
    }
}

#[test]
fn bad_arguments_are_reported() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(cpslab_scenario_load(ptr::null(), &mut s), CpslabStatus::InvalidArgument);
        assert!(last_error().contains("null"));
        assert_eq!(cpslab_scenario_load(c("robotino.e1").as_ptr(), ptr::null_mut()), CpslabStatus::InvalidArgument);
        assert_eq!(cpslab_scenario_load(c("/no/such/file.json").as_ptr(), &mut s), CpslabStatus::Io);
        let mut run = ptr::null_mut();
        assert_eq!(cpslab_run(ptr::null(), &mut run), CpslabStatus::InvalidArgument);

        let s = load("robotino.nominal");
        cpslab_scenario_set_steps(s, 4);
        cpslab_run(s, &mut run);
        let mut buf = [0.0; 2];
        assert_eq!(cpslab_run_signal(run, CpslabSignal::U, 0, buf.as_mut_ptr(), 2), CpslabStatus::InvalidArgument);
        assert_eq!(cpslab_run_signal(run, CpslabSignal::U, 4, buf.as_mut_ptr(), 2), CpslabStatus::InvalidArgument);
        cpslab_run_free(run);
        cpslab_scenario_free(s);
        cpslab_run_free(ptr::null_mut());
        cpslab_scenario_free(ptr::null_mut());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cpslab_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_interface_and_compiles() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/cpslab.h");
    let header = std::fs::read_to_string(path).unwrap();
    for f in [
        "cpslab_last_error",
        "cpslab_scenario_from_json",
        "cpslab_scenario_load",
        "cpslab_scenario_free",
        "cpslab_run(",
        "cpslab_run_signal",
        "cpslab_run_alarms",
        "cpslab_run_free",
        "typedef struct CpslabRun CpslabRun",
    ] {
        assert!(header.contains(f), "{f}");
    }
    // Syntax check with the system C compiler when one is installed.
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", path]).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
