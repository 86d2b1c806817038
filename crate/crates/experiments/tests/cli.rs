mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::two_wave_spec;
use zk_experiments::recipes::{self, RECIPES};
use zk_experiments::spec::ExperimentSpec;

fn zklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zklab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_spec(dir: &Path, spec: &ExperimentSpec) -> String {
    let p = dir.join("spec.toml");
    fs::write(&p, spec.to_toml()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn lists_and_prints_recipes() {
    let o = zklab(&["recipe"]);
    assert_eq!(code(&o), 0);
    let names: Vec<_> = String::from_utf8(o.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(names, RECIPES);
    let o = zklab(&["recipe", "two-soliton-stability"]);
    assert_eq!(code(&o), 0);
    let spec = ExperimentSpec::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(spec, recipes::spec("two-soliton-stability").unwrap());
    assert_eq!(code(&zklab(&["recipe", "nope"])), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    let text = two_wave_spec().to_toml().replace("[grid]", "colour = 1\n[grid]");
    fs::write(&p, text).unwrap();
    let o = zklab(&["evolve", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let mut spec = two_wave_spec();
    spec.solitons[0].z = 30.0;
    let p = write_spec(dir.path(), &spec);
    assert_eq!(code(&zklab(&["evolve", "--config", &p])), 2);

    // clap usage errors share the code
    assert_eq!(code(&zklab(&["evolve"])), 2);
}

#[test]
fn io_errors_exit_4() {
    let o = zklab(&["evolve", "--config", "/nonexistent/spec.toml"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/spec.toml"));
}

#[test]
fn numerical_failure_exits_3_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = two_wave_spec();
    spec.solver.dt = 2.0;
    spec.solver.t_end = 40.0;
    spec.solver.snapshot_stride = 1;
    let p = write_spec(dir.path(), &spec);
    let out = dir.path().join("run");
    let o = zklab(&["evolve", "--config", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").exists());
    assert!(out.join("diagnostics.csv").exists());
}

#[test]
fn evolve_report_and_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let spec = two_wave_spec();
    let p = write_spec(dir.path(), &spec);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = zklab(&["evolve", "--config", &p, "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["waves"], 2);

    let o = zklab(&["report", out_s]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("manifest ok"));

    let snap = out.join("final_state.zkf");
    let o = zklab(&[
        "decompose",
        snap.to_str().unwrap(),
        "--gs-n",
        "128",
        "--gs-l",
        "48",
        "--gs-tol",
        "1e-11",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let cs: Vec<f64> = fit["waves"].as_array().unwrap().iter().map(|w| w["c"].as_f64().unwrap()).collect();
    assert!((cs[0] - 1.2).abs() < 1e-2 && (cs[1] - 1.0).abs() < 1e-2, "{cs:?}");

    let o = zklab(&["functionals", "snapshot", snap.to_str().unwrap(), "--weight", "psi"]);
    assert_eq!(code(&o), 0);

    fs::write(out.join("summary.json"), "{}").unwrap();
    let o = zklab(&["report", out_s]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("INVALID"));
}
