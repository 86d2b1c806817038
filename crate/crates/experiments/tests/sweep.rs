mod common;

use std::fs;
use std::path::Path;

use common::{alpha_sweep, small_lab, two_wave_spec};
use zk_experiments::manifest::{RunManifest, MANIFEST_FILE};
use zk_experiments::sweep::{expand, SWEEP_CSV_HEADER};
use zk_experiments::{run_evolution, run_sweep};

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file() && e.file_name() != MANIFEST_FILE)
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn one_cell_sweep_matches_single_run() {
    let lab = small_lab();
    let spec = two_wave_spec();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (rep, m) = run_sweep(&lab, &spec, a.path()).unwrap();
    assert!(m.failure.is_none());
    assert_eq!(rep.cells.len(), 1);
    assert!(rep.cells[0].ok());
    run_evolution(&lab, &spec, b.path()).unwrap().into_result().unwrap();
    let cell = files(&a.path().join(&rep.cells[0].dir));
    let single = files(b.path());
    assert_eq!(cell.len(), single.len());
    for ((na, da), (nb, db)) in cell.iter().zip(&single) {
        assert_eq!(na, nb);
        assert!(da == db, "{na} differs");
    }
}

#[test]
fn failing_cell_is_recorded_and_sweep_continues() {
    let lab = small_lab();
    let mut spec = alpha_sweep(vec![0.0, 50.0], 1);
    spec.solver.snapshot_stride = 1;
    let dir = tempfile::tempdir().unwrap();
    let (rep, m) = run_sweep(&lab, &spec, dir.path()).unwrap();
    assert!(rep.cells[0].ok(), "{:?}", rep.cells[0]);
    assert!(!rep.cells[1].ok());
    assert_eq!(m.failure.as_deref(), Some("1 cell(s) failed"));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_CSV_HEADER);
    assert!(lines[1].contains(",ok,"));
    assert!(lines[2].contains(",failed,"));
    // the failed cell keeps its partial outputs
    let cell = RunManifest::load(&dir.path().join(&rep.cells[1].dir).join(MANIFEST_FILE)).unwrap();
    assert!(cell.failure.is_some());
    m.verify(dir.path()).unwrap();
}

#[test]
fn worker_count_does_not_change_results() {
    let lab = small_lab();
    let serial = tempfile::tempdir().unwrap();
    let parallel = tempfile::tempdir().unwrap();
    let (a, _) = run_sweep(&lab, &alpha_sweep(vec![0.0, 1e-3, 2e-3], 1), serial.path()).unwrap();
    let mut spec = alpha_sweep(vec![0.0, 1e-3, 2e-3], 1);
    spec.sweep.as_mut().unwrap().workers = 3;
    let (b, _) = run_sweep(&lab, &spec, parallel.path()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    for c in &a.cells {
        let x = fs::read(serial.path().join(&c.dir).join("final_state.zkf")).unwrap();
        let y = fs::read(parallel.path().join(&c.dir).join("final_state.zkf")).unwrap();
        assert!(x == y);
    }
}

#[test]
fn sweep_manifest_detects_tampering() {
    let lab = small_lab();
    let spec = alpha_sweep(vec![0.0, 1e-3], 1);
    let dir = tempfile::tempdir().unwrap();
    let (_, m) = run_sweep(&lab, &spec, dir.path()).unwrap();
    m.verify(dir.path()).unwrap();
    assert_eq!(m.spec_hash, spec.hash());
    let csv = dir.path().join("sweep.csv");
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push_str("extra\n");
    fs::write(&csv, text).unwrap();
    assert!(m.verify(dir.path()).is_err());
}

#[test]
fn cells_carry_their_own_hashes() {
    let spec = alpha_sweep(vec![0.0, 1e-3], 1);
    let cells = expand(&spec).unwrap();
    assert_ne!(cells[0].spec.hash(), cells[1].spec.hash());
    assert_ne!(cells[0].spec.hash(), spec.hash());
}
