#![allow(dead_code)]

use zk_core::zk_solver::SolverConfig;
use zk_experiments::spec::{
    ExperimentSpec, GridConfig, GroundStateConfig, Perturbation, ProbeSet, SolitonSpec, SweepAxes,
};
use zk_experiments::Lab;

pub const SMALL_GS: GroundStateConfig = GroundStateConfig {
    n: 128,
    l: 48.0,
    tol: 1e-11,
    max_iter: 500,
};

pub fn small_lab() -> Lab {
    Lab::new(&SMALL_GS).unwrap()
}

/// Two waves 14 apart on a 128×64 box, a handful of short steps.
pub fn two_wave_spec() -> ExperimentSpec {
    ExperimentSpec {
        name: "pair".into(),
        description: "small two-wave run".into(),
        grid: GridConfig {
            nx: 128,
            ny: 64,
            lx: 64.0,
            ly: 32.0,
        },
        ground_state: SMALL_GS,
        solver: SolverConfig::new(0.02, 0.4, 5),
        solitons: vec![
            SolitonSpec {
                c: 1.2,
                z: 7.0,
                omega: 0.0,
            },
            SolitonSpec {
                c: 1.0,
                z: -7.0,
                omega: 0.0,
            },
        ],
        perturbation: Perturbation::None,
        probes: ProbeSet::default(),
        sweep: None,
        output: "unused".into(),
    }
}

pub fn alpha_sweep(alphas: Vec<f64>, workers: usize) -> ExperimentSpec {
    let mut s = two_wave_spec();
    s.name = "alpha".into();
    s.sweep = Some(SweepAxes {
        alpha: Some(alphas),
        workers,
        ..SweepAxes::default()
    });
    s
}
