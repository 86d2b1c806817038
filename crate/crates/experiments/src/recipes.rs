//! Built-in experiment recipes.

use std::f64::consts::PI;
use std::path::PathBuf;

use zk_core::zk_solver::{SolverConfig, Sponge};

use crate::spec::{
    ExperimentSpec, GridConfig, GroundStateConfig, ObliqueProbe, Perturbation, ProbeSet, SolitonSpec, SweepAxes,
};
use crate::studies::{CoercivitySpec, InteractionSpec};

#[derive(Debug, Clone)]
pub enum Recipe {
    GroundState(GroundStateConfig),
    Evolve(ExperimentSpec),
    Sweep(ExperimentSpec),
    Coercivity(CoercivitySpec),
    Interactions(InteractionSpec),
}

pub const RECIPES: [&str; 10] = [
    "ground-state",
    "single-soliton",
    "perturbed-single",
    "two-soliton-stability",
    "two-soliton-unperturbed",
    "oblique",
    "monotonicity",
    "z-alpha-sweep",
    "coercivity",
    "interactions",
];

/// Recipes that are evolutions or sweeps (described by an [`ExperimentSpec`]).
pub const EVOLVE_RECIPES: [&str; 7] = [
    "single-soliton",
    "perturbed-single",
    "two-soliton-stability",
    "two-soliton-unperturbed",
    "oblique",
    "monotonicity",
    "z-alpha-sweep",
];

/// Initial separation of the two-soliton recipes.
pub const TWO_SOLITON_Z: f64 = 30.0;
/// Velocities `(c₁, c₂)` of the two-soliton recipes.
pub const TWO_SOLITON_C: (f64, f64) = (1.3, 1.0);
/// Noise amplitude of the perturbed two-soliton recipe.
pub const TWO_SOLITON_ALPHA: f64 = 1e-2;

pub fn recipe(name: &str) -> Option<Recipe> {
    Some(match name {
        "ground-state" => Recipe::GroundState(GroundStateConfig::default()),
        "coercivity" => Recipe::Coercivity(CoercivitySpec::default()),
        "interactions" => Recipe::Interactions(InteractionSpec::default()),
        "monotonicity" | "z-alpha-sweep" => Recipe::Sweep(spec(name)?),
        _ => Recipe::Evolve(spec(name)?),
    })
}

fn single(name: &str, perturbation: Perturbation) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        description: "one soliton c = 1 on 256² over 64², traveling for T = 10".into(),
        grid: GridConfig {
            nx: 256,
            ny: 256,
            lx: 64.0,
            ly: 64.0,
        },
        ground_state: GroundStateConfig::default(),
        solver: SolverConfig::new(0.005, 10.0, 100),
        solitons: vec![SolitonSpec {
            c: 1.0,
            z: 0.0,
            omega: 0.0,
        }],
        perturbation,
        probes: ProbeSet::default(),
        sweep: None,
        output: PathBuf::from("runs").join(name),
    }
}

fn two_soliton(name: &str, alpha: f64) -> ExperimentSpec {
    let mut solver = SolverConfig::new(0.01, 40.0, 50);
    solver.frame_speed = 0.5 * (TWO_SOLITON_C.0 + TWO_SOLITON_C.1);
    solver.sponge = Some(Sponge {
        width: 6.0,
        strength: 1.0,
    });
    let perturbation = if alpha > 0.0 {
        Perturbation::Noise {
            alpha,
            seed: 11,
            width: 12.0,
        }
    } else {
        Perturbation::None
    };
    ExperimentSpec {
        name: name.into(),
        description: "two solitons c = (1.3, 1.0), Z = 30, 512x256 over 128x64, co-moving frame with sponge".into(),
        grid: GridConfig {
            nx: 512,
            ny: 256,
            lx: 128.0,
            ly: 64.0,
        },
        ground_state: GroundStateConfig::default(),
        solver,
        solitons: vec![
            SolitonSpec {
                c: TWO_SOLITON_C.0,
                z: 0.5 * TWO_SOLITON_Z,
                omega: 0.0,
            },
            SolitonSpec {
                c: TWO_SOLITON_C.1,
                z: -0.5 * TWO_SOLITON_Z,
                omega: 0.0,
            },
        ],
        perturbation,
        probes: ProbeSet::default(),
        sweep: None,
        output: PathBuf::from("runs").join(name),
    }
}

/// Oblique probes at `θ₀ ∈ {0, π/6, −π/4}` and `x₀ ∈ {5, 10}`.
pub fn oblique_probes() -> Vec<ObliqueProbe> {
    let mut out = Vec::new();
    for theta0 in [0.0, PI / 6.0, -PI / 4.0] {
        for x0 in [5.0, 10.0] {
            out.push(ObliqueProbe { theta0, x0 });
        }
    }
    out
}

/// The experiment spec of an evolution or sweep recipe.
pub fn spec(name: &str) -> Option<ExperimentSpec> {
    Some(match name {
        "single-soliton" => single(name, Perturbation::None),
        "perturbed-single" => {
            let mut s = single(
                name,
                Perturbation::LambdaBump {
                    amplitude: 1e-2,
                    wave: 0,
                },
            );
            s.description = "one soliton c = 1 with a scaling-direction bump of H1 size 1e-2".into();
            s
        }
        "two-soliton-stability" => two_soliton(name, TWO_SOLITON_ALPHA),
        "two-soliton-unperturbed" => two_soliton(name, 0.0),
        "oblique" => {
            let mut s = two_soliton(name, TWO_SOLITON_ALPHA);
            s.probes.oblique = oblique_probes();
            s
        }
        "monotonicity" => {
            let mut s = two_soliton(name, 0.0);
            s.description = "localized-mass monotonicity across Z = 20, 26, 32".into();
            s.probes.final_snapshot = false;
            s.sweep = Some(SweepAxes {
                z: Some(vec![20.0, 26.0, 32.0]),
                workers: 1,
                ..Default::default()
            });
            s
        }
        "z-alpha-sweep" => {
            let mut s = two_soliton(name, 0.0);
            s.description = "stability map over Z and alpha".into();
            s.probes.final_snapshot = false;
            s.sweep = Some(SweepAxes {
                z: Some(vec![20.0, 26.0, 32.0]),
                alpha: Some(vec![0.0, 5e-3, 1e-2]),
                workers: 1,
                ..Default::default()
            });
            s
        }
        _ => return None,
    })
}
