use std::sync::OnceLock;

use zk_core::invariants::{energy, integral, mass};
use zk_core::linop::random_localized_field;
use zk_core::zk_solver::{evolve, step, time_reversal_error, Probe, SolverConfig, Sponge};
use zk_core::{solve_ground_state, GroundState, Grid, RealField};

fn gs() -> &'static GroundState {
    static GS: OnceLock<GroundState> = OnceLock::new();
    GS.get_or_init(|| solve_ground_state(&Grid::new(128, 128, 40.0, 40.0).unwrap(), 1e-12, 500).unwrap())
}

fn grid() -> Grid {
    Grid::new(192, 192, 48.0, 48.0).unwrap()
}

fn soliton(c: f64, z: f64, omega: f64) -> RealField {
    gs().templates(&grid()).profile(c, z, omega)
}

#[test]
fn single_wave_conserves_and_travels() {
    let u0 = soliton(1.0, -5.0, 0.0);
    let cfg = SolverConfig::new(0.01, 4.0, 100);
    let traj = evolve(&u0, &cfg, &mut []).unwrap();
    let d = traj.drift();
    assert!(d.mass < 1e-8, "{d:?}");
    assert!(d.energy < 1e-7, "{d:?}");
    assert!(d.mean < 1e-13, "{d:?}");
    assert_eq!(traj.times, [0.0, 1.0, 2.0, 3.0, 4.0]);
    let exact = soliton(1.0, -1.0, 0.0);
    let dist = (&traj.final_state - &exact).h1_norm();
    assert!(dist < 1e-4, "{dist}");
}

#[test]
fn probes_see_lab_frame_and_can_abort() {
    let u0 = soliton(1.0, 0.0, 0.0);
    let mut cfg = SolverConfig::new(0.01, 1.0, 50);
    cfg.frame_speed = 1.0;
    let mut peaks = Vec::new();
    let mut probe = |t: f64, u: &RealField| {
        let (ix, _) = u.argmax();
        peaks.push((t, u.grid().x(ix)));
        Ok(())
    };
    let traj = evolve(&u0, &cfg, &mut [&mut probe as &mut dyn Probe]).unwrap();
    assert_eq!(peaks.len(), 3);
    for (t, x) in &peaks {
        assert!((x - t).abs() <= grid().dx(), "{t} {x}");
    }
    let exact = soliton(1.0, 1.0, 0.0);
    let dist = (&traj.final_state - &exact).h1_norm();
    assert!(dist < 1e-4, "{dist}");

    let mut stop = |t: f64, _: &RealField| if t > 0.6 { Err("enough".to_string()) } else { Ok(()) };
    assert!(evolve(&u0, &cfg, &mut [&mut stop as &mut dyn Probe]).is_err());
}

#[test]
fn sponge_only_removes_mass() {
    let g = grid();
    let u0 = &soliton(1.0, 0.0, 0.0) + &(&random_localized_field(&g, 5, 20.0, 0.0, 3.0) * 0.05);
    let mut cfg = SolverConfig::new(0.01, 2.0, 20);
    cfg.sponge = Some(Sponge {
        width: 4.0,
        strength: 1.0,
    });
    let traj = evolve(&u0, &cfg, &mut []).unwrap();
    let last = traj.diagnostics.last().unwrap();
    assert!(last.absorbed > 0.0);
    assert!(last.mass < mass(&u0));
    assert!(traj.drift().mass < 1e-6);
}

#[test]
fn symmetries_commute_with_a_step() {
    let g = grid();
    let u = &soliton(1.2, 3.0, 2.0) + &(&random_localized_field(&g, 1, 0.0, 0.0, 4.0) * 0.1);
    let cfg = SolverConfig::new(0.05, 0.05, 1);
    let once = step(&u, &cfg).unwrap();
    let (a, b) = (1.5, -0.75);
    let shifted = step(&u.translate(a, b), &cfg).unwrap();
    assert!((&shifted - &once.translate(a, b)).max_abs() < 1e-12);
    let mirrored = step(&u.reflect_y(), &cfg).unwrap();
    assert!((&mirrored - &once.reflect_y()).max_abs() < 1e-12);
}

#[test]
fn reversal_returns_to_start() {
    let u0 = soliton(1.0, 0.0, 0.0);
    let err = time_reversal_error(&u0, &SolverConfig::new(0.01, 1.0, 100)).unwrap();
    assert!(err < 1e-7 * u0.h1_norm(), "{err}");
}

#[test]
fn invariants_of_a_rescaled_profile() {
    let q = soliton(1.0, 0.0, 0.0);
    for c in [0.8, 1.3] {
        let qc = soliton(c, 0.0, 0.0);
        assert!((mass(&qc) - c * mass(&q)).abs() < 1e-9 * mass(&q));
        assert!((energy(&qc) - c * c * energy(&q)).abs() < 1e-9 * energy(&q).abs());
        assert!((integral(&qc) - integral(&q)).abs() < 1e-8 * integral(&q));
    }
}
