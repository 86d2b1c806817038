//! End-to-end acceptance checks. Prints one pass/fail line per criterion
//! and exits non-zero if any fails.
//!
//! `cargo test --release -p zk-experiments --test acceptance -- 3 4` runs a
//! subset by number.

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use zk_core::functionals::{
    phi_prime, phi_third, psi, psi_gamma_prime, psi_gamma_third, psi_prime, psi_third, INTERACTION_FAMILIES,
};
use zk_core::linop::random_localized_field;
use zk_core::modulation::{FitOptions, SolitonParams};
use zk_core::zk_solver::order_study;
use zk_core::Grid;
use zk_experiments::recipes;
use zk_experiments::spec::GroundStateConfig;
use zk_experiments::studies::{self, EigenSpec, InteractionSpec};
use zk_experiments::sweep::run_sweep;
use zk_experiments::{run_evolution, Lab, RunResult};

/// sup_t ‖ε‖_H¹ of the unperturbed two-soliton run, frozen as the
/// template-tail scale of the perturbed run.
const TAIL_SCALE: f64 = 6.83e-6;

/// Frozen constrained Rayleigh-quotient floor at 512²/60.
const CONSTRAINED_FLOOR: f64 = 0.644473040688;

type Outcome = Result<(bool, String), String>;

struct Check {
    ok: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { ok: true, notes: Vec::new() }
    }

    fn le(&mut self, what: &str, v: f64, bound: f64) {
        let pass = v <= bound;
        self.ok &= pass;
        self.notes.push(format!("{what} {v:.3e} {} {bound:.3e}", if pass { "<=" } else { "> !" }));
    }

    fn within(&mut self, what: &str, v: f64, lo: f64, hi: f64) {
        let pass = (lo..=hi).contains(&v);
        self.ok &= pass;
        self.notes.push(format!("{what} {v:.4} {} [{lo}, {hi}]", if pass { "in" } else { "NOT in" }));
    }

    fn holds(&mut self, what: &str, pass: bool) {
        self.ok &= pass;
        self.notes.push(format!("{what} {}", if pass { "holds" } else { "FAILS" }));
    }

    fn done(self) -> Outcome {
        Ok((self.ok, self.notes.join("; ")))
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ground_state(lab: &Lab) -> Outcome {
    let s = studies::ground_state_summary(lab.config(), lab.ground_state()).map_err(err)?;
    let mut c = Check::new();
    c.le("residual", s.residual, 1e-10);
    c.le("identity error", s.identity_error.ok_or("no identity")?, 1e-6);
    c.within("decay rate", s.decay.ok_or("no decay fit")?.rate, 0.98, 1.02);
    c.done()
}

fn linearized(lab: &Lab) -> Outcome {
    let s = studies::eigen_study(lab, &EigenSpec::default()).map_err(err)?;
    let mut c = Check::new();
    let neg = s.eigenvalues.iter().filter(|&&l| l < -1e-6).count();
    c.holds(&format!("{neg} eigenvalue(s) below -1e-6, exactly one"), neg == 1);
    c.le("kernel x", s.kernel_residuals[0], 1e-7);
    c.le("kernel y", s.kernel_residuals[1], 1e-7);
    c.le("scaling", s.scaling_residual, 1e-6);
    c.le("floor regression", (s.constrained_floor - CONSTRAINED_FLOOR).abs(), 1e-8);
    c.holds(
        &format!("{} trials, min {:.4} >= floor {:.4}", s.trials.len(), s.trial_min, s.constrained_floor),
        s.trials.len() == 100 && s.trial_min >= s.constrained_floor,
    );
    c.done()
}

fn conservation(lab: &Lab, out: &Path) -> Outcome {
    let mut spec = recipes::spec("single-soliton").ok_or("no recipe")?;
    spec.name = "conservation".into();
    spec.solver.t_end = 20.0;
    spec.solver.snapshot_stride = 400;
    spec.probes.track = false;
    let r = run_evolution(lab, &spec, out).map_err(err)?.into_result().map_err(err)?;
    let s = &r.summary;
    let mut c = Check::new();
    c.holds(&format!("reached t = {}", s.t_reached), (s.t_reached - 20.0).abs() < 1e-9);
    c.le("mass drift", s.mass_drift, 1e-9);
    c.le("energy drift", s.energy_drift, 1e-8);
    c.le("mean drift", s.mean_drift, 1e-12);
    let grid = Grid::new(256, 256, 64.0, 64.0).map_err(err)?;
    let u0 = lab.fitter(&grid).templates().profile(1.0, 0.0, 0.0);
    let o = order_study(&u0, 0.01, 1.0).map_err(err)?;
    c.within("order ratio", o.ratio, 14.0, 18.0);
    c.done()
}

fn traveling(lab: &Lab, out: &Path) -> Outcome {
    let spec = recipes::spec("single-soliton").ok_or("no recipe")?;
    let r = run_evolution(lab, &spec, out).map_err(err)?.into_result().map_err(err)?;
    let s = &r.summary;
    let mut c = Check::new();
    c.holds(&format!("reached t = {}", s.t_reached), (s.t_reached - 10.0).abs() < 1e-9);
    c.le("speed error", s.speed_error.ok_or("no speed")?, 1e-4);
    c.le("H1 distance", s.template_distance.ok_or("no distance")?, 1e-5);
    c.done()
}

fn two_soliton(runs: &[(f64, &RunResult)]) -> Outcome {
    let mut c = Check::new();
    for &(alpha, r) in runs {
        let s = &r.summary;
        let tag = format!("alpha={alpha}");
        c.holds(
            &format!("{tag} ran to t = {} {}", s.t_reached, s.failure.as_deref().unwrap_or("")),
            s.failure.is_none() && (s.t_reached - 40.0).abs() < 1e-9,
        );
        c.le(&format!("{tag} sup eps"), s.sup_eps_h1.ok_or("no eps")?, 3.0 * (alpha + TAIL_SCALE));
        let margin = s.z_margin.ok_or("no margin")?;
        c.holds(&format!("{tag} z - (Z+st)/2 >= 0 (min {margin:.3})"), margin >= 0.0);
        let fc = s.fitted_c.ok_or("no C")?;
        c.holds(&format!("{tag} max|dc| {:.2e}, C = {fc:.3e}", s.max_dc.unwrap_or(f64::NAN)), fc.is_finite());
    }
    c.done()
}

fn monotonicity(lab: &Lab, run5: &[(f64, &RunResult)], out: &Path) -> Outcome {
    let mut c = Check::new();
    let spec = recipes::spec("monotonicity").ok_or("no recipe")?;
    let (rep, _) = run_sweep(lab, &spec, out).map_err(err)?;
    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    for cell in &rep.cells {
        let m = cell
            .summary
            .as_ref()
            .and_then(|s| s.monotonicity)
            .filter(|_| cell.ok())
            .ok_or_else(|| format!("cell {} failed: {:?}", cell.index, cell.error))?;
        cells.push((cell.values.z.ok_or("no z")?, m.max_increase, m.fitted_a4));
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let defects: Vec<String> = cells.iter().map(|(z, d, _)| format!("Z={z}: {d:.3e}")).collect();
    c.holds(
        &format!("defect non-increasing in Z ({})", defects.join(", ")),
        cells.windows(2).all(|w| w[1].1 <= w[0].1),
    );
    let a4_sweep = cells.iter().map(|x| x.2).fold(0.0, f64::max);
    for &(alpha, r) in run5 {
        let m = r.summary.monotonicity.ok_or("no monotonicity")?;
        let tag = format!("alpha={alpha}");
        c.holds(&format!("{tag} A4 = {:.4} finite", m.fitted_a4), m.fitted_a4.is_finite());
        c.le(&format!("{tag} max increase"), m.max_increase, m.fitted_a4 * m.envelope_z);
        c.le(&format!("{tag} vs sweep A4"), m.max_increase, a4_sweep * m.envelope_z);
    }
    c.done()
}

fn interactions(lab: &Lab) -> Outcome {
    let s = studies::interaction_study(lab, &InteractionSpec::default()).map_err(err)?;
    let mut c = Check::new();
    c.holds(&format!("{} families", s.fits.len()), s.fits.len() == INTERACTION_FAMILIES.len());
    for f in &s.fits {
        if f.family == "rr" {
            c.le("rr slope", f.slope, -0.875);
        }
        c.holds(
            &format!("{} C = {:.3} ({} samples)", f.family, f.prefactor, f.samples),
            f.prefactor.is_finite() && f.samples >= 2,
        );
    }
    c.done()
}

fn weights() -> Outcome {
    let mut c = Check::new();
    let lattice: Vec<f64> = (-40_000..=40_000).map(|k| k as f64 * 1e-3).collect();
    // ψ = ½ + gd(x)/π with the Gudermannian gd' = sech
    let closed = lattice
        .iter()
        .map(|&x| (psi(x) - (0.5 + 2.0 / PI * (0.5 * x).tanh().atan())).abs())
        .fold(0.0, f64::max);
    c.le("psi closed form", closed, 1e-12);
    let dpsi = lattice
        .iter()
        .map(|&x| (psi_prime(x) - 1.0 / (PI * x.cosh())).abs() * PI * x.cosh())
        .fold(0.0, f64::max);
    c.le("psi' vs 1/(pi cosh)", dpsi, 1e-12);
    let ratio = |third: &dyn Fn(f64) -> f64, first: &dyn Fn(f64) -> f64| {
        lattice
            .iter()
            .map(|&x| third(x).abs() / first(x))
            .filter(|r| r.is_finite())
            .fold(0.0, f64::max)
    };
    // the bounds are attained at x = 0, so allow rounding there
    let slack = 1.0 + 1e-14;
    c.le("|psi'''|/psi'", ratio(&psi_third, &psi_prime), slack);
    for gamma in [0.5, 1.0, 1.15, 2.0] {
        c.le(
            &format!("|psi_g'''|/psi_g' (g={gamma})"),
            ratio(&|x| psi_gamma_third(x, gamma), &|x| psi_gamma_prime(x, gamma)),
            gamma / 4.0 * slack,
        );
    }
    for cl in [0.5, 1.0, 1.3] {
        c.le(
            &format!("|phi'''|/phi' (c={cl})"),
            ratio(&|x| phi_third(x, cl), &|x| phi_prime(x, cl)),
            cl / 16.0 * slack,
        );
    }
    c.done()
}

fn oblique(r: &RunResult) -> Outcome {
    let mut c = Check::new();
    let ob = &r.summary.oblique;
    c.holds(&format!("{} probes", ob.len()), ob.len() == 6);
    let c_max = ob.iter().map(|o| o.fitted_c).fold(0.0, f64::max);
    c.holds(&format!("C = {c_max:.3} finite"), c_max.is_finite());
    for theta in [0.0, PI / 6.0, -PI / 4.0] {
        let mut pair: Vec<_> = ob.iter().filter(|o| (o.theta0 - theta).abs() < 1e-12).collect();
        pair.sort_by(|a, b| a.x0.total_cmp(&b.x0));
        let ds: Vec<String> = pair.iter().map(|o| format!("x0={}: {:.3}", o.x0, o.defect_i)).collect();
        c.holds(
            &format!("theta={theta:.4} non-increasing ({})", ds.join(", ")),
            pair.len() == 2 && pair[1].defect_i <= pair[0].defect_i,
        );
        for o in pair {
            let bound = c_max * (-0.25 * o.x0).exp();
            c.holds(
                &format!("theta={theta:.4} x0={} within C e^(-x0/4)", o.x0),
                o.defect_i <= bound * (1.0 + 1e-12) && o.defect_j <= bound * (1.0 + 1e-12),
            );
        }
    }
    c.done()
}

fn fitter(lab: &Lab) -> Outcome {
    let grid = Grid::new(512, 256, 128.0, 64.0).map_err(err)?;
    let f = lab.fitter(&grid);
    let truth = SolitonParams {
        z1: 15.0,
        z2: -15.0,
        omega1: 0.3,
        omega2: -0.2,
        c1: 1.3,
        c2: 1.0,
    };
    let t = f.templates();
    let u = &t.profile(truth.c1, truth.z1, truth.omega1) + &t.profile(truth.c2, truth.z2, truth.omega2);
    let diff = |a: &SolitonParams, b: &SolitonParams| {
        a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let opts = FitOptions::default();
    let start = SolitonParams {
        z1: 15.1,
        z2: -14.9,
        omega1: 0.4,
        omega2: -0.3,
        c1: 1.32,
        c2: 0.98,
    };
    let mut c = Check::new();
    let d = f.fit_parameters(&u, &start, &opts).map_err(err)?;
    c.le("recovery", diff(&d.params, &truth), 1e-8);

    let noise = random_localized_field(&grid, 3, 0.0, 0.0, 6.0);
    let v = &u + &(&noise * (1e-3 / noise.max_abs()));
    let d = f.fit_parameters(&v, &truth, &opts).map_err(err)?;
    let (a, b) = (1.7, -2.3);
    let dt = f.fit_parameters(&v.translate(a, b), &truth.translated(a, b), &opts).map_err(err)?;
    c.le("gauge", diff(&dt.params, &d.params.translated(a, b)), 1e-9);
    let again = f.fit_parameters(&d.reconstruct(), &d.params, &opts).map_err(err)?;
    c.le("idempotence", diff(&again.params, &d.params), 1e-10);
    c.done()
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let dir = tempfile::tempdir().expect("tempdir");
    let out = |name: &str| dir.path().join(name);

    let t = Instant::now();
    let lab = match Lab::new(&GroundStateConfig::default()) {
        Ok(l) => l,
        Err(e) => {
            println!("criterion 1: FAIL ground state: {e}");
            return ExitCode::FAILURE;
        }
    };
    let gs_time = t.elapsed().as_secs_f64();

    let mut failed = 0;
    let mut report = |n: usize, r: Outcome, secs: f64| {
        let line = match r {
            Ok((true, notes)) => format!("criterion {n}: PASS ({notes})"),
            Ok((false, notes)) => format!("criterion {n}: FAIL ({notes})"),
            Err(e) => format!("criterion {n}: FAIL (error: {e})"),
        };
        if !line.contains(": PASS") {
            failed += 1;
        }
        println!("{line} [{secs:.1} s]");
    };
    let timed = |f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed().as_secs_f64())
    };

    if want(1) {
        let (r, s) = timed(&mut || ground_state(&lab));
        report(1, r, s + gs_time);
    }
    if want(2) {
        let (r, s) = timed(&mut || linearized(&lab));
        report(2, r, s);
    }
    if want(3) {
        let (r, s) = timed(&mut || conservation(&lab, &out("conservation")));
        report(3, r, s);
    }
    if want(4) {
        let (r, s) = timed(&mut || traveling(&lab, &out("single")));
        report(4, r, s);
    }

    // Runs 5 share the unperturbed and the perturbed (oblique-probed) evolutions
    // with criteria 6 and 9.
    let need5 = want(5) || want(6) || want(9);
    let t5 = Instant::now();
    let run = |name: &str| -> Result<RunResult, String> {
        let spec = recipes::spec(name).ok_or("no recipe")?;
        run_evolution(&lab, &spec, &out(name)).map_err(err)
    };
    let (calm, noisy) = if need5 {
        (run("two-soliton-unperturbed"), run("oblique"))
    } else {
        (Err("skipped".into()), Err("skipped".into()))
    };
    let t5 = t5.elapsed().as_secs_f64();
    let pair = || -> Result<[(f64, &RunResult); 2], String> {
        Ok([
            (0.0, calm.as_ref().map_err(Clone::clone)?),
            (recipes::TWO_SOLITON_ALPHA, noisy.as_ref().map_err(Clone::clone)?),
        ])
    };
    if want(5) {
        report(5, pair().and_then(|p| two_soliton(&p)), t5);
    }
    if want(6) {
        let (r, s) = timed(&mut || monotonicity(&lab, &pair()?, &out("monotonicity")));
        report(6, r, s);
    }
    if want(7) {
        let (r, s) = timed(&mut || interactions(&lab));
        report(7, r, s);
    }
    if want(8) {
        let (r, s) = timed(&mut weights);
        report(8, r, s);
    }
    if want(9) {
        report(9, noisy.as_ref().map_err(Clone::clone).and_then(oblique), 0.0);
    }
    if want(10) {
        let (r, s) = timed(&mut || fitter(&lab));
        report(10, r, s);
    }

    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
