//! A single evolution with its probes and outputs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use zk_core::functionals::{localized_mass_i, monotonicity_report, oblique_functionals, ObliqueCenter, WeightSpec};
use zk_core::linop::random_localized_field;
use zk_core::modulation::{centered_differences, FitOptions, Fitter, Soliton, SolitonParams, TrackResult, Tracker};
use zk_core::zk_solver::{evolve_into, DiagnosticsRecord, SolverError, Trajectory};
use zk_core::RealField;

use crate::error::{ExperimentError, Result};
use crate::lab::Lab;
use crate::manifest::{Artifacts, RunManifest};
use crate::spec::{ExperimentSpec, ObliqueProbe, Perturbation};

/// One fitted snapshot of a single-wave run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SingleRecord {
    pub t: f64,
    pub wave: Soliton,
    pub eps_h1: f64,
}

/// `Ĩ` and `J̃` of one oblique probe for `t ≤ t0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObliqueSeries {
    pub probe: ObliqueProbe,
    pub t0: f64,
    pub anchor: SolitonParams,
    pub times: Vec<f64>,
    pub i: Vec<f64>,
    pub j: Vec<f64>,
}

impl ObliqueSeries {
    /// `max_{t ≤ t0} (Ĩ(t0) − Ĩ(t))` and the same for `J̃`.
    pub fn defects(&self) -> (f64, f64) {
        let last = |v: &[f64]| *v.last().expect("non-empty series");
        let (i0, j0) = (last(&self.i), last(&self.j));
        let d = |v: &[f64], end: f64| v.iter().map(|x| end - x).fold(0.0, f64::max);
        (d(&self.i, i0), d(&self.j, j0))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonotonicitySummary {
    /// `max_t (I(t) − I(0))`.
    pub max_increase: f64,
    /// Smallest `A₄` with `I(t) − I(0) ≤ A₄ e^{−(1/16)√c̲(Z+σt)}`.
    pub fitted_a4: f64,
    /// `e^{−(1/16)√c̲ Z}`.
    pub envelope_z: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObliqueSummary {
    pub theta0: f64,
    pub x0: f64,
    pub t0: f64,
    pub defect_i: f64,
    pub defect_j: f64,
    /// `defect_i / e^{−(1/4)√c̲ x₀}`.
    pub fitted_c: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub waves: usize,
    pub alpha: f64,
    /// Last snapshot time reached.
    pub t_reached: f64,
    pub snapshots: usize,
    pub mass_drift: f64,
    pub energy_drift: f64,
    pub mean_drift: f64,
    pub absorbed: f64,
    pub sup_eps_h1: Option<f64>,
    pub final_eps_h1: Option<f64>,
    /// `min_t (z(t) − ½(Z + σt))`.
    pub z_margin: Option<f64>,
    /// `max_{i,t} |c_i(t) − c_i(0)|`.
    pub max_dc: Option<f64>,
    /// `max_dc / (sup eps² + e^{−(1/16)√c̲ Z})`.
    pub fitted_c: Option<f64>,
    pub monotonicity: Option<MonotonicitySummary>,
    pub oblique: Vec<ObliqueSummary>,
    /// `max_t |ż₁ − c₁|` of a single-wave run.
    pub speed_error: Option<f64>,
    /// H¹ distance of the final state to the exactly translated initial wave.
    pub template_distance: Option<f64>,
    pub failure: Option<String>,
}

pub struct RunResult {
    pub manifest: RunManifest,
    pub summary: RunSummary,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub track: Option<TrackResult>,
    pub single: Vec<SingleRecord>,
    /// `I(t)` at the tracked snapshots.
    pub localized: Vec<f64>,
    pub oblique: Vec<ObliqueSeries>,
    failure_time: Option<f64>,
}

impl RunResult {
    /// Turns a recorded failure into an error.
    pub fn into_result(self) -> Result<Self> {
        match &self.summary.failure {
            Some(m) => Err(ExperimentError::Numerical {
                t: self.failure_time,
                message: m.clone(),
            }),
            None => Ok(self),
        }
    }
}

/// Initial parameters of a two-wave spec.
pub fn initial_params(spec: &ExperimentSpec) -> Option<SolitonParams> {
    match spec.solitons.as_slice() {
        [a, b] => Some(SolitonParams {
            z1: a.z,
            z2: b.z,
            omega1: a.omega,
            omega2: b.omega,
            c1: a.c,
            c2: b.c,
        }),
        _ => None,
    }
}

/// Sum of the templates plus the perturbation.
pub fn initial_condition(fitter: &Fitter, spec: &ExperimentSpec) -> Result<RealField> {
    let t = fitter.templates();
    let mut u = RealField::zeros(fitter.grid());
    for s in &spec.solitons {
        u = &u + &t.profile(s.c, s.z, s.omega);
    }
    let bump = match spec.perturbation {
        Perturbation::None => None,
        Perturbation::LambdaBump { amplitude, wave } => {
            let s = spec.solitons[wave];
            Some((t.lambda(s.c, s.z, s.omega), amplitude))
        }
        Perturbation::Noise { alpha, seed, width } => {
            let n = spec.solitons.len() as f64;
            let x0 = spec.solitons.iter().map(|s| s.z).sum::<f64>() / n;
            let y0 = spec.solitons.iter().map(|s| s.omega).sum::<f64>() / n;
            Some((random_localized_field(fitter.grid(), seed, x0, y0, width), alpha))
        }
    };
    if let Some((f, a)) = bump {
        let norm = f.h1_norm();
        if !(norm > 0.0) {
            return Err(ExperimentError::numerical("perturbation has zero norm"));
        }
        u = u.axpy(a / norm, &f)?;
    }
    Ok(u)
}

fn csv_rows<'a>(header: &str, rows: impl Iterator<Item = Vec<f64>> + 'a) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

/// Runs `spec` and writes its outputs to `out`. A numerical failure during
/// the evolution is recorded in the summary and manifest, with everything
/// gathered up to it written out; use [`RunResult::into_result`] to turn it
/// into an error.
pub fn run_evolution(lab: &Lab, spec: &ExperimentSpec, out: &Path) -> Result<RunResult> {
    spec.validate()?;
    lab.check(&spec.ground_state)?;
    let grid = spec.grid.build()?;
    let fitter = lab.fitter(&grid);
    let u0 = initial_condition(&fitter, spec)?;
    let mut art = Artifacts::create(out, &spec.name, "evolve", &spec.hash())?;
    art.spec(spec)?;

    let probes = &spec.probes;
    let two = initial_params(spec);
    let opts = FitOptions::default();
    let mut tracker = two.filter(|_| probes.track).map(|p| Tracker::new(&fitter, p, opts));
    let mut localized = Vec::new();
    let mut single: Vec<SingleRecord> = Vec::new();
    let track_single = two.is_none() && probes.track;
    let keep = !probes.oblique.is_empty();
    let mut kept: Vec<(f64, RealField)> = Vec::new();
    let mut probe = |t: f64, u: &RealField| -> std::result::Result<(), String> {
        if let Some(tr) = tracker.as_mut() {
            let dec = tr.push(t, u).ok_or("modulation fit lost the waves")?;
            localized.push(localized_mass_i(u, &dec.params, probes.gamma).map_err(|e| e.to_string())?);
        }
        if track_single {
            let guess = match single.last() {
                Some(r) => Soliton {
                    z: r.wave.z + r.wave.c * (t - r.t),
                    ..r.wave
                },
                None => {
                    let s = spec.solitons[0];
                    Soliton {
                        z: s.z,
                        omega: s.omega,
                        c: s.c,
                    }
                }
            };
            let (mut w, eps) = fitter.fit_single(u, guess, &opts).map_err(|e| e.to_string())?;
            w.z = zk_core::modulation::unwrap_near(w.z, guess.z, u.grid().lx());
            w.omega = zk_core::modulation::unwrap_near(w.omega, guess.omega, u.grid().ly());
            single.push(SingleRecord {
                t,
                wave: w,
                eps_h1: eps.h1_norm(),
            });
        }
        if keep {
            kept.push((t, u.clone()));
        }
        Ok(())
    };
    let mut traj = Trajectory::start(&u0);
    let outcome = evolve_into(&u0, &spec.solver, &mut [&mut probe], &mut traj);
    let (failure, failure_time) = match outcome {
        Ok(()) => (None, None),
        Err(e) => {
            let t = match e {
                SolverError::NonFinite { t } | SolverError::MassSentinel { t, .. } | SolverError::Probe { t, .. } => {
                    Some(t)
                }
                _ => None,
            };
            let e = ExperimentError::from(e);
            if matches!(e, ExperimentError::Config(_)) {
                return Err(e);
            }
            (Some(e.to_string()), t)
        }
    };
    let track = tracker.map(Tracker::finish);

    let drift = traj.drift();
    let mut summary = RunSummary {
        waves: spec.solitons.len(),
        alpha: spec.perturbation.amplitude(),
        t_reached: traj.times.last().copied().unwrap_or(0.0),
        snapshots: traj.times.len(),
        mass_drift: drift.mass,
        energy_drift: drift.energy,
        mean_drift: drift.mean,
        absorbed: traj.diagnostics.last().map(|d| d.absorbed).unwrap_or(0.0),
        failure: failure.clone(),
        ..Default::default()
    };
    art.table(
        "diagnostics",
        &traj.diagnostics_csv(),
        json!({ "frame_speed": spec.solver.frame_speed, "sponge": spec.solver.sponge }),
    )?;

    let c_lower = spec.c_lower();
    let mut oblique = Vec::new();
    if let (Some(tr), Some(p0)) = (&track, two) {
        let z = spec.separation().expect("two waves");
        let sigma = spec.sigma().expect("two waves");
        art.table("params", &tr.to_csv(), json!({ "initial": p0 }))?;
        summarize_two(&mut summary, tr, z, sigma, c_lower);
        if !tr.records.is_empty() {
            let times = tr.times();
            let rep = monotonicity_report(&times, &localized, c_lower, z, sigma)?;
            summary.monotonicity = Some(MonotonicitySummary {
                max_increase: rep.max_increase,
                fitted_a4: rep.fitted_a4,
                envelope_z: (-(c_lower.sqrt() / 16.0) * z).exp(),
            });
            let rows = tr.records.iter().enumerate().map(|(k, r)| {
                vec![
                    r.t,
                    localized[k],
                    localized[k] - localized[0],
                    rep.envelope[k],
                    r.eps_windowed[0],
                    r.eps_windowed[1],
                ]
            });
            art.table(
                "functionals",
                &csv_rows("t,localized_mass,localized_increase,envelope,eps_window_1,eps_window_2", rows),
                json!({ "gamma": probes.gamma, "c_lower": c_lower, "z": z, "sigma": sigma }),
            )?;
        }
        if keep {
            oblique = oblique_series(spec, tr, &kept)?;
            write_oblique(&mut art, &oblique)?;
            for s in &oblique {
                let (di, dj) = s.defects();
                summary.oblique.push(ObliqueSummary {
                    theta0: s.probe.theta0,
                    x0: s.probe.x0,
                    t0: s.t0,
                    defect_i: di,
                    defect_j: dj,
                    fitted_c: di / (-0.25 * c_lower.sqrt() * s.probe.x0).exp(),
                });
            }
        }
    }
    if track_single && !single.is_empty() {
        let rows = single.iter().map(|r| vec![r.t, r.wave.z, r.wave.omega, r.wave.c, r.eps_h1]);
        art.table("params", &csv_rows("t,z1,omega1,c1,eps_h1", rows), json!({}))?;
        let t: Vec<f64> = single.iter().map(|r| r.t).collect();
        let z: Vec<f64> = single.iter().map(|r| r.wave.z).collect();
        if t.len() >= 2 {
            let v = centered_differences(&t, &z);
            summary.speed_error = Some(v.iter().zip(&single).map(|(v, r)| (v - r.wave.c).abs()).fold(0.0, f64::max));
        }
        summary.sup_eps_h1 = Some(single.iter().map(|r| r.eps_h1).fold(0.0, f64::max));
        summary.final_eps_h1 = single.last().map(|r| r.eps_h1);
    }
    if two.is_none() {
        let s = spec.solitons[0];
        let exact = fitter.templates().profile(s.c, s.z + s.c * summary.t_reached, s.omega);
        summary.template_distance = Some((&traj.final_state - &exact).h1_norm());
    }
    if probes.final_snapshot {
        art.snapshot("final_state", &traj.final_state, summary.t_reached)?;
    }
    art.json("summary.json", &summary)?;
    let manifest = art.finish(&summary, failure)?;
    Ok(RunResult {
        manifest,
        summary,
        diagnostics: traj.diagnostics,
        track,
        single,
        localized,
        oblique,
        failure_time,
    })
}

fn summarize_two(summary: &mut RunSummary, tr: &TrackResult, z: f64, sigma: f64, c_lower: f64) {
    let Some(first) = tr.records.first() else {
        return;
    };
    let sup = tr.records.iter().map(|r| r.eps_h1).fold(0.0, f64::max);
    let margin = tr
        .records
        .iter()
        .map(|r| r.params.separation() - 0.5 * (z + sigma * r.t))
        .fold(f64::INFINITY, f64::min);
    let dc = tr
        .records
        .iter()
        .map(|r| (r.params.c1 - first.params.c1).abs().max((r.params.c2 - first.params.c2).abs()))
        .fold(0.0, f64::max);
    summary.sup_eps_h1 = Some(sup);
    summary.final_eps_h1 = tr.records.last().map(|r| r.eps_h1);
    summary.z_margin = Some(margin);
    summary.max_dc = Some(dc);
    summary.fitted_c = Some(dc / (sup * sup + (-(c_lower.sqrt() / 16.0) * z).exp()));
    if summary.failure.is_none() {
        summary.failure = tr.failure.as_ref().map(|(t, m)| format!("fit failed at t = {t}: {m}"));
    }
}

/// Evaluates every oblique probe on the kept snapshots with `t ≤ t0`,
/// anchored at the tracked parameters at `t0` (the last snapshot not after
/// the requested anchor time).
fn oblique_series(spec: &ExperimentSpec, tr: &TrackResult, kept: &[(f64, RealField)]) -> Result<Vec<ObliqueSeries>> {
    let want = spec.probes.oblique_t0.unwrap_or(spec.solver.t_end);
    let Some(anchor) = tr.records.iter().rev().find(|r| r.t <= want + 1e-9) else {
        return Ok(Vec::new());
    };
    let t0 = anchor.t;
    let c_lower = spec.c_lower();
    let mut out = Vec::new();
    for &probe in &spec.probes.oblique {
        let weight = WeightSpec::Oblique {
            c_lower,
            theta0: probe.theta0,
            x0: probe.x0,
            center: ObliqueCenter::First,
        };
        let mut s = ObliqueSeries {
            probe,
            t0,
            anchor: anchor.params,
            times: Vec::new(),
            i: Vec::new(),
            j: Vec::new(),
        };
        for (t, u) in kept.iter().filter(|(t, _)| *t <= t0 + 1e-9) {
            let (i, j) = oblique_functionals(u, &weight, &anchor.params, t0, *t, spec.solver.frame_speed * t)?;
            s.times.push(*t);
            s.i.push(i);
            s.j.push(j);
        }
        out.push(s);
    }
    Ok(out)
}

fn write_oblique(art: &mut Artifacts, series: &[ObliqueSeries]) -> Result<()> {
    let Some(first) = series.first() else {
        return Ok(());
    };
    let mut header = String::from("t");
    for k in 0..series.len() {
        let _ = write!(header, ",i_{k},j_{k}");
    }
    let rows = (0..first.times.len()).map(|n| {
        let mut row = vec![first.times[n]];
        for s in series {
            row.push(s.i[n]);
            row.push(s.j[n]);
        }
        row
    });
    let probes: Vec<_> = series.iter().map(|s| s.probe).collect();
    art.table(
        "oblique",
        &csv_rows(&header, rows),
        json!({ "probes": probes, "t0": first.t0, "anchor": first.anchor }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{GridConfig, GroundStateConfig, ProbeSet, SolitonSpec};
    use zk_core::zk_solver::SolverConfig;

    fn small_lab() -> Lab {
        Lab::new(&GroundStateConfig {
            n: 128,
            l: 48.0,
            tol: 1e-11,
            max_iter: 500,
        })
        .unwrap()
    }

    fn small_spec(lab: &Lab) -> ExperimentSpec {
        ExperimentSpec {
            name: "small".into(),
            description: String::new(),
            grid: GridConfig {
                nx: 64,
                ny: 64,
                lx: 40.0,
                ly: 40.0,
            },
            ground_state: *lab.config(),
            solver: SolverConfig::new(0.02, 0.4, 5),
            solitons: vec![SolitonSpec {
                c: 1.0,
                z: 0.0,
                omega: 0.0,
            }],
            perturbation: Perturbation::None,
            probes: ProbeSet::default(),
            sweep: None,
            output: "unused".into(),
        }
    }

    #[test]
    fn single_run_writes_verified_outputs() {
        let lab = small_lab();
        let spec = small_spec(&lab);
        let dir = tempfile::tempdir().unwrap();
        let r = run_evolution(&lab, &spec, dir.path()).unwrap().into_result().unwrap();
        assert_eq!(r.summary.snapshots, 5);
        assert_eq!(r.single.len(), 5);
        assert!(r.summary.speed_error.unwrap() < 1e-3);
        r.manifest.verify(dir.path()).unwrap();
        let names: Vec<_> = r.manifest.files.iter().map(|f| f.path.as_str()).collect();
        for f in ["spec.toml", "diagnostics.csv", "params.csv", "final_state.zkf", "summary.json"] {
            assert!(names.contains(&f), "{f} missing from {names:?}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let lab = small_lab();
        let mut spec = small_spec(&lab);
        spec.perturbation = Perturbation::Noise {
            alpha: 1e-3,
            seed: 5,
            width: 4.0,
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_evolution(&lab, &spec, a.path()).unwrap();
        let rb = run_evolution(&lab, &spec, b.path()).unwrap();
        assert_eq!(ra.manifest.files, rb.manifest.files);
    }

    #[test]
    fn failure_keeps_partial_outputs() {
        let lab = small_lab();
        let mut spec = small_spec(&lab);
        spec.solver = SolverConfig::new(2.0, 40.0, 1);
        let dir = tempfile::tempdir().unwrap();
        let r = run_evolution(&lab, &spec, dir.path()).unwrap();
        assert!(r.summary.failure.is_some());
        assert!(r.summary.snapshots >= 1);
        assert!(r.manifest.failure.is_some());
        r.manifest.verify(dir.path()).unwrap();
        let e = r.into_result().err().unwrap();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn perturbation_has_requested_size() {
        let lab = small_lab();
        let mut spec = small_spec(&lab);
        let f = lab.fitter(&spec.grid.build().unwrap());
        let base = initial_condition(&f, &spec).unwrap();
        for p in [
            Perturbation::LambdaBump {
                amplitude: 0.03,
                wave: 0,
            },
            Perturbation::Noise {
                alpha: 0.02,
                seed: 1,
                width: 4.0,
            },
        ] {
            spec.perturbation = p;
            let u = initial_condition(&f, &spec).unwrap();
            assert!(((&u - &base).h1_norm() - p.amplitude()).abs() < 1e-12);
        }
    }
}
