//! Studies that do not evolve anything: ground-state bundles, spectra,
//! coercivity sampling, interaction integrals and snapshot analysis.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use zk_core::functionals::{
    fit_interactions, interaction_integrals, weighted_mass, InteractionFit, InteractionTable, WeightSpec,
};
use zk_core::groundstate::{solve_ground_state_radial_3d, DecayFit};
use zk_core::invariants;
use zk_core::linop::{
    constrained_rayleigh_floor, ground_state_spectrum, project_out, random_localized_field, two_soliton_h1_floor,
    two_soliton_quadform_on, LinearizedOperator,
};
use zk_core::modulation::{FitOptions, Soliton, SolitonParams};
use zk_core::snapshot::read_snapshot;
use zk_core::{GroundState, RealField};

use crate::error::{ExperimentError, Result};
use crate::lab::Lab;
use crate::manifest::{config_hash, Artifacts, RunManifest};
use crate::recipes::{TWO_SOLITON_C, TWO_SOLITON_Z};
use crate::spec::{GridConfig, GroundStateConfig};

fn two_soliton_grid() -> GridConfig {
    GridConfig {
        nx: 512,
        ny: 256,
        lx: 128.0,
        ly: 64.0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundStateSummary {
    pub dimension: usize,
    pub n: usize,
    pub l: f64,
    pub iterations: usize,
    pub residual: f64,
    pub mass: f64,
    pub energy: f64,
    pub peak: f64,
    /// `|−2E − ½M| / (½M)`, 2D only.
    pub identity_error: Option<f64>,
    pub decay: Option<DecayFit>,
}

/// Summary of a converged 2D ground state.
pub fn ground_state_summary(cfg: &GroundStateConfig, gs: &GroundState) -> Result<GroundStateSummary> {
    let (m, e) = (gs.mass(), gs.energy());
    Ok(GroundStateSummary {
        dimension: 2,
        n: cfg.n,
        l: cfg.l,
        iterations: gs.report().iterations,
        residual: gs.residual(),
        mass: m,
        energy: e,
        peak: gs.peak(),
        identity_error: Some((-2.0 * e - 0.5 * m).abs() / (0.5 * m)),
        decay: Some(gs.fit_decay_rate()?),
    })
}

/// Ground-state bundle: summary, residual history and the profile (2D) or
/// radial profile (3D, with `n` radial points on `[0, l]`).
pub fn cmd_groundstate(cfg: &GroundStateConfig, dim: usize, out: &Path) -> Result<(GroundStateSummary, RunManifest)> {
    let hash = config_hash(&json!({ "ground_state": cfg, "dimension": dim }));
    let mut art = Artifacts::create(out, "ground-state", "groundstate", &hash)?;
    let (summary, history) = match dim {
        2 => {
            let lab = Lab::new(cfg)?;
            let gs = lab.ground_state();
            let q = gs.profile();
            art.snapshot("profile", q, 0.0)?;
            let g = q.grid();
            let iy = g.ny() / 2;
            let mut line = String::from("x,q\n");
            for ix in 0..g.nx() {
                let _ = writeln!(line, "{:.17e},{:.17e}", g.x(ix), q.at(ix, iy));
            }
            art.table("profile_line", &line, json!({ "y": g.y(iy) }))?;
            (ground_state_summary(cfg, gs)?, gs.report().clone())
        }
        3 => {
            let r = solve_ground_state_radial_3d(cfg.n, cfg.l, cfg.tol)?;
            let mut line = String::from("r,q\n");
            for (x, v) in r.radii().iter().zip(r.values()) {
                let _ = writeln!(line, "{x:.17e},{v:.17e}");
            }
            art.table("profile_radial", &line, json!({}))?;
            let s = GroundStateSummary {
                dimension: 3,
                n: cfg.n,
                l: cfg.l,
                iterations: r.report().iterations,
                residual: r.residual(),
                mass: r.mass(),
                energy: r.energy(),
                peak: r.peak(),
                identity_error: None,
                decay: None,
            };
            (s, r.report().clone())
        }
        d => return Err(ExperimentError::Config(format!("dimension must be 2 or 3, got {d}"))),
    };
    let mut hist = String::from("iteration,residual,multiplier\n");
    for (k, res) in history.residual_history.iter().enumerate() {
        let m = history.multiplier_history.get(k).copied().unwrap_or(f64::NAN);
        let _ = writeln!(hist, "{k},{res:.17e},{m:.17e}");
    }
    art.table("residual_history", &hist, json!({}))?;
    art.json("groundstate.json", &summary)?;
    let manifest = art.finish(&summary, None)?;
    Ok((summary, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenSpec {
    pub ground_state: GroundStateConfig,
    pub k: usize,
    pub tol: f64,
    pub trials: usize,
    pub seed: u64,
    /// Envelope width of the random trial fields.
    pub width: f64,
}

impl Default for EigenSpec {
    fn default() -> Self {
        EigenSpec {
            ground_state: GroundStateConfig::default(),
            k: 4,
            tol: 1e-10,
            trials: 100,
            seed: 0,
            width: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenSummary {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub negative_count: usize,
    /// `‖L∂xQ‖/‖∂xQ‖` and `‖L∂yQ‖/‖∂yQ‖`.
    pub kernel_residuals: [f64; 2],
    /// `‖LΛQ + Q‖/‖Q‖`.
    pub scaling_residual: f64,
    /// `min ⟨Lf,f⟩/‖f‖²` over `f ⊥ {Q, ∂xQ, ∂yQ}`.
    pub constrained_floor: f64,
    pub trial_min: f64,
    pub trials: Vec<f64>,
}

/// Spectrum, kernel and scaling checks of `L = −Δ + 1 − 2Q`, and seeded
/// constrained Rayleigh-quotient trials.
pub fn eigen_study(lab: &Lab, spec: &EigenSpec) -> Result<EigenSummary> {
    lab.check(&spec.ground_state)?;
    let q = lab.ground_state();
    let op = LinearizedOperator::new(q);
    let rep = ground_state_spectrum(q, spec.k, spec.tol)?;
    let (qx, qy) = q.profile().spectral_gradient()?;
    let rel = |f: &RealField| -> Result<f64> { Ok(op.apply(f)?.norm_l2() / f.norm_l2()) };
    let lam = q.lambda_c(1.0)?;
    let scaling = (&op.apply(&lam)? + q.profile()).norm_l2() / q.profile().norm_l2();
    let (floor, _) = constrained_rayleigh_floor(q, spec.tol)?;
    let fields = [q.profile().clone(), qx.clone(), qy.clone()];
    let mut trials = Vec::with_capacity(spec.trials);
    for k in 0..spec.trials {
        let f = random_localized_field(q.grid(), spec.seed + k as u64, 0.0, 0.0, spec.width);
        let f = project_out(&f, &fields)?;
        trials.push(op.quadform(&f)? / f.norm_l2().powi(2));
    }
    Ok(EigenSummary {
        negative_count: rep.negative_count(),
        eigenvalues: rep.eigenvalues.clone(),
        residuals: rep.residuals.clone(),
        kernel_residuals: [rel(&qx)?, rel(&qy)?],
        scaling_residual: scaling,
        constrained_floor: floor,
        trial_min: trials.iter().copied().fold(f64::INFINITY, f64::min),
        trials,
    })
}

pub fn cmd_eigen(lab: &Lab, spec: &EigenSpec, out: &Path) -> Result<(EigenSummary, RunManifest)> {
    let mut art = Artifacts::create(out, "eigen", "eigen", &config_hash(spec))?;
    art.json("config.json", spec)?;
    let s = eigen_study(lab, spec)?;
    let mut csv = String::from("index,eigenvalue,residual\n");
    for (k, (l, r)) in s.eigenvalues.iter().zip(&s.residuals).enumerate() {
        let _ = writeln!(csv, "{k},{l:.17e},{r:.17e}");
    }
    art.table("spectrum", &csv, json!({ "tol": spec.tol }))?;
    let mut csv = String::from("trial,rayleigh\n");
    for (k, v) in s.trials.iter().enumerate() {
        let _ = writeln!(csv, "{k},{v:.17e}");
    }
    art.table("trials", &csv, json!({ "seed": spec.seed, "width": spec.width }))?;
    art.json("eigen.json", &s)?;
    let m = art.finish(&s, None)?;
    Ok((s, m))
}

/// Two-soliton coercivity sampling: the constrained H¹ floor of the
/// two-soliton form and seeded random constrained trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoercivitySpec {
    pub grid: GridConfig,
    pub ground_state: GroundStateConfig,
    pub c1: f64,
    pub c2: f64,
    pub z: f64,
    pub gamma: f64,
    pub tol: f64,
    pub trials: usize,
    pub seed: u64,
    pub width: f64,
    pub output: PathBuf,
}

impl Default for CoercivitySpec {
    fn default() -> Self {
        CoercivitySpec {
            grid: two_soliton_grid(),
            ground_state: GroundStateConfig::default(),
            c1: TWO_SOLITON_C.0,
            c2: TWO_SOLITON_C.1,
            z: TWO_SOLITON_Z,
            gamma: 1.15,
            tol: 1e-9,
            trials: 100,
            seed: 0,
            width: 6.0,
            output: PathBuf::from("runs/coercivity"),
        }
    }
}

impl CoercivitySpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.z > 0.0 && self.gamma > 0.0 && self.width > 0.0) {
            return Err(ExperimentError::Config(format!("bad coercivity spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoercivitySummary {
    pub floor: f64,
    pub trial_min: f64,
    pub trials: Vec<f64>,
}

pub fn coercivity_study(lab: &Lab, spec: &CoercivitySpec) -> Result<CoercivitySummary> {
    spec.validate()?;
    lab.check(&spec.ground_state)?;
    let grid = spec.grid.build()?;
    let fitter = lab.fitter(&grid);
    let p = SolitonParams {
        z1: 0.5 * spec.z,
        z2: -0.5 * spec.z,
        omega1: 0.0,
        omega2: 0.0,
        c1: spec.c1,
        c2: spec.c2,
    };
    let t = fitter.templates();
    let u = &t.profile(p.c1, p.z1, 0.0) + &t.profile(p.c2, p.z2, 0.0);
    let dec = fitter.decompose(&u, &p, 0)?;
    let (floor, _) = two_soliton_h1_floor(&dec, spec.gamma, spec.tol)?;
    let fields = dec.constraint_fields();
    let centers = [p.z1, p.z2, p.midpoint()];
    let mut trials = Vec::with_capacity(spec.trials);
    for k in 0..spec.trials {
        let f = random_localized_field(&grid, spec.seed + k as u64, centers[k % 3], 0.0, spec.width);
        let f = project_out(&f, &fields)?;
        let v = two_soliton_quadform_on(&dec, &f, spec.gamma)?;
        trials.push(v.value / v.h1_norm_sq);
    }
    Ok(CoercivitySummary {
        floor,
        trial_min: trials.iter().copied().fold(f64::INFINITY, f64::min),
        trials,
    })
}

pub fn cmd_coercivity(lab: &Lab, spec: &CoercivitySpec, out: &Path) -> Result<(CoercivitySummary, RunManifest)> {
    let mut art = Artifacts::create(out, "coercivity", "coercivity", &config_hash(spec))?;
    art.json("config.json", spec)?;
    let s = coercivity_study(lab, spec)?;
    let mut csv = String::from("trial,ratio\n");
    for (k, v) in s.trials.iter().enumerate() {
        let _ = writeln!(csv, "{k},{v:.17e}");
    }
    art.table("trials", &csv, json!({ "floor": s.floor }))?;
    art.json("coercivity.json", &s)?;
    let m = art.finish(&s, None)?;
    Ok((s, m))
}

/// Interaction integrals over a range of separations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionSpec {
    pub grid: GridConfig,
    pub ground_state: GroundStateConfig,
    pub c1: f64,
    pub c2: f64,
    pub omega: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub samples: usize,
    pub output: PathBuf,
}

impl Default for InteractionSpec {
    fn default() -> Self {
        InteractionSpec {
            grid: two_soliton_grid(),
            ground_state: GroundStateConfig::default(),
            c1: TWO_SOLITON_C.0,
            c2: TWO_SOLITON_C.1,
            omega: 0.0,
            z_min: 15.0,
            z_max: 30.0,
            samples: 16,
            output: PathBuf::from("runs/interactions"),
        }
    }
}

impl InteractionSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.z_min > 0.0 && self.z_max > self.z_min && self.samples >= 2) {
            return Err(ExperimentError::Config(format!("bad interaction spec {self:?}")));
        }
        Ok(())
    }

    pub fn separations(&self) -> Vec<f64> {
        let h = (self.z_max - self.z_min) / (self.samples - 1) as f64;
        (0..self.samples).map(|k| self.z_min + h * k as f64).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionSummary {
    pub tables: Vec<InteractionTable>,
    pub fits: Vec<InteractionFit>,
}

pub fn interaction_study(lab: &Lab, spec: &InteractionSpec) -> Result<InteractionSummary> {
    spec.validate()?;
    lab.check(&spec.ground_state)?;
    let grid = spec.grid.build()?;
    let tables = spec
        .separations()
        .into_iter()
        .map(|z| interaction_integrals(lab.ground_state(), &grid, spec.c1, spec.c2, z, spec.omega))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let fits = fit_interactions(&tables, spec.c1.min(spec.c2), spec.c1.max(spec.c2))?;
    Ok(InteractionSummary { tables, fits })
}

pub fn cmd_interactions(lab: &Lab, spec: &InteractionSpec, out: &Path) -> Result<(InteractionSummary, RunManifest)> {
    let mut art = Artifacts::create(out, "interactions", "interactions", &config_hash(spec))?;
    art.json("config.json", spec)?;
    let s = interaction_study(lab, spec)?;
    let mut csv = String::from("z,rr,r_lambda,dr_r,dr_dr,dr_lambda,dxrr_r,dxrr_dr\n");
    for t in &s.tables {
        let _ = write!(csv, "{:.17e}", t.z);
        for v in t.families() {
            let _ = write!(csv, ",{v:.17e}");
        }
        csv.push('\n');
    }
    art.table("interactions", &csv, json!({ "c1": spec.c1, "c2": spec.c2, "omega": spec.omega }))?;
    art.json("fits.json", &json!({ "fits": s.fits }))?;
    let m = art.finish(&s.fits, None)?;
    Ok((s, m))
}

/// Result of fitting one stored snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotFit {
    pub waves: Vec<Soliton>,
    pub eps_h1: f64,
    pub ortho_residuals: Vec<f64>,
}

/// Fits one or two waves to a stored snapshot. Without a guess the two
/// tallest peaks seed the fit.
pub fn decompose_snapshot(lab: &Lab, path: &Path, waves: usize, guess: Option<&[Soliton]>) -> Result<SnapshotFit> {
    let u = read_snapshot(path)?;
    let fitter = lab.fitter(u.grid());
    let opts = FitOptions::default();
    match waves {
        1 => {
            let w0 = match guess {
                Some([w]) => *w,
                Some(_) => return Err(ExperimentError::Config("one-wave fit needs one guess".into())),
                None => {
                    let (ix, iy) = u.argmax();
                    let g = u.grid();
                    Soliton {
                        z: g.x(ix),
                        omega: g.y(iy),
                        c: u.max_abs() / lab.ground_state().peak(),
                    }
                }
            };
            let (w, eps) = fitter.fit_single(&u, w0, &opts)?;
            Ok(SnapshotFit {
                waves: vec![w],
                eps_h1: eps.h1_norm(),
                ortho_residuals: Vec::new(),
            })
        }
        2 => {
            let p0 = match guess {
                Some([a, b]) => SolitonParams::from_waves(*a, *b),
                Some(_) => return Err(ExperimentError::Config("two-wave fit needs two guesses".into())),
                None => fitter.initial_guess(&u, lab.ground_state().peak())?,
            };
            let d = fitter.fit_parameters(&u, &p0, &opts)?;
            Ok(SnapshotFit {
                waves: vec![d.params.wave(0), d.params.wave(1)],
                eps_h1: d.eps_h1,
                ortho_residuals: d.ortho_residuals.to_vec(),
            })
        }
        n => Err(ExperimentError::Config(format!("can fit one or two waves, not {n}"))),
    }
}

/// Conserved quantities and vertical-line weighted masses of a snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotFunctionals {
    pub mass: f64,
    pub energy: f64,
    pub integral: f64,
    pub weight: WeightSpec,
    /// `(shift, ∫u² w(x − shift))`.
    pub weighted: Vec<(f64, f64)>,
}

pub fn snapshot_functionals(path: &Path, weight: WeightSpec, shifts: &[f64]) -> Result<SnapshotFunctionals> {
    let u = read_snapshot(path)?;
    let weighted = shifts
        .iter()
        .map(|&s| Ok((s, weighted_mass(&u, &weight, s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SnapshotFunctionals {
        mass: invariants::mass(&u),
        energy: invariants::energy(&u),
        integral: invariants::integral(&u),
        weight,
        weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use zk_core::snapshot::write_snapshot;

    fn lab() -> Lab {
        Lab::new(&GroundStateConfig {
            n: 128,
            l: 48.0,
            tol: 1e-11,
            max_iter: 500,
        })
        .unwrap()
    }

    #[test]
    fn decompose_recovers_stored_wave() {
        let lab = lab();
        let g = GridConfig {
            nx: 96,
            ny: 96,
            lx: 48.0,
            ly: 48.0,
        }
        .build()
        .unwrap();
        let u = lab.fitter(&g).templates().profile(1.2, 3.0, -2.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.zkf");
        write_snapshot(&path, &u).unwrap();
        let fit = decompose_snapshot(&lab, &path, 1, None).unwrap();
        let w = fit.waves[0];
        assert!((w.z - 3.0).abs() < 1e-8 && (w.omega + 2.0).abs() < 1e-8 && (w.c - 1.2).abs() < 1e-8);
        assert!(decompose_snapshot(&lab, &path, 3, None).is_err());
    }

    #[test]
    fn snapshot_functionals_match_invariants() {
        let lab = lab();
        let q = lab.ground_state().profile();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.zkf");
        write_snapshot(&path, q).unwrap();
        let f = snapshot_functionals(&path, WeightSpec::Psi, &[0.0]).unwrap();
        assert!((f.mass - lab.ground_state().mass()).abs() < 1e-12 * f.mass);
        assert!((f.weighted[0].1 - 0.5 * f.mass).abs() < 1e-9 * f.mass);
    }

    #[test]
    fn interaction_spec_grid_of_separations() {
        let s = InteractionSpec::default();
        let z = s.separations();
        assert_eq!(z.len(), 16);
        assert_eq!(z[0], 15.0);
        assert!((z[15] - 30.0).abs() < 1e-12);
    }
}
