//! Experiment specification, read from and written to TOML.
//!
//! ```toml
//! name = "two-soliton-stability"
//! output = "runs/two-soliton"
//!
//! [grid]
//! nx = 512
//! ny = 256
//! lx = 128.0
//! ly = 64.0
//!
//! [solver]
//! dt = 0.01
//! t_end = 40.0
//! snapshot_stride = 50
//! frame_speed = 1.15
//! sponge = { width = 6.0, strength = 1.0 }
//!
//! [[solitons]]
//! c = 1.3
//! z = 15.0
//!
//! [[solitons]]
//! c = 1.0
//! z = -15.0
//!
//! [perturbation]
//! kind = "noise"
//! alpha = 0.01
//! seed = 11
//!
//! [probes]
//! gamma = 1.15
//! oblique = [{ theta0 = 0.0, x0 = 5.0 }]
//!
//! [sweep]
//! z = [20.0, 26.0, 32.0]
//! ```
//!
//! Solitons are listed right to left: with two waves the first is the
//! leading (faster) one and `z₁ > z₂`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zk_core::linop::separation_floor;
use zk_core::zk_solver::SolverConfig;
use zk_core::Grid;

use crate::error::{io_err, ExperimentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub grid: GridConfig,
    #[serde(default)]
    pub ground_state: GroundStateConfig,
    pub solver: SolverConfig,
    pub solitons: Vec<SolitonSpec>,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub probes: ProbeSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny, self.lx, self.ly).map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

/// Reference grid for the Petviashvili solve that the templates are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStateConfig {
    pub n: usize,
    pub l: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GroundStateConfig {
    fn default() -> Self {
        GroundStateConfig {
            n: 512,
            l: 60.0,
            tol: 1e-12,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolitonSpec {
    pub c: f64,
    pub z: f64,
    #[serde(default)]
    pub omega: f64,
}

/// Perturbation added to the sum of templates. Amplitudes are H¹ norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    #[default]
    None,
    /// `amplitude · ΛQ_c / ‖ΛQ_c‖_{H¹}` placed on wave `wave` (0-based).
    LambdaBump { amplitude: f64, wave: usize },
    /// Seeded band-limited noise under a Gaussian envelope, centered between
    /// the waves (or on the single wave).
    Noise {
        alpha: f64,
        seed: u64,
        #[serde(default = "default_noise_width")]
        width: f64,
    },
}

fn default_noise_width() -> f64 {
    12.0
}

impl Perturbation {
    /// H¹ size of the perturbation.
    pub fn amplitude(&self) -> f64 {
        match *self {
            Perturbation::None => 0.0,
            Perturbation::LambdaBump { amplitude, .. } => amplitude.abs(),
            Perturbation::Noise { alpha, .. } => alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObliqueProbe {
    pub theta0: f64,
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSet {
    /// Fit the modulation parameters at every snapshot.
    pub track: bool,
    /// Transition scale of the localized-mass weight `ψ_γ`.
    pub gamma: f64,
    /// Oblique weights, evaluated against the parameters at `oblique_t0`.
    pub oblique: Vec<ObliqueProbe>,
    /// Anchor time for the oblique functionals; defaults to `t_end`.
    pub oblique_t0: Option<f64>,
    /// Write the final state as a binary snapshot.
    pub final_snapshot: bool,
}

impl Default for ProbeSet {
    fn default() -> Self {
        ProbeSet {
            track: true,
            gamma: 1.15,
            oblique: Vec::new(),
            oblique_t0: None,
            final_snapshot: true,
        }
    }
}

/// Axes of a sweep; cells are the Cartesian product of the given lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<Vec<f64>>,
    /// Initial separation `Z`, applied symmetrically about the initial midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    /// Noise amplitude; turns a `none` perturbation into seeded noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl Default for SweepAxes {
    fn default() -> Self {
        SweepAxes {
            c1: None,
            c2: None,
            z: None,
            alpha: None,
            workers: default_workers(),
        }
    }
}

/// Seed used when a sweep adds noise to an unperturbed spec.
pub const SWEEP_NOISE_SEED: u64 = 11;

/// Minimum distance of a soliton center from the box seam, in e-folding
/// widths `1/√c`.
pub const SEAM_WIDTHS: f64 = 10.0;

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn c_lower(&self) -> f64 {
        self.solitons.iter().map(|s| s.c).fold(f64::INFINITY, f64::min)
    }

    /// Initial separation `z₁⁰ − z₂⁰` (two waves only).
    pub fn separation(&self) -> Option<f64> {
        match self.solitons.as_slice() {
            [a, b] => Some(a.z - b.z),
            _ => None,
        }
    }

    /// Velocity gap `σ = c₁⁰ − c₂⁰` (two waves only).
    pub fn sigma(&self) -> Option<f64> {
        match self.solitons.as_slice() {
            [a, b] => Some(a.c - b.c),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        let grid = self.grid.build()?;
        let gs = &self.ground_state;
        if gs.n < 16 || !(gs.l > 0.0) || !(gs.tol > 0.0) || gs.max_iter == 0 {
            return bad(format!("bad ground_state config {gs:?}"));
        }
        self.solver.steps()?;
        if let Some(t0) = self.probes.oblique_t0 {
            if !(0.0..=self.solver.t_end).contains(&t0) {
                return bad(format!("oblique_t0 {t0} outside [0, t_end]"));
            }
        }
        match self.solitons.len() {
            1 | 2 => {}
            n => return bad(format!("need one or two solitons, got {n}")),
        }
        for (i, s) in self.solitons.iter().enumerate() {
            if !(s.c > 0.0 && s.c.is_finite()) {
                return bad(format!("soliton {i}: velocity must be positive, got {}", s.c));
            }
            let margin = SEAM_WIDTHS / s.c.sqrt();
            if s.z.abs() > 0.5 * grid.lx() - margin || s.omega.abs() > 0.5 * grid.ly() - margin {
                return bad(format!(
                    "soliton {i} at ({}, {}) is closer than {margin:.2} to the box seam",
                    s.z, s.omega
                ));
            }
        }
        if let [a, b] = self.solitons.as_slice() {
            let z = a.z - b.z;
            let floor = separation_floor(self.c_lower());
            let ceiling = 0.5 * grid.lx() - SEAM_WIDTHS / self.c_lower().sqrt();
            if z < floor || z > ceiling {
                return bad(format!("separation {z} outside [{floor:.2}, {ceiling:.2}]"));
            }
        }
        match self.perturbation {
            Perturbation::None => {}
            Perturbation::LambdaBump { amplitude, wave } => {
                if !amplitude.is_finite() || wave >= self.solitons.len() {
                    return bad(format!("bad lambda bump (amplitude {amplitude}, wave {wave})"));
                }
            }
            Perturbation::Noise { alpha, width, .. } => {
                if !(alpha >= 0.0 && alpha.is_finite() && width > 0.0) {
                    return bad(format!("bad noise (alpha {alpha}, width {width})"));
                }
            }
        }
        if !(self.probes.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.probes.gamma));
        }
        for p in &self.probes.oblique {
            if !(p.theta0.abs() < PI / 3.0 && p.x0 > 0.0) {
                return bad(format!("oblique probe {p:?} needs |theta0| < pi/3 and x0 > 0"));
            }
        }
        if !self.probes.oblique.is_empty() && (self.solitons.len() != 2 || !self.probes.track) {
            return bad("oblique probes need two tracked solitons".into());
        }
        if let Some(axes) = &self.sweep {
            axes.validate(self)?;
        }
        Ok(())
    }
}

impl SweepAxes {
    fn validate(&self, spec: &ExperimentSpec) -> Result<()> {
        let axes = [&self.c1, &self.c2, &self.z, &self.alpha];
        if axes.iter().all(|a| a.is_none()) {
            return Err(ExperimentError::Config("sweep has no axes".into()));
        }
        if axes.iter().any(|a| a.as_ref().is_some_and(|v| v.is_empty())) {
            return Err(ExperimentError::Config("sweep axes must be non-empty".into()));
        }
        let two = spec.solitons.len() == 2;
        if (self.c2.is_some() || self.z.is_some()) && !two {
            return Err(ExperimentError::Config("c2 and z axes need two solitons".into()));
        }
        if self.workers == 0 {
            return Err(ExperimentError::Config("workers must be at least 1".into()));
        }
        if self.alpha.is_some() && matches!(spec.perturbation, Perturbation::LambdaBump { .. }) {
            return Err(ExperimentError::Config("alpha axis needs a noise or empty perturbation".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipes;

    #[test]
    fn toml_roundtrip_keeps_hash() {
        for name in recipes::EVOLVE_RECIPES {
            let spec = recipes::spec(name).unwrap();
            let back = ExperimentSpec::from_toml(&spec.to_toml()).unwrap();
            assert_eq!(back, spec);
            assert_eq!(back.hash(), spec.hash());
        }
    }

    #[test]
    fn rejects_wave_near_seam() {
        let mut spec = recipes::spec("two-soliton-stability").unwrap();
        spec.solitons[0].z = 60.0;
        assert!(matches!(spec.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = recipes::spec("single-soliton").unwrap().to_toml() + "\nbogus = 1\n";
        assert!(ExperimentSpec::from_toml(&text).is_err());
    }

    #[test]
    fn rejects_empty_sweep_axis() {
        let mut spec = recipes::spec("two-soliton-stability").unwrap();
        spec.sweep = Some(SweepAxes {
            z: Some(vec![]),
            workers: 1,
            ..Default::default()
        });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = recipes::spec("single-soliton").unwrap();
        let mut b = a.clone();
        b.solver.t_end = 5.0;
        assert_ne!(a.hash(), b.hash());
    }
}
