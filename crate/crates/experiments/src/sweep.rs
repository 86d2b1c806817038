//! Parameter sweeps over `c₁⁰`, `c₂⁰`, `Z` and `α`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ExperimentError, Result};
use crate::lab::Lab;
use crate::manifest::{Artifacts, RunManifest};
use crate::run::{run_evolution, RunSummary};
use crate::spec::{ExperimentSpec, Perturbation, SWEEP_NOISE_SEED};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellValues {
    pub c1: f64,
    pub c2: Option<f64>,
    pub z: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    pub values: CellValues,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub values: CellValues,
    pub sigma: Option<f64>,
    pub dir: String,
    /// `None` if the cell could not be run at all.
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.summary.as_ref().is_some_and(|s| s.failure.is_none())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
}

fn axis(v: &Option<Vec<f64>>, default: f64) -> Vec<f64> {
    v.clone().unwrap_or_else(|| vec![default])
}

/// Expands the sweep axes into single-run specs (row-major in
/// `c1, c2, z, alpha`). A spec without axes gives one cell.
pub fn expand(spec: &ExperimentSpec) -> Result<Vec<Cell>> {
    let axes = spec.sweep.clone().unwrap_or_default();
    let two = spec.solitons.len() == 2;
    let base_c2 = spec.solitons.get(1).map(|s| s.c).unwrap_or(f64::NAN);
    let base_z = spec.separation().unwrap_or(f64::NAN);
    let mid = spec.solitons.iter().map(|s| s.z).sum::<f64>() / spec.solitons.len() as f64;
    let mut cells = Vec::new();
    for &c1 in &axis(&axes.c1, spec.solitons[0].c) {
        for &c2 in &axis(&axes.c2, base_c2) {
            for &z in &axis(&axes.z, base_z) {
                for &alpha in &axis(&axes.alpha, spec.perturbation.amplitude()) {
                    let index = cells.len();
                    let mut s = spec.clone();
                    s.sweep = None;
                    if spec.sweep.is_some() {
                        s.name = format!("{}-cell{index:03}", spec.name);
                    }
                    s.solitons[0].c = c1;
                    if two {
                        s.solitons[1].c = c2;
                        s.solitons[0].z = mid + 0.5 * z;
                        s.solitons[1].z = mid - 0.5 * z;
                    }
                    if axes.alpha.is_some() {
                        s.perturbation = match s.perturbation {
                            Perturbation::Noise { seed, width, .. } => Perturbation::Noise { alpha, seed, width },
                            _ if alpha == 0.0 => Perturbation::None,
                            _ => Perturbation::Noise {
                                alpha,
                                seed: SWEEP_NOISE_SEED,
                                width: 12.0,
                            },
                        };
                    }
                    cells.push(Cell {
                        index,
                        values: CellValues {
                            c1,
                            c2: two.then_some(c2),
                            z: two.then_some(z),
                            alpha,
                        },
                        spec: s,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn run_cell(lab: &Lab, cell: &Cell, out: &Path) -> CellResult {
    let dir = format!("cell{:03}", cell.index);
    let (summary, error) = match cell
        .spec
        .validate()
        .and_then(|_| run_evolution(lab, &cell.spec, &out.join(&dir)))
    {
        Ok(r) => (Some(r.summary), None),
        Err(e) => (None, Some(e.to_string())),
    };
    CellResult {
        index: cell.index,
        values: cell.values,
        sigma: cell.spec.sigma(),
        dir,
        summary,
        error,
    }
}

pub const SWEEP_CSV_HEADER: &str =
    "cell,c1,c2,z,alpha,sigma,status,sup_eps_h1,z_margin,max_dc,monotonicity_defect,fitted_a4,mass_drift,error";

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.17e}")).unwrap_or_default()
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_CSV_HEADER);
        s.push('\n');
        for c in &self.cells {
            let sm = c.summary.as_ref();
            let status = if c.ok() { "ok" } else { "failed" };
            let err = c
                .error
                .clone()
                .or_else(|| sm.and_then(|s| s.failure.clone()))
                .unwrap_or_default()
                .replace([',', '\n'], ";");
            let _ = writeln!(
                s,
                "{},{:.17e},{},{},{:.17e},{},{status},{},{},{},{},{},{},{err}",
                c.index,
                c.values.c1,
                opt(c.values.c2),
                opt(c.values.z),
                c.values.alpha,
                opt(c.sigma),
                opt(sm.and_then(|s| s.sup_eps_h1)),
                opt(sm.and_then(|s| s.z_margin)),
                opt(sm.and_then(|s| s.max_dc)),
                opt(sm.and_then(|s| s.monotonicity.map(|m| m.max_increase))),
                opt(sm.and_then(|s| s.monotonicity.map(|m| m.fitted_a4))),
                opt(sm.map(|s| s.mass_drift)),
            );
        }
        s
    }
}

/// Runs every cell (up to `workers` at a time) and writes `sweep.csv` and
/// the manifest. A failing cell is recorded and the sweep continues.
pub fn run_sweep(lab: &Lab, spec: &ExperimentSpec, out: &Path) -> Result<(SweepReport, RunManifest)> {
    spec.validate()?;
    lab.check(&spec.ground_state)?;
    let cells = expand(spec)?;
    let workers = spec.sweep.as_ref().map(|a| a.workers).unwrap_or(1);
    let mut art = Artifacts::create(out, &spec.name, "sweep", &spec.hash())?;
    art.spec(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| cells.par_iter().map(|c| run_cell(lab, c, out)).collect());
    let report = SweepReport { cells: results };
    art.table(
        "sweep",
        &report.to_csv(),
        json!({ "cells": report.cells.iter().map(|c| &c.dir).collect::<Vec<_>>() }),
    )?;
    let failed = report.cells.iter().filter(|c| !c.ok()).count();
    let summary = json!({ "cells": report.cells.len(), "failed": failed });
    let manifest = art.finish(&summary, (failed > 0).then(|| format!("{failed} cell(s) failed")))?;
    Ok((report, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipes;

    #[test]
    fn expansion_is_row_major_and_symmetric() {
        let spec = recipes::spec("z-alpha-sweep").unwrap();
        let cells = expand(&spec).unwrap();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[1].values.alpha, 5e-3);
        assert_eq!(cells[3].values.z, Some(26.0));
        for c in &cells {
            let s = &c.spec;
            assert!(s.sweep.is_none());
            assert!((s.separation().unwrap() - c.values.z.unwrap()).abs() < 1e-12);
            assert!((s.solitons[0].z + s.solitons[1].z).abs() < 1e-12);
            assert_eq!(s.perturbation.amplitude(), c.values.alpha);
            s.validate().unwrap();
        }
        assert!(matches!(cells[0].spec.perturbation, Perturbation::None));
    }

    #[test]
    fn spec_without_axes_is_one_cell() {
        let spec = recipes::spec("two-soliton-stability").unwrap();
        let cells = expand(&spec).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].spec.solitons, spec.solitons);
        assert_eq!(cells[0].spec, spec);
    }
}
