//! Modulation decomposition `u = R₁ + R₂ + ε` with the six orthogonality
//! conditions `⟨∂xR_i, ε⟩ = ⟨∂yR_i, ε⟩ = ⟨R_i, ε⟩ = 0`, parameter tracking
//! along a trajectory, and the modulation-equation diagnostics.
//!
//! All inner products against templates are evaluated in Fourier space
//! (the DFT of `u` is taken once per fit), so a Newton iteration with a
//! finite-difference Jacobian costs a handful of template rebuilds and no
//! inverse transforms.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError, RealField};
use crate::groundstate::GroundState;
use crate::template::{spectral_inner, Templates};

#[derive(Debug, Error)]
pub enum ModulationError {
    #[error("Newton fit did not converge in {iterations} iterations (residual trace {trace:?})")]
    NotConverged { iterations: usize, trace: Vec<f64> },
    #[error("velocity {value} of wave {wave} left (0, ∞)")]
    VelocityOutOfRange { wave: usize, value: f64 },
    #[error("separation {z:.3} fell below the floor {floor:.3}")]
    SeparationCollapsed { z: f64, floor: f64 },
    #[error("peak detection failed: {0}")]
    NoPeaks(String),
    #[error("tracking needs at least one snapshot")]
    EmptyTrajectory,
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, ModulationError>;

/// Center and velocity of one wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Soliton {
    pub z: f64,
    pub omega: f64,
    pub c: f64,
}

/// `Γ = (z₁, z₂, ω₁, ω₂, c₁, c₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolitonParams {
    pub z1: f64,
    pub z2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SolitonParams {
    pub fn from_waves(a: Soliton, b: Soliton) -> Self {
        SolitonParams {
            z1: a.z,
            z2: b.z,
            omega1: a.omega,
            omega2: b.omega,
            c1: a.c,
            c2: b.c,
        }
    }
    pub fn wave(&self, i: usize) -> Soliton {
        match i {
            0 => Soliton {
                z: self.z1,
                omega: self.omega1,
                c: self.c1,
            },
            _ => Soliton {
                z: self.z2,
                omega: self.omega2,
                c: self.c2,
            },
        }
    }
    pub fn to_array(&self) -> [f64; 6] {
        [self.z1, self.z2, self.omega1, self.omega2, self.c1, self.c2]
    }
    pub fn from_array(a: [f64; 6]) -> Self {
        SolitonParams {
            z1: a[0],
            z2: a[1],
            omega1: a[2],
            omega2: a[3],
            c1: a[4],
            c2: a[5],
        }
    }
    /// `z = z₁ − z₂`.
    pub fn separation(&self) -> f64 {
        self.z1 - self.z2
    }
    /// `m = (z₁ + z₂)/2`.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.z1 + self.z2)
    }
    pub fn c_lower(&self) -> f64 {
        self.c1.min(self.c2)
    }
    pub fn translated(&self, a: f64, b: f64) -> Self {
        SolitonParams {
            z1: self.z1 + a,
            z2: self.z2 + a,
            omega1: self.omega1 + b,
            omega2: self.omega2 + b,
            ..*self
        }
    }
}

/// Result of a two-wave fit.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub params: SolitonParams,
    pub r1: RealField,
    pub r2: RealField,
    pub eps: RealField,
    /// `Φ` in the order `(∂xR₁, ∂xR₂, ∂yR₁, ∂yR₂, R₁, R₂)`.
    pub ortho_residuals: [f64; 6],
    pub eps_h1: f64,
    pub iterations: usize,
    /// Norms of the constraint fields, same order as the residuals.
    pub constraint_norms: [f64; 6],
}

impl Decomposition {
    /// Constraint fields in the residual order.
    pub fn constraint_fields(&self) -> [RealField; 6] {
        let (r1x, r1y) = (self.r1.dx(), self.r1.dy());
        let (r2x, r2y) = (self.r2.dx(), self.r2.dy());
        [r1x, r2x, r1y, r2y, self.r1.clone(), self.r2.clone()]
    }

    /// `|Φ_j| / (‖f_j‖ ‖ε‖)`.
    pub fn relative_residuals(&self) -> [f64; 6] {
        let e = self.eps.norm_l2();
        let mut out = [0.0; 6];
        for j in 0..6 {
            out[j] = self.ortho_residuals[j].abs() / (self.constraint_norms[j] * e);
        }
        out
    }

    /// `R₁ + R₂ + ε`.
    pub fn reconstruct(&self) -> RealField {
        &(&self.r1 + &self.r2) + &self.eps
    }
}

/// Newton settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop once the Newton step is below this (absolute, per parameter).
    pub tol: f64,
    pub max_iter: usize,
    /// Minimum admissible `z₁ − z₂`; `None` uses `10/√c̲`.
    pub separation_floor: Option<f64>,
    /// Hold wave 2 at its initial parameters and fit wave 1 only. Used when
    /// wave 2 is a placeholder that is absent from the data.
    #[serde(default)]
    pub freeze_second: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-12,
            max_iter: 30,
            separation_floor: None,
            freeze_second: false,
        }
    }
}

/// Spectra of one wave's template and its gradient.
struct WaveSpectra {
    r: Vec<Complex64>,
    rx: Vec<Complex64>,
    ry: Vec<Complex64>,
}

/// Template machinery for fitting on one grid.
#[derive(Debug, Clone)]
pub struct Fitter {
    templates: Templates,
    /// `∫Q²` and `∫(∂xQ)²` of the unit ground state.
    mass_q: f64,
    dx_sq_q: f64,
}

impl Fitter {
    pub fn new(q: &GroundState, grid: &Grid) -> Self {
        Fitter {
            templates: q.templates(grid),
            mass_q: q.mass(),
            dx_sq_q: q.dx_sq_integral(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.templates.grid()
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    fn wave_from_radial(&self, radial: &[f64], w: Soliton) -> WaveSpectra {
        let r = self.templates.place(radial, w.z, w.omega);
        let (rx, ry) = self.templates.gradient_spectra(&r);
        WaveSpectra { r, rx, ry }
    }

    fn wave(&self, w: Soliton) -> WaveSpectra {
        self.wave_from_radial(&self.templates.radial_profile(w.c), w)
    }

    /// `Φ` for `n` waves from `û` and the wave spectra; order is all `∂x`,
    /// then all `∂y`, then all `R`.
    fn phi(&self, uh: &[Complex64], waves: &[&WaveSpectra]) -> Vec<f64> {
        let g = self.grid();
        let mut eh = uh.to_vec();
        for w in waves {
            for (e, r) in eh.iter_mut().zip(&w.r) {
                *e -= r;
            }
        }
        let mut out = Vec::with_capacity(3 * waves.len());
        for w in waves {
            out.push(spectral_inner(g, &w.rx, &eh));
        }
        for w in waves {
            out.push(spectral_inner(g, &w.ry, &eh));
        }
        for w in waves {
            out.push(spectral_inner(g, &w.r, &eh));
        }
        out
    }

    /// `Φ(u, Γ)`.
    pub fn orthogonality_residuals(&self, u: &RealField, p: &SolitonParams) -> Result<[f64; 6]> {
        self.grid().check_same(u.grid())?;
        u.check_finite()?;
        let uh = self.grid().forward(u.data());
        let (a, b) = (self.wave(p.wave(0)), self.wave(p.wave(1)));
        let v = self.phi(&uh, &[&a, &b]);
        Ok([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    /// Diagonal leading part of the Jacobian of `Φ`:
    /// `∂Φ/∂z_i = c_i²∫(∂xQ)²`, `∂Φ/∂ω_i = c_i²∫(∂yQ)²`, `∂Φ/∂c_i = −½∫Q²`.
    pub fn analytic_diagonal(&self, p: &SolitonParams) -> [f64; 6] {
        let k = self.dx_sq_q;
        let m = -0.5 * self.mass_q;
        [p.c1 * p.c1 * k, p.c2 * p.c2 * k, p.c1 * p.c1 * k, p.c2 * p.c2 * k, m, m]
    }

    /// Finite-difference Jacobian of `Φ` in the parameter order of `Γ`.
    pub fn jacobian(&self, u: &RealField, p: &SolitonParams) -> Result<DMatrix<f64>> {
        let uh = self.grid().forward(u.data());
        let waves = [p.wave(0), p.wave(1)];
        let radial = [
            self.templates.radial_profile(waves[0].c),
            self.templates.radial_profile(waves[1].c),
        ];
        Ok(self.jacobian_waves(&uh, &waves, &radial))
    }

    /// Columns ordered `z_1..z_n, ω_1..ω_n, c_1..c_n` to match `Γ`.
    fn jacobian_waves(&self, uh: &[Complex64], waves: &[Soliton], radial: &[Vec<f64>]) -> DMatrix<f64> {
        let n = waves.len();
        let base: Vec<WaveSpectra> = waves
            .iter()
            .zip(radial)
            .map(|(w, r)| self.wave_from_radial(r, *w))
            .collect();
        let mut jac = DMatrix::<f64>::zeros(3 * n, 3 * n);
        for i in 0..n {
            for kind in 0..3 {
                let w = waves[i];
                let h = match kind {
                    0 | 1 => 1e-5,
                    _ => 1e-5 * w.c,
                };
                let shifted = |s: f64| -> WaveSpectra {
                    match kind {
                        0 => self.wave_from_radial(&radial[i], Soliton { z: w.z + s, ..w }),
                        1 => self.wave_from_radial(&radial[i], Soliton { omega: w.omega + s, ..w }),
                        _ => self.wave(Soliton { c: w.c + s, ..w }),
                    }
                };
                let (wp, wm) = (shifted(h), shifted(-h));
                let with = |x: &WaveSpectra| -> Vec<f64> {
                    let refs: Vec<&WaveSpectra> = (0..n)
                        .map(|j| if j == i { x } else { &base[j] })
                        .collect();
                    self.phi(uh, &refs)
                };
                let (fp, fm) = (with(&wp), with(&wm));
                let col = kind * n + i;
                for r in 0..3 * n {
                    jac[(r, col)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
        }
        jac
    }

    /// Damped Newton on `Φ = 0` for `n` waves. Returns the waves and the
    /// iteration count.
    fn newton(
        &self,
        uh: &[Complex64],
        start: Vec<Soliton>,
        opts: &FitOptions,
        floor: Option<f64>,
    ) -> Result<(Vec<Soliton>, usize)> {
        let n = start.len();
        let mut waves = start;
        let mut trace = Vec::new();
        let eval = |ws: &[Soliton]| -> (Vec<Vec<f64>>, Vec<f64>) {
            let radial: Vec<Vec<f64>> = ws.iter().map(|w| self.templates.radial_profile(w.c)).collect();
            let specs: Vec<WaveSpectra> = ws
                .iter()
                .zip(&radial)
                .map(|(w, r)| self.wave_from_radial(r, *w))
                .collect();
            let refs: Vec<&WaveSpectra> = specs.iter().collect();
            let f = self.phi(uh, &refs);
            (radial, f)
        };
        let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (mut radial, mut f) = eval(&waves);
        trace.push(norm(&f));
        for it in 1..=opts.max_iter {
            let jac = self.jacobian_waves(uh, &waves, &radial);
            let rhs = DVector::from_iterator(3 * n, f.iter().map(|v| -v));
            let step = match jac.clone().lu().solve(&rhs) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    // fall back on the diagonal leading part
                    let k = self.dx_sq_q;
                    DVector::from_iterator(
                        3 * n,
                        (0..3 * n).map(|r| {
                            let i = r % n;
                            let d = match r / n {
                                0 | 1 => waves[i].c * waves[i].c * k,
                                _ => -0.5 * self.mass_q,
                            };
                            rhs[r] / d
                        }),
                    )
                }
            };
            let apply = |ws: &[Soliton], s: f64| -> Vec<Soliton> {
                ws.iter()
                    .enumerate()
                    .map(|(i, w)| Soliton {
                        z: w.z + s * step[i],
                        omega: w.omega + s * step[n + i],
                        c: w.c + s * step[2 * n + i],
                    })
                    .collect()
            };
            let f0 = norm(&f);
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=8 {
                let cand = apply(&waves, scale);
                if cand.iter().all(|w| w.c > 0.0 && w.c.is_finite()) {
                    let (r, fc) = eval(&cand);
                    if norm(&fc) < f0 || scale < 1.0 / 128.0 {
                        accepted = Some((cand, r, fc));
                        break;
                    }
                    // near the rounding floor the norm can wobble; accept tiny steps
                    if step.amax() * scale <= opts.tol {
                        accepted = Some((cand, r, fc));
                        break;
                    }
                }
                scale *= 0.5;
            }
            let Some((cand, r, fc)) = accepted else {
                let (wave, value) = apply(&waves, scale)
                    .iter()
                    .enumerate()
                    .find(|(_, w)| !(w.c > 0.0))
                    .map(|(i, w)| (i + 1, w.c))
                    .unwrap_or((0, f64::NAN));
                return Err(ModulationError::VelocityOutOfRange { wave, value });
            };
            waves = cand;
            radial = r;
            f = fc;
            trace.push(norm(&f));
            if let Some(floor) = floor {
                let z = waves[0].z - waves[1].z;
                if z < floor {
                    return Err(ModulationError::SeparationCollapsed { z, floor });
                }
            }
            if step.amax() * scale <= opts.tol {
                return Ok((waves, it));
            }
        }
        Err(ModulationError::NotConverged {
            iterations: opts.max_iter,
            trace,
        })
    }

    /// Fits `Γ` from the initial guess `p0`.
    pub fn fit_parameters(&self, u: &RealField, p0: &SolitonParams, opts: &FitOptions) -> Result<Decomposition> {
        self.grid().check_same(u.grid())?;
        u.check_finite()?;
        for (i, c) in [p0.c1, p0.c2].into_iter().enumerate() {
            if !(c > 0.0 && c.is_finite()) {
                return Err(ModulationError::VelocityOutOfRange { wave: i + 1, value: c });
            }
        }
        let floor = opts
            .separation_floor
            .unwrap_or_else(|| crate::linop::separation_floor(p0.c_lower()));
        if p0.separation() < floor {
            return Err(ModulationError::SeparationCollapsed {
                z: p0.separation(),
                floor,
            });
        }
        let mut uh = self.grid().forward(u.data());
        let (params, iterations) = if opts.freeze_second {
            let fixed = self.wave(p0.wave(1));
            for (a, b) in uh.iter_mut().zip(&fixed.r) {
                *a -= b;
            }
            let (w, it) = self.newton(&uh, vec![p0.wave(0)], opts, None)?;
            let params = SolitonParams::from_waves(w[0], p0.wave(1));
            if params.separation() < floor {
                return Err(ModulationError::SeparationCollapsed {
                    z: params.separation(),
                    floor,
                });
            }
            (params, it)
        } else {
            let (w, it) = self.newton(&uh, vec![p0.wave(0), p0.wave(1)], opts, Some(floor))?;
            (SolitonParams::from_waves(w[0], w[1]), it)
        };
        self.decompose(u, &params, iterations)
    }

    /// Builds the decomposition at fixed `Γ` (no fitting).
    pub fn decompose(&self, u: &RealField, params: &SolitonParams, iterations: usize) -> Result<Decomposition> {
        self.grid().check_same(u.grid())?;
        let a = self.wave(params.wave(0));
        let b = self.wave(params.wave(1));
        let uh = self.grid().forward(u.data());
        let phi = self.phi(&uh, &[&a, &b]);
        let norm = |s: &[Complex64]| spectral_inner(self.grid(), s, s).sqrt();
        let constraint_norms = [
            norm(&a.rx),
            norm(&b.rx),
            norm(&a.ry),
            norm(&b.ry),
            norm(&a.r),
            norm(&b.r),
        ];
        let r1 = self.templates.field(a.r);
        let r2 = self.templates.field(b.r);
        let eps = RealField::from_parts(
            self.grid(),
            u.data()
                .iter()
                .zip(r1.data())
                .zip(r2.data())
                .map(|((u, a), b)| u - a - b)
                .collect(),
        );
        let eps_h1 = eps.h1_norm();
        Ok(Decomposition {
            params: *params,
            r1,
            r2,
            eps,
            ortho_residuals: [phi[0], phi[1], phi[2], phi[3], phi[4], phi[5]],
            eps_h1,
            iterations,
            constraint_norms,
        })
    }

    /// Fits a single wave (three constraints).
    pub fn fit_single(&self, u: &RealField, w0: Soliton, opts: &FitOptions) -> Result<(Soliton, RealField)> {
        self.grid().check_same(u.grid())?;
        u.check_finite()?;
        let uh = self.grid().forward(u.data());
        let (w, _) = self.newton(&uh, vec![w0], opts, None)?;
        let r = self.templates.field(self.wave(w[0]).r);
        let eps = u - &r;
        Ok((w[0], eps))
    }

    /// Cold-start guess from the two largest separated maxima: centers from
    /// a sub-pixel peak fit, velocities from `max Q_c = c Q(0)`. The taller
    /// peak becomes wave 1, and `z₂` is unwrapped to lie left of `z₁`.
    pub fn initial_guess(&self, u: &RealField, q0: f64) -> Result<SolitonParams> {
        let peaks = find_peaks(u, 2)?;
        if peaks.len() < 2 {
            return Err(ModulationError::NoPeaks(format!("found {} peak(s)", peaks.len())));
        }
        let (a, b) = (peaks[0], peaks[1]);
        let g = u.grid();
        let z2 = a.0 - (g.wrap_x(a.0 - b.0)).abs();
        Ok(SolitonParams {
            z1: a.0,
            z2,
            omega1: a.1,
            omega2: a.1 + g.wrap_y(b.1 - a.1),
            c1: a.2 / q0,
            c2: b.2 / q0,
        })
    }
}

/// Up to `count` separated positive maxima `(x, y, value)`, tallest first.
/// Each accepted peak masks a disk of radius `8/√c` around it.
pub fn find_peaks(u: &RealField, count: usize) -> Result<Vec<(f64, f64, f64)>> {
    let g = u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut masked = vec![false; g.len()];
    let mut out = Vec::new();
    let q0 = crate::groundstate::GROUND_STATE_PEAK;
    while out.len() < count {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in u.data().iter().enumerate() {
            if !masked[i] && v > best.1 {
                best = (i, v);
            }
        }
        if !(best.1 > 0.0) {
            break;
        }
        let (ix, iy) = (best.0 % nx, best.0 / nx);
        let vertex = |fm: f64, f0: f64, fp: f64| {
            let d = fm - 2.0 * f0 + fp;
            if d < 0.0 {
                0.5 * (fm - fp) / d
            } else {
                0.0
            }
        };
        let f0 = u.at(ix, iy);
        let ox = vertex(u.at((ix + nx - 1) % nx, iy), f0, u.at((ix + 1) % nx, iy));
        let oy = vertex(u.at(ix, (iy + ny - 1) % ny), f0, u.at(ix, (iy + 1) % ny));
        let (x, y) = (g.x(ix) + ox * g.dx(), g.y(iy) + oy * g.dy());
        out.push((x, y, f0));
        let radius = 8.0 / (f0 / q0).max(1e-3).sqrt();
        for jy in 0..ny {
            let dy = g.wrap_y(g.y(jy) - y);
            for jx in 0..nx {
                let dx = g.wrap_x(g.x(jx) - x);
                if dx * dx + dy * dy < radius * radius {
                    masked[jy * nx + jx] = true;
                }
            }
        }
    }
    if out.is_empty() {
        return Err(ModulationError::NoPeaks("field has no positive maximum".into()));
    }
    Ok(out)
}

/// Parameters and diagnostics of one tracked snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRecord {
    pub t: f64,
    pub params: SolitonParams,
    pub eps_h1: f64,
    pub ortho_residuals: [f64; 6],
    /// `(∫ e^{−¼√c̲ |x − (z_i, ω_i)|} ε²)^{1/2}` for each wave.
    pub eps_windowed: [f64; 2],
    pub iterations: usize,
    /// `d/dt` of `Γ` by centered differences (one-sided at the ends).
    pub derivatives: [f64; 6],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackResult {
    pub records: Vec<TrackRecord>,
    /// Time and message of the first failed fit, if any.
    pub failure: Option<(f64, String)>,
}

impl TrackResult {
    pub const CSV_HEADER: &'static str = "t,z1,z2,omega1,omega2,c1,c2,eps_h1,phi_dxr1,phi_dxr2,phi_dyr1,phi_dyr2,phi_r1,phi_r2,dz1,dz2,domega1,domega2,dc1,dc2";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{:.17e}", r.t);
            for v in r.params.to_array() {
                let _ = write!(s, ",{v:.17e}");
            }
            let _ = write!(s, ",{:.17e}", r.eps_h1);
            for v in r.ortho_residuals.iter().chain(r.derivatives.iter()) {
                let _ = write!(s, ",{v:.17e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }
}

/// `(∫ e^{−¼√c̲ |x − center|} ε²)^{1/2}` with nearest-image distances.
pub fn windowed_eps_norm(eps: &RealField, center: (f64, f64), c_lower: f64) -> f64 {
    let g = eps.grid();
    let a = 0.25 * c_lower.sqrt();
    let mut s = 0.0;
    for iy in 0..g.ny() {
        let dy = g.wrap_y(g.y(iy) - center.1);
        for ix in 0..g.nx() {
            let dx = g.wrap_x(g.x(ix) - center.0);
            let v = eps.at(ix, iy);
            s += (-a * (dx * dx + dy * dy).sqrt()).exp() * v * v;
        }
    }
    (s * g.cell_area()).sqrt()
}

/// Branch of `value` (mod `period`) nearest `reference`.
pub fn unwrap_near(value: f64, reference: f64, period: f64) -> f64 {
    let d = value - reference;
    reference + d - period * (d / period).round()
}

/// Centered differences (one-sided at the ends) of a sampled series.
pub fn centered_differences(t: &[f64], v: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                0.0
            } else if i == 0 {
                (v[1] - v[0]) / (t[1] - t[0])
            } else if i == n - 1 {
                (v[n - 1] - v[n - 2]) / (t[n - 1] - t[n - 2])
            } else {
                (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1])
            }
        })
        .collect()
}

/// Incremental tracker: warm-starts each fit from the previous parameters
/// advanced by `c_i Δt` along x, and unwraps centers to the branch nearest
/// that prediction.
pub struct Tracker<'a> {
    fitter: &'a Fitter,
    opts: FitOptions,
    c_lower: f64,
    last: Option<(f64, SolitonParams)>,
    records: Vec<TrackRecord>,
    failure: Option<(f64, String)>,
}

impl<'a> Tracker<'a> {
    pub fn new(fitter: &'a Fitter, initial: SolitonParams, opts: FitOptions) -> Self {
        Tracker {
            fitter,
            opts,
            c_lower: initial.c_lower(),
            last: Some((f64::NAN, initial)),
            records: Vec::new(),
            failure: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Fits the snapshot at time `t`. After a failure further calls are
    /// ignored and return `None`.
    pub fn push(&mut self, t: f64, u: &RealField) -> Option<Decomposition> {
        if self.failure.is_some() {
            return None;
        }
        let (t_prev, prev) = self.last.expect("tracker state");
        let dt = if t_prev.is_nan() { 0.0 } else { t - t_prev };
        let guess = SolitonParams {
            z1: prev.z1 + prev.c1 * dt,
            z2: prev.z2 + prev.c2 * dt,
            ..prev
        };
        match self.fitter.fit_parameters(u, &guess, &self.opts) {
            Ok(mut dec) => {
                let g = self.fitter.grid();
                let p = &mut dec.params;
                p.z1 = unwrap_near(p.z1, guess.z1, g.lx());
                p.z2 = unwrap_near(p.z2, guess.z2, g.lx());
                p.omega1 = unwrap_near(p.omega1, guess.omega1, g.ly());
                p.omega2 = unwrap_near(p.omega2, guess.omega2, g.ly());
                let eps_windowed = [
                    windowed_eps_norm(&dec.eps, (p.z1, p.omega1), self.c_lower),
                    windowed_eps_norm(&dec.eps, (p.z2, p.omega2), self.c_lower),
                ];
                self.records.push(TrackRecord {
                    t,
                    params: *p,
                    eps_h1: dec.eps_h1,
                    ortho_residuals: dec.ortho_residuals,
                    eps_windowed,
                    iterations: dec.iterations,
                    derivatives: [0.0; 6],
                });
                self.last = Some((t, *p));
                Some(dec)
            }
            Err(e) => {
                self.failure = Some((t, e.to_string()));
                None
            }
        }
    }

    pub fn finish(self) -> TrackResult {
        let mut records = self.records;
        let t: Vec<f64> = records.iter().map(|r| r.t).collect();
        for k in 0..6 {
            let v: Vec<f64> = records.iter().map(|r| r.params.to_array()[k]).collect();
            let d = centered_differences(&t, &v);
            for (r, dv) in records.iter_mut().zip(d) {
                r.derivatives[k] = dv;
            }
        }
        TrackResult {
            records,
            failure: self.failure,
        }
    }
}

/// Tracks a list of `(t, u)` snapshots.
pub fn track(fitter: &Fitter, snapshots: &[(f64, RealField)], initial: SolitonParams, opts: FitOptions) -> Result<TrackResult> {
    if snapshots.is_empty() {
        return Err(ModulationError::EmptyTrajectory);
    }
    let mut tr = Tracker::new(fitter, initial, opts);
    for (t, u) in snapshots {
        if tr.push(*t, u).is_none() {
            break;
        }
    }
    Ok(tr.finish())
}

/// Left and right sides of the modulation-equation bound per snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeCheck {
    pub times: Vec<f64>,
    /// `max_i |ċ_i| + |ż_i − c_i| + |ω̇_i|`.
    pub left: Vec<f64>,
    /// `max_i windowed‖ε‖_i + e^{−½√c̲(Z + σt)}`.
    pub right: Vec<f64>,
    pub sup_ratio: f64,
    pub sup_left: f64,
}

pub fn modulation_ode_check(series: &TrackResult, c_lower: f64, z: f64, sigma: f64) -> OdeCheck {
    let mut out = OdeCheck {
        times: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        sup_ratio: 0.0,
        sup_left: 0.0,
    };
    for r in &series.records {
        let d = r.derivatives;
        let p = r.params;
        let l1 = d[4].abs() + (d[0] - p.c1).abs() + d[2].abs();
        let l2 = d[5].abs() + (d[1] - p.c2).abs() + d[3].abs();
        let left = l1.max(l2);
        let right = r.eps_windowed[0].max(r.eps_windowed[1])
            + (-0.5 * c_lower.sqrt() * (z + sigma * r.t)).exp();
        out.times.push(r.t);
        out.left.push(left);
        out.right.push(right);
        out.sup_ratio = out.sup_ratio.max(left / right);
        out.sup_left = out.sup_left.max(left);
    }
    out
}

/// Linear interpolation of tracked parameters at time `t` (clamped).
pub fn interpolate_params(series: &TrackResult, t: f64) -> Option<SolitonParams> {
    let r = &series.records;
    let first = r.first()?;
    if t <= first.t {
        return Some(first.params);
    }
    for w in r.windows(2) {
        if t <= w[1].t {
            let s = (t - w[0].t) / (w[1].t - w[0].t);
            let (a, b) = (w[0].params.to_array(), w[1].params.to_array());
            let mut v = [0.0; 6];
            for k in 0..6 {
                v[k] = a[k] + s * (b[k] - a[k]);
            }
            return Some(SolitonParams::from_array(v));
        }
    }
    r.last().map(|l| l.params)
}
