//! Time stepping for `∂t u + ∂x(Δu + u²) = 0` on the periodic box.
//!
//! The state is held as a half spectrum (real-to-complex along x, complex
//! along y) in a transposed layout: mode `(jx, iy)` with `jx ≤ nx/2` sits at
//! `jx * ny + iy`. The linear part has the skew symbol `i kx |k|²` and is
//! integrated exactly by a fourth-order exponential Runge–Kutta scheme
//! (ETDRK4); the quadratic term is formed on the two-thirds-truncated field.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError, RealField};
use crate::invariants;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("time step {dt} exceeds the calibrated ceiling {ceiling}")]
    AboveCeiling { dt: f64, ceiling: f64 },
    #[error("non-finite state after the step ending at t = {t}")]
    NonFinite { t: f64 },
    #[error("relative mass drift {drift:.3e} at t = {t} exceeds the sentinel {limit:.0e}")]
    MassSentinel { t: f64, drift: f64, limit: f64 },
    #[error("probe failed at t = {t}: {message}")]
    Probe { t: f64, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Relative mass drift that aborts a run.
pub const MASS_SENTINEL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dealias {
    #[default]
    TwoThirds,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Etdrk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub dealias: Dealias,
    #[serde(default)]
    pub integrator: Integrator,
    /// Steps between snapshots (diagnostics and probes).
    pub snapshot_stride: usize,
    /// Keep every snapshot's state in the trajectory.
    #[serde(default)]
    pub keep_states: bool,
    /// Largest stable step from [`calibrate`], if known.
    #[serde(default)]
    pub dt_ceiling: Option<f64>,
    /// Speed of the computational frame; probes still see lab coordinates.
    #[serde(default)]
    pub frame_speed: f64,
    /// Absorbing layer at the frame seam `x = ±lx/2`.
    #[serde(default)]
    pub sponge: Option<Sponge>,
}

/// Linear damping `−σ(x)u` with `σ = strength · e^{−(d/width)²}`, where `d`
/// is the distance to the seam of the computational frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sponge {
    pub width: f64,
    pub strength: f64,
}

impl Sponge {
    pub fn profile(&self, grid: &Grid) -> Vec<f64> {
        let row: Vec<f64> = (0..grid.nx())
            .map(|ix| {
                let d = grid.wrap_x(grid.x(ix) - 0.5 * grid.lx());
                self.strength * (-(d / self.width).powi(2)).exp()
            })
            .collect();
        let mut out = Vec::with_capacity(grid.len());
        for _ in 0..grid.ny() {
            out.extend_from_slice(&row);
        }
        out
    }
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64, snapshot_stride: usize) -> Self {
        SolverConfig {
            dt,
            t_end,
            dealias: Dealias::TwoThirds,
            integrator: Integrator::Etdrk4,
            snapshot_stride,
            keep_states: false,
            dt_ceiling: None,
            frame_speed: 0.0,
            sponge: None,
        }
    }

    /// Number of steps; `t_end` must be a whole number of steps.
    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(SolverError::BadConfig(format!(
                "t_end {} is not a multiple of dt {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::BadConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SolverError::BadConfig(format!("t_end must be ≥ 0, got {}", self.t_end)));
        }
        if self.snapshot_stride == 0 {
            return Err(SolverError::BadConfig("snapshot_stride must be ≥ 1".into()));
        }
        if !self.frame_speed.is_finite() {
            return Err(SolverError::BadConfig("frame_speed must be finite".into()));
        }
        if let Some(sp) = self.sponge {
            if !(sp.width > 0.0 && sp.strength >= 0.0 && sp.strength.is_finite()) {
                return Err(SolverError::BadConfig(format!("bad sponge {sp:?}")));
            }
        }
        if let Some(ceiling) = self.dt_ceiling {
            if self.dt > ceiling {
                return Err(SolverError::AboveCeiling { dt: self.dt, ceiling });
            }
        }
        Ok(())
    }
}

/// `φ₁, φ₂, φ₃` of the exponential integrator.
fn phi123(z: Complex64) -> [Complex64; 3] {
    if z.norm() <= 2.0 {
        // φ_k(z) = Σ_j z^j / (j + k)!
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (k, o) in out.iter_mut().enumerate() {
            let mut fact: f64 = (1..=k + 1).map(|v| v as f64).product();
            let mut term = Complex64::new(1.0 / fact, 0.0);
            let mut acc = term;
            for j in 1..40 {
                fact = (j + k + 1) as f64;
                term = term * z / fact;
                acc += term;
            }
            *o = acc;
        }
        out
    } else {
        let p1 = (z.exp() - 1.0) / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        [p1, p2, p3]
    }
}

/// Real-to-complex 2D transform in the transposed half-spectrum layout.
struct HalfFft {
    nx: usize,
    ny: usize,
    hx: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    rows: Vec<Complex64>,
    row_real: Vec<f64>,
    scratch: Vec<Complex64>,
}

impl HalfFft {
    fn new(nx: usize, ny: usize) -> Self {
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        let r2c = rp.plan_fft_forward(nx);
        let c2r = rp.plan_fft_inverse(nx);
        let fwd_y = cp.plan_fft_forward(ny);
        let inv_y = cp.plan_fft_inverse(ny);
        let hx = nx / 2 + 1;
        let scratch_len = r2c
            .get_scratch_len()
            .max(c2r.get_scratch_len())
            .max(fwd_y.get_inplace_scratch_len())
            .max(inv_y.get_inplace_scratch_len());
        HalfFft {
            nx,
            ny,
            hx,
            r2c,
            c2r,
            fwd_y,
            inv_y,
            rows: vec![Complex64::new(0.0, 0.0); hx * ny],
            row_real: vec![0.0; nx],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    /// Unnormalized forward transform of row-major real samples.
    fn forward(&mut self, data: &[f64], out: &mut [Complex64]) {
        let (nx, ny, hx) = (self.nx, self.ny, self.hx);
        for iy in 0..ny {
            self.row_real.copy_from_slice(&data[iy * nx..(iy + 1) * nx]);
            let row = &mut self.rows[iy * hx..(iy + 1) * hx];
            self.r2c
                .process_with_scratch(&mut self.row_real, row, &mut self.scratch)
                .expect("r2c length");
        }
        for iy in 0..ny {
            for jx in 0..hx {
                out[jx * ny + iy] = self.rows[iy * hx + jx];
            }
        }
        self.fwd_y.process_with_scratch(out, &mut self.scratch);
    }

    /// Normalized inverse transform; `spec` is consumed as workspace.
    fn inverse(&mut self, spec: &mut [Complex64], out: &mut [f64]) {
        let (nx, ny, hx) = (self.nx, self.ny, self.hx);
        self.inv_y.process_with_scratch(spec, &mut self.scratch);
        let s = 1.0 / (nx * ny) as f64;
        for jx in 0..hx {
            for iy in 0..ny {
                self.rows[iy * hx + jx] = spec[jx * ny + iy] * s;
            }
        }
        for iy in 0..ny {
            let row = &mut self.rows[iy * hx..(iy + 1) * hx];
            // the x-transform of a real field has real DC and Nyquist entries
            row[0].im = 0.0;
            if nx % 2 == 0 {
                row[hx - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(row, &mut self.row_real, &mut self.scratch)
                .expect("c2r length");
            out[iy * nx..(iy + 1) * nx].copy_from_slice(&self.row_real);
        }
    }
}

/// Reusable ETDRK4 stepper for one grid and one step size.
pub struct Stepper {
    grid: Grid,
    dt: f64,
    fft: HalfFft,
    /// `−i kx` on kept modes, zero elsewhere.
    nl: Vec<Complex64>,
    keep: Vec<bool>,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
    work: [Vec<Complex64>; 7],
    real: Vec<f64>,
    tmp: Vec<Complex64>,
    sponge: Option<Vec<f64>>,
    damped: Vec<f64>,
    damped_spec: Vec<Complex64>,
    absorbed: f64,
}

impl Stepper {
    pub fn new(grid: &Grid, dt: f64, dealias: Dealias) -> Result<Self> {
        Self::build(grid, dt, dealias, 0.0, None)
    }

    /// Stepper with the frame speed and sponge of `cfg`.
    pub fn from_config(grid: &Grid, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(grid, cfg.dt, cfg.dealias, cfg.frame_speed, cfg.sponge)
    }

    fn build(grid: &Grid, dt: f64, dealias: Dealias, frame_speed: f64, sponge: Option<Sponge>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolverError::BadConfig(format!("dt must be positive, got {dt}")));
        }
        let (nx, ny) = (grid.nx(), grid.ny());
        let hx = nx / 2 + 1;
        let m = hx * ny;
        let mut nl = Vec::with_capacity(m);
        let mut keep = Vec::with_capacity(m);
        let (mut e, mut e2, mut q, mut f1, mut f2, mut f3) = (
            Vec::with_capacity(m),
            Vec::with_capacity(m),
            Vec::with_capacity(m),
            Vec::with_capacity(m),
            Vec::with_capacity(m),
            Vec::with_capacity(m),
        );
        let two_pi_lx = 2.0 * std::f64::consts::PI / grid.lx();
        for jx in 0..hx {
            let kx = jx as f64 * two_pi_lx;
            for iy in 0..ny {
                let ky = grid.ky()[iy];
                let k = match dealias {
                    Dealias::TwoThirds => grid.dealias_keep(jx, iy),
                    Dealias::None => !(nx % 2 == 0 && jx == nx / 2) && !(ny % 2 == 0 && iy == ny / 2),
                };
                keep.push(k);
                nl.push(if k { Complex64::new(0.0, -kx) } else { Complex64::new(0.0, 0.0) });
                let z = Complex64::new(0.0, dt * kx * (kx * kx + ky * ky + frame_speed));
                let [p1, p2, p3] = phi123(z);
                let [h1, _, _] = phi123(z * 0.5);
                e.push(z.exp());
                e2.push((z * 0.5).exp());
                q.push(h1 * (0.5 * dt));
                f1.push((p1 - p2 * 3.0 + p3 * 4.0) * dt);
                f2.push((p2 - p3 * 2.0) * dt);
                f3.push((p3 * 4.0 - p2) * dt);
            }
        }
        let zero = vec![Complex64::new(0.0, 0.0); m];
        Ok(Stepper {
            grid: grid.clone(),
            dt,
            fft: HalfFft::new(nx, ny),
            nl,
            keep,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            work: std::array::from_fn(|_| zero.clone()),
            real: vec![0.0; nx * ny],
            damped: if sponge.is_some() { vec![0.0; nx * ny] } else { Vec::new() },
            damped_spec: if sponge.is_some() { zero.clone() } else { Vec::new() },
            sponge: sponge.map(|sp| sp.profile(grid)),
            tmp: zero,
            absorbed: 0.0,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Half spectrum of a field.
    pub fn spectrum(&mut self, u: &RealField) -> Result<Vec<Complex64>> {
        self.grid.check_same(u.grid())?;
        let mut out = vec![Complex64::new(0.0, 0.0); self.tmp.len()];
        self.fft.forward(u.data(), &mut out);
        Ok(out)
    }

    /// Field from a half spectrum.
    pub fn field(&mut self, v: &[Complex64]) -> RealField {
        self.tmp.copy_from_slice(v);
        let mut out = vec![0.0; self.grid.len()];
        self.fft.inverse(&mut self.tmp, &mut out);
        RealField::from_parts(&self.grid, out)
    }

    /// Mass removed by the sponge so far (left-point rule in time).
    pub fn absorbed(&self) -> f64 {
        self.absorbed
    }

    /// `−∂x(Pu)² − σPu` projected on the kept modes, in place of `out`.
    /// With `record`, accumulates the sponge loss `2 dt ∫σu²`.
    fn nonlinear(&mut self, v: &[Complex64], out: &mut [Complex64], record: bool) {
        for ((t, a), &k) in self.tmp.iter_mut().zip(v).zip(&self.keep) {
            *t = if k { *a } else { Complex64::new(0.0, 0.0) };
        }
        self.fft.inverse(&mut self.tmp, &mut self.real);
        if let Some(sigma) = &self.sponge {
            let mut loss = 0.0;
            for ((d, u), s) in self.damped.iter_mut().zip(&self.real).zip(sigma) {
                *d = s * u;
                loss += s * u * u;
            }
            if record {
                self.absorbed += 2.0 * self.dt * loss * self.grid.cell_area();
            }
            self.fft.forward(&self.damped, &mut self.damped_spec);
        }
        for r in self.real.iter_mut() {
            *r *= *r;
        }
        self.fft.forward(&self.real, out);
        for (o, g) in out.iter_mut().zip(&self.nl) {
            *o *= g;
        }
        if self.sponge.is_some() {
            for ((o, d), &k) in out.iter_mut().zip(&self.damped_spec).zip(&self.keep) {
                if k {
                    *o -= d;
                }
            }
        }
    }

    /// Spectral right-hand side `−∂x(u²)` of a field.
    pub fn rhs_nonlinear(&mut self, u: &RealField) -> Result<RealField> {
        let v = self.spectrum(u)?;
        let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
        self.nonlinear(&v, &mut out, false);
        Ok(self.field(&out))
    }

    /// One ETDRK4 step on a half spectrum.
    pub fn step_spectrum(&mut self, v: &mut [Complex64]) {
        let mut w = std::mem::take(&mut self.work);
        let [nv, a, na, b, nb, c, nc] = &mut w;
        self.nonlinear(v, nv, true);
        for i in 0..v.len() {
            a[i] = self.e2[i] * v[i] + self.q[i] * nv[i];
        }
        self.nonlinear(a, na, false);
        for i in 0..v.len() {
            b[i] = self.e2[i] * v[i] + self.q[i] * na[i];
        }
        self.nonlinear(b, nb, false);
        for i in 0..v.len() {
            c[i] = self.e2[i] * a[i] + self.q[i] * (nb[i] * 2.0 - nv[i]);
        }
        self.nonlinear(c, nc, false);
        for i in 0..v.len() {
            v[i] = self.e[i] * v[i] + self.f1[i] * nv[i] + self.f2[i] * (na[i] + nb[i]) * 2.0 + self.f3[i] * nc[i];
        }
        self.work = w;
    }

    /// Advances `u` by `steps` steps.
    pub fn advance(&mut self, u: &RealField, steps: usize) -> Result<RealField> {
        u.check_finite()?;
        let mut v = self.spectrum(u)?;
        for n in 0..steps {
            self.step_spectrum(&mut v);
            if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(SolverError::NonFinite {
                    t: (n + 1) as f64 * self.dt,
                });
            }
        }
        Ok(self.field(&v))
    }
}

/// `−∂x(u²)` with the two-thirds rule.
pub fn rhs_nonlinear(u: &RealField) -> Result<RealField> {
    u.check_finite()?;
    Stepper::new(u.grid(), 1.0, Dealias::TwoThirds)?.rhs_nonlinear(u)
}

/// Advances `u` by one step of `cfg.dt`.
pub fn step(u: &RealField, cfg: &SolverConfig) -> Result<RealField> {
    cfg.validate()?;
    Stepper::new(u.grid(), cfg.dt, cfg.dealias)?.advance(u, 1)
}

/// Observer called at every snapshot; an `Err` aborts the run.
pub trait Probe {
    fn observe(&mut self, t: f64, u: &RealField) -> std::result::Result<(), String>;
}

impl<F: FnMut(f64, &RealField) -> std::result::Result<(), String>> Probe for F {
    fn observe(&mut self, t: f64, u: &RealField) -> std::result::Result<(), String> {
        self(t, u)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    /// `∫u`.
    pub integral: f64,
    pub max_abs: f64,
    /// Mass removed by the sponge up to `t`.
    #[serde(default)]
    pub absorbed: f64,
}

impl DiagnosticsRecord {
    pub fn of(t: f64, u: &RealField) -> Self {
        DiagnosticsRecord {
            t,
            mass: invariants::mass(u),
            energy: invariants::energy(u),
            integral: invariants::integral(u),
            max_abs: u.max_abs(),
            absorbed: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Snapshot states, present only with `keep_states`.
    pub states: Vec<RealField>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub final_state: RealField,
}

/// Drift summary of a trajectory relative to its first record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Drift {
    pub mass: f64,
    pub energy: f64,
    /// Absolute drift of the mean `∫u / |box|`.
    pub mean: f64,
}

impl Trajectory {
    /// Empty trajectory whose final state is `u0`.
    pub fn start(u0: &RealField) -> Self {
        Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            diagnostics: Vec::new(),
            final_state: u0.clone(),
        }
    }

    /// Largest drifts over the records; zero for an empty trajectory.
    pub fn drift(&self) -> Drift {
        let Some(&d0) = self.diagnostics.first() else {
            return Drift {
                mass: 0.0,
                energy: 0.0,
                mean: 0.0,
            };
        };
        let area = self.final_state.grid().lx() * self.final_state.grid().ly();
        let rel = |a: f64, b: f64| if b != 0.0 { (a - b).abs() / b.abs() } else { (a - b).abs() };
        let mut out = Drift {
            mass: 0.0,
            energy: 0.0,
            mean: 0.0,
        };
        for d in &self.diagnostics {
            out.mass = out.mass.max(rel(d.mass + d.absorbed, d0.mass));
            out.energy = out.energy.max(rel(d.energy, d0.energy));
            out.mean = out.mean.max((d.integral - d0.integral).abs() / area);
        }
        out
    }

    pub const CSV_HEADER: &'static str = "t,mass,energy,integral,max_abs,absorbed,mass_drift,energy_drift";

    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let Some(&d0) = self.diagnostics.first() else {
            return s;
        };
        for d in &self.diagnostics {
            let _ = writeln!(
                s,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                d.t,
                d.mass,
                d.energy,
                d.integral,
                d.max_abs,
                d.absorbed,
                (d.mass + d.absorbed - d0.mass) / d0.mass,
                (d.energy - d0.energy) / d0.energy
            );
        }
        s
    }

    pub fn write_diagnostics(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.diagnostics_csv()).map_err(|source| {
            SolverError::Grid(GridError::Io {
                path: path.display().to_string(),
                source,
            })
        })
    }
}

/// Evolves `u0` to `cfg.t_end`, calling every probe at each snapshot
/// (including `t = 0` and the final time). With a frame speed `s` the
/// computation runs in `x − st` and snapshots are shifted back, so probes
/// and stored states are in lab coordinates. The mass sentinel counts mass
/// removed by the sponge as conserved.
pub fn evolve(u0: &RealField, cfg: &SolverConfig, probes: &mut [&mut dyn Probe]) -> Result<Trajectory> {
    let mut traj = Trajectory::start(u0);
    evolve_into(u0, cfg, probes, &mut traj)?;
    Ok(traj)
}

/// [`evolve`] writing into `traj`, which keeps every snapshot taken before
/// an error.
pub fn evolve_into(
    u0: &RealField,
    cfg: &SolverConfig,
    probes: &mut [&mut dyn Probe],
    traj: &mut Trajectory,
) -> Result<()> {
    let steps = cfg.steps()?;
    u0.check_finite()?;
    let mut st = Stepper::from_config(u0.grid(), cfg)?;
    let mut v = st.spectrum(u0)?;
    *traj = Trajectory::start(u0);
    let m0 = invariants::mass(u0);
    let mut snapshot = |traj: &mut Trajectory, t: f64, u: RealField, absorbed: f64| -> Result<()> {
        let u = if cfg.frame_speed != 0.0 { u.translate(cfg.frame_speed * t, 0.0) } else { u };
        let mut d = DiagnosticsRecord::of(t, &u);
        d.absorbed = absorbed;
        let kept = d.mass + absorbed;
        let drift = if m0 > 0.0 { (kept - m0).abs() / m0 } else { kept };
        if drift > MASS_SENTINEL {
            return Err(SolverError::MassSentinel {
                t,
                drift,
                limit: MASS_SENTINEL,
            });
        }
        for p in probes.iter_mut() {
            p.observe(t, &u).map_err(|message| SolverError::Probe { t, message })?;
        }
        traj.times.push(t);
        traj.diagnostics.push(d);
        if cfg.keep_states {
            traj.states.push(u.clone());
        }
        traj.final_state = u;
        Ok(())
    };
    snapshot(traj, 0.0, u0.clone(), 0.0)?;
    for n in 1..=steps {
        st.step_spectrum(&mut v);
        let t = n as f64 * cfg.dt;
        if n % cfg.snapshot_stride == 0 || n == steps {
            let u = st.field(&v);
            if u.check_finite().is_err() {
                return Err(SolverError::NonFinite { t });
            }
            snapshot(traj, t, u, st.absorbed())?;
        } else if n % 64 == 0 && v.iter().any(|z| !z.re.is_finite()) {
            return Err(SolverError::NonFinite { t });
        }
    }
    Ok(())
}

/// Outcome of a step-size calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    /// Largest step found stable on the horizon.
    pub dt_max: f64,
    pub horizon: f64,
    /// Every tested `(dt, stable)` pair in order.
    pub trials: Vec<(f64, bool)>,
}

fn stable_run(u0: &RealField, dt: f64, horizon: f64) -> Result<bool> {
    let mut st = Stepper::new(u0.grid(), dt, Dealias::TwoThirds)?;
    let steps = (horizon / dt).ceil() as usize;
    let m0 = invariants::mass(u0);
    let peak = u0.max_abs();
    match st.advance(u0, steps) {
        Ok(u) => {
            let drift = (invariants::mass(&u) - m0).abs() / m0.max(f64::MIN_POSITIVE);
            Ok(drift <= MASS_SENTINEL && u.max_abs() <= 4.0 * peak.max(1e-300))
        }
        Err(SolverError::NonFinite { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Largest stable step for `u0` on `horizon`: halve `dt_hi` until stable,
/// then bisect between the last unstable and the first stable step.
pub fn calibrate(u0: &RealField, dt_hi: f64, horizon: f64, bisections: usize) -> Result<Calibration> {
    if !(dt_hi > 0.0 && horizon > 0.0) {
        return Err(SolverError::BadConfig("calibration needs dt_hi > 0 and horizon > 0".into()));
    }
    let mut trials = Vec::new();
    let mut hi = dt_hi;
    let ok = stable_run(u0, hi, horizon)?;
    trials.push((hi, ok));
    if ok {
        return Ok(Calibration {
            dt_max: hi,
            horizon,
            trials,
        });
    }
    let mut lo = hi;
    loop {
        lo *= 0.5;
        let ok = stable_run(u0, lo, horizon)?;
        trials.push((lo, ok));
        if ok {
            break;
        }
        hi = lo;
        if lo < 1e-8 * dt_hi {
            return Err(SolverError::BadConfig("no stable step found".into()));
        }
    }
    for _ in 0..bisections {
        let mid = 0.5 * (lo + hi);
        let ok = stable_run(u0, mid, horizon)?;
        trials.push((mid, ok));
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration {
        dt_max: lo,
        horizon,
        trials,
    })
}

/// Temporal order study: errors at `dt` and `dt/2` against a `dt/8`
/// reference at time `t_end`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrderStudy {
    pub dt: f64,
    pub error_dt: f64,
    pub error_half: f64,
    pub ratio: f64,
}

pub fn order_study(u0: &RealField, dt: f64, t_end: f64) -> Result<OrderStudy> {
    let run = |h: f64| -> Result<RealField> {
        let cfg = SolverConfig::new(h, t_end, usize::MAX);
        let n = cfg.steps()?;
        Stepper::new(u0.grid(), h, Dealias::TwoThirds)?.advance(u0, n)
    };
    let reference = run(dt / 8.0)?;
    let e1 = (&run(dt)? - &reference).norm_l2();
    let e2 = (&run(dt / 2.0)? - &reference).norm_l2();
    Ok(OrderStudy {
        dt,
        error_dt: e1,
        error_half: e2,
        ratio: e1 / e2,
    })
}

/// H¹ distance between `u0` and the result of evolving forward to `t_end`,
/// applying `x → −x`, evolving again and reflecting back.
pub fn time_reversal_error(u0: &RealField, cfg: &SolverConfig) -> Result<f64> {
    let n = cfg.steps()?;
    let mut st = Stepper::new(u0.grid(), cfg.dt, cfg.dealias)?;
    let forward = st.advance(u0, n)?;
    let back = st.advance(&forward.reflect_x(), n)?.reflect_x();
    Ok((&back - u0).h1_norm())
}
