//! Weights `ψ`, `ψ_γ`, `φ` and the localized functionals built on them:
//! localized mass, oblique mass/energy functionals, soliton interaction
//! integrals and the monotonicity and energy-expansion reports.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError, RealField};
use crate::groundstate::GroundState;
use crate::modulation::{Decomposition, SolitonParams};
use crate::template::spectral_inner;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("oblique angle {0} outside (−π/3, π/3)")]
    AngleOutOfRange(f64),
    #[error("weight scale must be positive, got {0}")]
    BadScale(f64),
    #[error("templates overflow the box: {0}")]
    TemplatesOverflow(String),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, FunctionalError>;

fn sech(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// `ψ(x) = (2/π) arctan(eˣ)`.
pub fn psi(x: f64) -> f64 {
    if x > 0.0 {
        1.0 - 2.0 / PI * (-x).exp().atan()
    } else {
        2.0 / PI * x.exp().atan()
    }
}

/// `ψ'(x) = 1/(π cosh x)`.
pub fn psi_prime(x: f64) -> f64 {
    sech(x) / PI
}

/// `ψ'''(x) = sech x (tanh² x − sech² x) / π`.
pub fn psi_third(x: f64) -> f64 {
    let s = sech(x);
    let t = x.tanh();
    s * (t * t - s * s) / PI
}

/// `ψ_γ(x) = ψ(√γ x / 2)`.
pub fn psi_gamma(x: f64, gamma: f64) -> f64 {
    psi(0.5 * gamma.sqrt() * x)
}

pub fn psi_gamma_prime(x: f64, gamma: f64) -> f64 {
    let a = 0.5 * gamma.sqrt();
    a * psi_prime(a * x)
}

pub fn psi_gamma_third(x: f64, gamma: f64) -> f64 {
    let a = 0.5 * gamma.sqrt();
    a * a * a * psi_third(a * x)
}

/// `φ(x) = ψ(√c̲ x / 4)`.
pub fn phi(x: f64, c_lower: f64) -> f64 {
    psi(0.25 * c_lower.sqrt() * x)
}

pub fn phi_prime(x: f64, c_lower: f64) -> f64 {
    let a = 0.25 * c_lower.sqrt();
    a * psi_prime(a * x)
}

pub fn phi_third(x: f64, c_lower: f64) -> f64 {
    let a = 0.25 * c_lower.sqrt();
    a * a * a * psi_third(a * x)
}

/// Which center the oblique weight follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObliqueCenter {
    /// `x̃`: anchored at the first (faster) wave.
    First,
    /// `x̂`: anchored at the second wave.
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Psi,
    PsiGamma {
        gamma: f64,
    },
    Phi {
        c_lower: f64,
    },
    Oblique {
        c_lower: f64,
        theta0: f64,
        x0: f64,
        center: ObliqueCenter,
    },
}

impl WeightSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightSpec::Psi => Ok(()),
            WeightSpec::PsiGamma { gamma: s } | WeightSpec::Phi { c_lower: s } => check_scale(s),
            WeightSpec::Oblique {
                c_lower, theta0, ..
            } => {
                check_scale(c_lower)?;
                if theta0.is_finite() && theta0.abs() < PI / 3.0 {
                    Ok(())
                } else {
                    Err(FunctionalError::AngleOutOfRange(theta0))
                }
            }
        }
    }

    /// Evaluates a one-dimensional weight; oblique specs use `φ`.
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            WeightSpec::Psi => psi(x),
            WeightSpec::PsiGamma { gamma } => psi_gamma(x, gamma),
            WeightSpec::Phi { c_lower } | WeightSpec::Oblique { c_lower, .. } => phi(x, c_lower),
        }
    }
}

fn check_scale(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(FunctionalError::BadScale(s))
    }
}

/// Weight field `w(wrap(x − shift))`, constant in `y`.
fn vertical_weight<F: Fn(f64) -> f64>(grid: &Grid, shift: f64, w: F) -> Vec<f64> {
    let row: Vec<f64> = (0..grid.nx())
        .map(|ix| w(grid.wrap_x(grid.x(ix) - shift)))
        .collect();
    let mut out = Vec::with_capacity(grid.len());
    for _ in 0..grid.ny() {
        out.extend_from_slice(&row);
    }
    out
}

fn weighted_sum(grid: &Grid, f: &[f64], w: &[f64]) -> f64 {
    crate::grid::dot(f, w) * grid.cell_area()
}

/// `∫ u² w(x − shift)` for a vertical-line weight.
pub fn weighted_mass(u: &RealField, spec: &WeightSpec, shift: f64) -> Result<f64> {
    spec.validate()?;
    let w = vertical_weight(u.grid(), shift, |x| spec.eval(x));
    let sq: Vec<f64> = u.data().iter().map(|v| v * v).collect();
    Ok(weighted_sum(u.grid(), &sq, &w))
}

/// `I = ∫ u² ψ_γ(x − m)` with `m = (z₁ + z₂)/2`.
pub fn localized_mass_i(u: &RealField, params: &SolitonParams, gamma: f64) -> Result<f64> {
    weighted_mass(u, &WeightSpec::PsiGamma { gamma }, params.midpoint())
}

/// Right side of the time derivative of `I` computed from the field:
/// `∫ (−3(∂x u)² − (∂y u)² + (4/3)u³ − ṁ u²) ψ_γ' + ∫ u² ψ_γ'''`.
pub fn localized_mass_rate(u: &RealField, m: f64, mdot: f64, gamma: f64) -> Result<f64> {
    check_scale(gamma)?;
    let g = u.grid();
    let (ux, uy) = u.spectral_gradient()?;
    let w1 = vertical_weight(g, m, |x| psi_gamma_prime(x, gamma));
    let w3 = vertical_weight(g, m, |x| psi_gamma_third(x, gamma));
    let mut s = 0.0;
    for i in 0..g.len() {
        let v = u.data()[i];
        let a = -3.0 * ux.data()[i].powi(2) - uy.data()[i].powi(2) + 4.0 / 3.0 * v * v * v
            - mdot * v * v;
        s += a * w1[i] + v * v * w3[i];
    }
    Ok(s * g.cell_area())
}

/// Dissipation term `−(min(1,γ)/8) ∫ (u² + |∇u|²) ψ_γ'(x − m)`.
pub fn localized_dissipation(u: &RealField, m: f64, gamma: f64) -> Result<f64> {
    check_scale(gamma)?;
    let g = u.grid();
    let (ux, uy) = u.spectral_gradient()?;
    let w1 = vertical_weight(g, m, |x| psi_gamma_prime(x, gamma));
    let dens: Vec<f64> = (0..g.len())
        .map(|i| u.data()[i].powi(2) + ux.data()[i].powi(2) + uy.data()[i].powi(2))
        .collect();
    Ok(-gamma.min(1.0) / 8.0 * weighted_sum(g, &dens, &w1))
}

/// Oblique argument `x̃` (or `x̂`) at time `t` for anchor time `t0`.
///
/// The periodic box is read as the physical window of width `lx` centered at
/// `box_center`; `x̃` is not wrapped, so the weight sees no seam in `x`.
fn oblique_argument(
    grid: &Grid,
    spec: &WeightSpec,
    anchor: &SolitonParams,
    t0: f64,
    t: f64,
    box_center: f64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let WeightSpec::Oblique {
        c_lower,
        theta0,
        x0,
        center,
    } = *spec
    else {
        return Err(FunctionalError::BadScale(f64::NAN));
    };
    let (zc, wc) = match center {
        ObliqueCenter::First => (anchor.z1, anchor.omega1),
        ObliqueCenter::Second => (anchor.z2, anchor.omega2),
    };
    let tan = theta0.tan();
    let shift = zc + x0 - 0.5 * c_lower * (t0 - t);
    let mut out = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny() {
        let dy = grid.wrap_y(grid.y(iy) - wc);
        for ix in 0..grid.nx() {
            let x = box_center + grid.wrap_x(grid.x(ix) - box_center);
            out.push(x - shift + tan * dy);
        }
    }
    Ok(out)
}

/// Oblique mass and energy functionals `(Ĩ, J̃)` (or the hatted pair),
/// `Ĩ = ∫ u² φ(x̃)`, `J̃ = ∫ (|∇u|² − (2/3)u³) φ(x̃)`.
///
/// `box_center` is the physical center of the window the grid covers at time
/// `t` (zero for a fixed frame, `s·t` for a frame moving at speed `s`).
pub fn oblique_functionals(
    u: &RealField,
    spec: &WeightSpec,
    anchor: &SolitonParams,
    t0: f64,
    t: f64,
    box_center: f64,
) -> Result<(f64, f64)> {
    let g = u.grid();
    let arg = oblique_argument(g, spec, anchor, t0, t, box_center)?;
    let w: Vec<f64> = arg.iter().map(|&x| spec.eval(x)).collect();
    let (ux, uy) = u.spectral_gradient()?;
    let mut im = 0.0;
    let mut je = 0.0;
    for i in 0..g.len() {
        let v = u.data()[i];
        im += v * v * w[i];
        je += (ux.data()[i].powi(2) + uy.data()[i].powi(2) - 2.0 / 3.0 * v * v * v) * w[i];
    }
    Ok((im * g.cell_area(), je * g.cell_area()))
}

/// Sup and L² bounds of the weight against the solitons:
/// `‖R₁ψ_γ'‖∞ + ‖R₂ψ_γ'‖∞` and `‖R₁(ψ_γ − 1)‖ + ‖R₂ψ_γ‖` (weights centered at `m`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightSolitonBounds {
    pub sup_r_psi_prime: f64,
    pub l2_r_psi: f64,
}

pub fn weight_soliton_bounds(dec: &Decomposition, gamma: f64) -> Result<WeightSolitonBounds> {
    check_scale(gamma)?;
    let g = dec.r1.grid();
    let m = dec.params.midpoint();
    let w1 = vertical_weight(g, m, |x| psi_gamma_prime(x, gamma));
    let w0 = vertical_weight(g, m, |x| psi_gamma(x, gamma));
    let sup = |r: &RealField| {
        r.data()
            .iter()
            .zip(&w1)
            .map(|(a, b)| (a * b).abs())
            .fold(0.0, f64::max)
    };
    let l2 = |r: &RealField, shift: f64| {
        let s: f64 = r
            .data()
            .iter()
            .zip(&w0)
            .map(|(a, b)| (a * (b - shift)).powi(2))
            .sum();
        (s * g.cell_area()).sqrt()
    };
    Ok(WeightSolitonBounds {
        sup_r_psi_prime: sup(&dec.r1) + sup(&dec.r2),
        l2_r_psi: l2(&dec.r1, 1.0) + l2(&dec.r2, 0.0),
    })
}

/// The seven overlap families between two separated solitons. Each entry is
/// the largest over the two orderings `(i, j)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InteractionTable {
    pub z: f64,
    pub omega: f64,
    /// `|∫R_i R_j|`
    pub rr: f64,
    /// `|∫R_i ΛR_j|`
    pub r_lambda: f64,
    /// `|∫∂xR_i R_j| + |∫∂yR_i R_j|`
    pub dr_r: f64,
    /// `|∫∂xR_i∂xR_j| + |∫∂xR_i∂yR_j| + |∫∂yR_i∂yR_j|`
    pub dr_dr: f64,
    /// `|∫∂xR_i ΛR_j| + |∫∂yR_i ΛR_j|`
    pub dr_lambda: f64,
    /// `|∫∂x(R_iR_j) R_i|`
    pub dxrr_r: f64,
    /// `|∫∂x(R_iR_j) ∂xR_i|`
    pub dxrr_dr: f64,
}

impl InteractionTable {
    pub fn families(&self) -> [f64; 7] {
        [
            self.rr,
            self.r_lambda,
            self.dr_r,
            self.dr_dr,
            self.dr_lambda,
            self.dxrr_r,
            self.dxrr_dr,
        ]
    }
}

/// Names, decay exponents (in units of `√c̲`) and `c̄`/`c̲` prefactor powers of
/// the bounds for each family.
pub const INTERACTION_FAMILIES: [(&str, f64, f64, f64); 7] = [
    ("rr", 7.0 / 8.0, 1.0, 0.0),
    ("r_lambda", 7.0 / 8.0, 1.0, -1.0),
    ("dr_r", 7.0 / 8.0, 1.5, 0.0),
    ("dr_dr", 7.0 / 8.0, 2.5, 0.0),
    ("dr_lambda", 7.0 / 8.0, 1.5, -1.0),
    ("dxrr_r", 14.0 / 15.0, 2.5, 0.0),
    ("dxrr_dr", 14.0 / 15.0, 3.0, 0.0),
];

/// Radius beyond which a template of velocity `c` is below ~1e-12.
pub fn template_tail_radius(c: f64) -> f64 {
    28.0 / c.sqrt()
}

/// Overlap integrals for `R₁ = Q_{c₁}(· − (z/2, ω/2))` and
/// `R₂ = Q_{c₂}(· + (z/2, ω/2))` on `grid`.
pub fn interaction_integrals(
    q: &GroundState,
    grid: &Grid,
    c1: f64,
    c2: f64,
    z: f64,
    omega: f64,
) -> Result<InteractionTable> {
    check_scale(c1)?;
    check_scale(c2)?;
    let tail = template_tail_radius(c1.min(c2));
    if grid.lx() - z.abs() < 2.0 * tail || grid.ly() - omega.abs() < 2.0 * tail {
        return Err(FunctionalError::TemplatesOverflow(format!(
            "z={z}, ω={omega} need box ≥ ({:.1}, {:.1}), have ({}, {})",
            z.abs() + 2.0 * tail,
            omega.abs() + 2.0 * tail,
            grid.lx(),
            grid.ly()
        )));
    }
    let tm = q.templates(grid);
    let nx = grid.nx();
    let (p1, p2) = ((0.5 * z, 0.5 * omega), (-0.5 * z, -0.5 * omega));
    let r = [tm.profile_spectrum(c1, p1.0, p1.1), tm.profile_spectrum(c2, p2.0, p2.1)];
    let l = [tm.lambda_spectrum(c1, p1.0, p1.1), tm.lambda_spectrum(c2, p2.0, p2.1)];
    let deriv = |s: &[num_complex::Complex64], xdir: bool| -> Vec<num_complex::Complex64> {
        s.iter()
            .enumerate()
            .map(|(i, v)| {
                let k = if xdir { grid.kx_odd(i % nx) } else { grid.ky_odd(i / nx) };
                v * num_complex::Complex64::new(0.0, k)
            })
            .collect()
    };
    let rx = [deriv(&r[0], true), deriv(&r[1], true)];
    let ry = [deriv(&r[0], false), deriv(&r[1], false)];
    let ip = |a: &[num_complex::Complex64], b: &[num_complex::Complex64]| spectral_inner(grid, a, b);
    let phys = |s: &[num_complex::Complex64]| grid.inverse_real(s.to_vec());
    let rp = [phys(&r[0]), phys(&r[1])];
    let rxp = [phys(&rx[0]), phys(&rx[1])];
    // ∂x(R₁R₂) from the pointwise product
    let prod: Vec<f64> = rp[0].iter().zip(&rp[1]).map(|(a, b)| a * b).collect();
    let dprod = RealField::from_parts(grid, prod).dx();
    let phys_dot = |a: &[f64], b: &[f64]| crate::grid::dot(a, b) * grid.cell_area();

    let mut t = InteractionTable {
        z,
        omega,
        rr: ip(&r[0], &r[1]).abs(),
        r_lambda: 0.0,
        dr_r: 0.0,
        dr_dr: 0.0,
        dr_lambda: 0.0,
        dxrr_r: 0.0,
        dxrr_dr: 0.0,
    };
    for (i, j) in [(0usize, 1usize), (1, 0)] {
        t.r_lambda = t.r_lambda.max(ip(&r[i], &l[j]).abs());
        t.dr_r = t.dr_r.max(ip(&rx[i], &r[j]).abs() + ip(&ry[i], &r[j]).abs());
        t.dr_dr = t
            .dr_dr
            .max(ip(&rx[i], &rx[j]).abs() + ip(&rx[i], &ry[j]).abs() + ip(&ry[i], &ry[j]).abs());
        t.dr_lambda = t
            .dr_lambda
            .max(ip(&rx[i], &l[j]).abs() + ip(&ry[i], &l[j]).abs());
        t.dxrr_r = t.dxrr_r.max(phys_dot(dprod.data(), &rp[i]).abs());
        t.dxrr_dr = t.dxrr_dr.max(phys_dot(dprod.data(), &rxp[i]).abs());
    }
    Ok(t)
}

/// Log-linear least-squares fit `log y ≈ a + slope·x`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_log_linear(xs: &[f64], ys: &[f64]) -> Result<LogLinearFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, y)| (*x, y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(FunctionalError::TooFewSamples {
            need: 2,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(LogLinearFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Per-family decay fit and prefactor against the bound shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionFit {
    pub family: String,
    pub slope: f64,
    /// Slope of the bound, `−rate·√c̲`.
    pub bound_slope: f64,
    /// `sup_z value / (c̄^p c̲^q e^{−rate √c̲ z})`.
    pub prefactor: f64,
    /// Samples above [`INTERACTION_NOISE_FLOOR`] that entered the fit.
    pub samples: usize,
}

/// Overlaps below this are at the template accuracy floor and are left out
/// of the fits.
pub const INTERACTION_NOISE_FLOOR: f64 = 1e-11;

pub fn fit_interactions(tables: &[InteractionTable], c_lower: f64, c_upper: f64) -> Result<Vec<InteractionFit>> {
    let mut out = Vec::new();
    for (k, &(name, rate, pc, pl)) in INTERACTION_FAMILIES.iter().enumerate() {
        let (zs, ys): (Vec<f64>, Vec<f64>) = tables
            .iter()
            .map(|t| (t.z, t.families()[k]))
            .filter(|(_, y)| *y > INTERACTION_NOISE_FLOOR)
            .unzip();
        let fit = fit_log_linear(&zs, &ys)?;
        let prefactor = zs
            .iter()
            .zip(&ys)
            .map(|(z, y)| y / (c_upper.powf(pc) * c_lower.powf(pl) * (-rate * c_lower.sqrt() * z).exp()))
            .fold(0.0, f64::max);
        out.push(InteractionFit {
            family: name.to_string(),
            slope: fit.slope,
            bound_slope: -rate * c_lower.sqrt(),
            prefactor,
            samples: zs.len(),
        });
    }
    Ok(out)
}

/// Energy expansion between two decompositions of one trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyExpansion {
    /// `Σ (E(R_i(t)) − E(R_i(0))) + ½ ∫ (|∇ε|² − 2Rε²)(t)`.
    pub left: f64,
    /// `‖ε(0)‖²_{H¹} + ‖ε(t)‖³_{H¹} + e^{−½√c̲ Z}`.
    pub envelope: f64,
    pub ratio: f64,
}

pub fn energy_expansion_check(
    dec: &Decomposition,
    dec0: &Decomposition,
    energy_q: f64,
    c_lower: f64,
    z_initial: f64,
) -> Result<EnergyExpansion> {
    let (p, p0) = (dec.params, dec0.params);
    let de = energy_q * (p.c1 * p.c1 + p.c2 * p.c2 - p0.c1 * p0.c1 - p0.c2 * p0.c2);
    let r = &dec.r1 + &dec.r2;
    let e = &dec.eps;
    let r_eps2: f64 = r
        .data()
        .iter()
        .zip(e.data())
        .map(|(r, e)| r * e * e)
        .sum::<f64>()
        * e.grid().cell_area();
    let quad = 0.5 * (e.gradient_sq_integral() - 2.0 * r_eps2);
    let left = de + quad;
    let envelope = dec0.eps_h1.powi(2) + dec.eps_h1.powi(3) + (-0.5 * c_lower.sqrt() * z_initial).exp();
    Ok(EnergyExpansion {
        left,
        envelope,
        ratio: left.abs() / envelope,
    })
}

/// Localized-mass monotonicity along a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `max_{s ≤ t} (I(s) − I(0))`.
    pub running_increase: Vec<f64>,
    /// `e^{−(1/16)√c̲ (Z + σt)}`.
    pub envelope: Vec<f64>,
    /// Smallest `A₄` with `I(t) − I(0) ≤ A₄ · envelope(t)` at every sample.
    pub fitted_a4: f64,
    pub max_increase: f64,
}

pub fn monotonicity_report(times: &[f64], values: &[f64], c_lower: f64, z: f64, sigma: f64) -> Result<MonotonicityReport> {
    if times.is_empty() || times.len() != values.len() {
        return Err(FunctionalError::TooFewSamples {
            need: 1,
            got: times.len().min(values.len()),
        });
    }
    let i0 = values[0];
    let mut running = Vec::with_capacity(values.len());
    let mut best = f64::NEG_INFINITY;
    let mut a4 = 0.0f64;
    let mut envelope = Vec::with_capacity(values.len());
    for (&t, &v) in times.iter().zip(values) {
        best = best.max(v - i0);
        running.push(best);
        let env = (-(c_lower.sqrt() / 16.0) * (z + sigma * t)).exp();
        envelope.push(env);
        a4 = a4.max((v - i0) / env);
    }
    Ok(MonotonicityReport {
        times: times.to_vec(),
        values: values.to_vec(),
        max_increase: best.max(0.0),
        running_increase: running,
        envelope,
        fitted_a4: a4,
    })
}

/// Time series of named functionals with the weight metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// `values[k][n]` is functional `k` at `times[n]`.
    pub values: Vec<Vec<f64>>,
    pub weight: Option<WeightSpec>,
    pub metadata: serde_json::Value,
}

impl FunctionalSeries {
    pub fn new(names: &[&str], weight: Option<WeightSpec>) -> Self {
        FunctionalSeries {
            names: names.iter().map(|s| s.to_string()).collect(),
            times: Vec::new(),
            values: vec![Vec::new(); names.len()],
            weight,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn push(&mut self, t: f64, row: &[f64]) {
        assert_eq!(row.len(), self.names.len(), "row width");
        self.times.push(t);
        for (col, v) in self.values.iter_mut().zip(row) {
            col.push(*v);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for n in &self.names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(s, "{t:.17e}");
            for col in &self.values {
                let _ = write!(s, ",{:.17e}", col[i]);
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| FunctionalError::Io { path, source }
        };
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(io(&csv))?;
        let side = serde_json::json!({
            "columns": std::iter::once("t".to_string()).chain(self.names.iter().cloned()).collect::<Vec<_>>(),
            "weight": self.weight,
            "metadata": self.metadata,
        });
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(&side).expect("json")).map_err(io(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psi_values() {
        assert_relative_eq!(psi(0.0), 0.5, epsilon = 1e-16);
        assert_relative_eq!(psi_prime(0.0), 1.0 / PI, epsilon = 1e-16);
        for &x in &[0.3, 1.0, 5.0] {
            assert_relative_eq!(psi(-x) + psi(x), 1.0, epsilon = 1e-15);
        }
        assert_eq!(psi(1e4), 1.0);
        assert_eq!(psi(-1e4), 0.0);
        assert!(psi_third(800.0).is_finite());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-4;
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.2] {
            let d1 = (psi(x + h) - psi(x - h)) / (2.0 * h);
            assert_relative_eq!(d1, psi_prime(x), epsilon = 1e-8);
            let d3 = (psi_prime(x + h) - 2.0 * psi_prime(x) + psi_prime(x - h)) / (h * h);
            assert_relative_eq!(d3, psi_third(x), epsilon = 1e-6);
        }
    }

    #[test]
    fn oblique_rejects_steep_angles() {
        let spec = WeightSpec::Oblique {
            c_lower: 1.0,
            theta0: 1.1,
            x0: 5.0,
            center: ObliqueCenter::First,
        };
        assert!(matches!(spec.validate(), Err(FunctionalError::AngleOutOfRange(_))));
        assert!(WeightSpec::PsiGamma { gamma: 0.0 }.validate().is_err());
    }

    #[test]
    fn log_linear_fit_exact() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7f64 * x).exp()).collect();
        let f = fit_log_linear(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, -0.7, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn monotonicity_report_fits_a4() {
        let t = [0.0, 1.0, 2.0];
        let v = [1.0, 1.001, 0.999];
        let r = monotonicity_report(&t, &v, 1.0, 16.0, 0.0).unwrap();
        assert_relative_eq!(r.max_increase, 0.001, epsilon = 1e-15);
        assert_relative_eq!(r.fitted_a4, 0.001 * 1f64.exp(), max_relative = 1e-12);
        assert_eq!(r.running_increase, vec![0.0, r.max_increase, r.max_increase]);
    }

    #[test]
    fn series_csv_layout() {
        let mut s = FunctionalSeries::new(&["a", "b"], Some(WeightSpec::Psi));
        s.push(0.0, &[1.0, 2.0]);
        s.push(0.5, &[3.0, 4.0]);
        let csv = s.to_csv();
        assert!(csv.starts_with("t,a,b\n"));
        assert_eq!(csv.lines().count(), 3);
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path(), "f").unwrap();
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.json")).unwrap()).unwrap();
        assert_eq!(side["columns"][2], "b");
        assert_eq!(side["weight"]["kind"], "psi");
    }
}
