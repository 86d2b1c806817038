//! Spectral soliton templates.
//!
//! The radial ground state has a radial Fourier transform `g(|k|)`, so a
//! rescaled and translated copy `Q_c(· − (z, ω))` has DFT coefficients
//! `g(|k|/√c) e^{−i k·((z,ω) − x₀)} / dA` on any periodic grid whose first
//! sample sits at `x₀`. Building templates this way needs no spatial
//! interpolation and automatically includes the periodic images.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::grid::{Grid, RealField};

/// Tabulated `g(κ) = ∫ Q(x) e^{−iκx₁} dx` and `g'(κ)` on a uniform κ grid.
#[derive(Debug, Clone)]
pub struct ProfileTransform {
    step: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
}

const TABLE_STEP: f64 = 0.004;
const TABLE_MAX: f64 = 40.0;

impl ProfileTransform {
    /// Tabulates the transform from a centered, radially symmetric profile
    /// through its y-marginal.
    pub fn from_profile(q: &RealField) -> Self {
        let grid = q.grid();
        let (nx, ny) = (grid.nx(), grid.ny());
        let marginal: Vec<f64> = (0..nx)
            .map(|ix| (0..ny).map(|iy| q.at(ix, iy)).sum::<f64>() * grid.dy())
            .collect();
        let xs: Vec<f64> = (0..nx).map(|ix| grid.x(ix)).collect();
        // samples beyond the grid Nyquist wavenumber alias
        let kmax = TABLE_MAX.min(PI / grid.dx());
        let count = (kmax / TABLE_STEP).floor() as usize + 1;
        let mut g = Vec::with_capacity(count);
        let mut dg = Vec::with_capacity(count);
        for j in 0..count {
            let kappa = j as f64 * TABLE_STEP;
            let (mut a, mut b) = (0.0, 0.0);
            for (p, x) in marginal.iter().zip(&xs) {
                let (s, c) = (kappa * x).sin_cos();
                a += p * c;
                b -= p * x * s;
            }
            g.push(a * grid.dx());
            dg.push(b * grid.dx());
        }
        ProfileTransform {
            step: TABLE_STEP,
            g,
            dg,
        }
    }

    pub fn kappa_max(&self) -> f64 {
        (self.g.len() - 1) as f64 * self.step
    }

    /// `g(κ)`, zero past the table.
    pub fn value(&self, kappa: f64) -> f64 {
        interp(&self.g, self.step, kappa, false)
    }

    /// `g'(κ)`, zero past the table.
    pub fn derivative(&self, kappa: f64) -> f64 {
        interp(&self.dg, self.step, kappa, true)
    }
}

/// Six-point Lagrange interpolation, mirroring the table at zero as an even
/// or odd function.
fn interp(t: &[f64], h: f64, x: f64, odd: bool) -> f64 {
    let n = t.len();
    let s = x / h;
    if s > (n - 1) as f64 {
        return 0.0;
    }
    let fetch = |i: i64| -> f64 {
        if i < 0 {
            let v = t[(-i) as usize];
            if odd {
                -v
            } else {
                v
            }
        } else if (i as usize) < n {
            t[i as usize]
        } else {
            0.0
        }
    };
    let i0 = s.floor() as i64 - 2;
    let mut acc = 0.0;
    for a in 0..6 {
        let xa = (i0 + a) as f64;
        let mut w = 1.0;
        for b in 0..6 {
            if a != b {
                let xb = (i0 + b) as f64;
                w *= (s - xb) / (xa - xb);
            }
        }
        acc += w * fetch(i0 + a);
    }
    acc
}

/// Template factory bound to one grid.
#[derive(Debug, Clone)]
pub struct Templates {
    transform: Arc<ProfileTransform>,
    grid: Grid,
    kmod: Vec<f64>,
    nyquist: Vec<bool>,
}

impl Templates {
    pub fn new(transform: Arc<ProfileTransform>, grid: &Grid) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut kmod = Vec::with_capacity(grid.len());
        let mut nyquist = Vec::with_capacity(grid.len());
        for iy in 0..ny {
            for ix in 0..nx {
                kmod.push(grid.k2(ix, iy).sqrt());
                nyquist.push(ix == nx / 2 || iy == ny / 2);
            }
        }
        Templates {
            transform,
            grid: grid.clone(),
            kmod,
            nyquist,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Radial factor `g(|k|/√c) / dA` of `Q_c` per mode (Nyquist modes zero).
    pub fn radial_profile(&self, c: f64) -> Vec<f64> {
        let s = 1.0 / c.sqrt();
        let inv_da = 1.0 / self.grid.cell_area();
        self.radial(|k| self.transform.value(k * s) * inv_da)
    }

    /// Radial factor of `Λ_c Q`.
    pub fn radial_lambda(&self, c: f64) -> Vec<f64> {
        let s = 1.0 / c.sqrt();
        let f = -0.5 * s / c / self.grid.cell_area();
        self.radial(|k| self.transform.derivative(k * s) * k * f)
    }

    fn radial<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.kmod
            .iter()
            .zip(&self.nyquist)
            .map(|(&k, &nyq)| if nyq { 0.0 } else { f(k) })
            .collect()
    }

    /// DFT coefficients of the radial factor translated to `(z, ω)`.
    pub fn place(&self, radial: &[f64], z: f64, omega: f64) -> Vec<Complex64> {
        let g = &self.grid;
        let nx = g.nx();
        let (sx, sy) = (z + 0.5 * g.lx(), omega + 0.5 * g.ly());
        let px: Vec<Complex64> = g
            .kx()
            .iter()
            .map(|k| Complex64::from_polar(1.0, -k * sx))
            .collect();
        let py: Vec<Complex64> = g
            .ky()
            .iter()
            .map(|k| Complex64::from_polar(1.0, -k * sy))
            .collect();
        radial
            .iter()
            .enumerate()
            .map(|(i, &r)| px[i % nx] * py[i / nx] * r)
            .collect()
    }

    /// DFT coefficients of `Q_c(· − (z, ω))`.
    pub fn profile_spectrum(&self, c: f64, z: f64, omega: f64) -> Vec<Complex64> {
        self.place(&self.radial_profile(c), z, omega)
    }

    /// DFT coefficients of `(Λ_c Q)(· − (z, ω))`.
    pub fn lambda_spectrum(&self, c: f64, z: f64, omega: f64) -> Vec<Complex64> {
        self.place(&self.radial_lambda(c), z, omega)
    }

    /// DFT coefficients of `(∂x f, ∂y f)` from those of `f`.
    pub fn gradient_spectra(&self, s: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let g = &self.grid;
        let nx = g.nx();
        let dx = s
            .iter()
            .enumerate()
            .map(|(i, v)| v * Complex64::new(0.0, g.kx_odd(i % nx)))
            .collect();
        let dy = s
            .iter()
            .enumerate()
            .map(|(i, v)| v * Complex64::new(0.0, g.ky_odd(i / nx)))
            .collect();
        (dx, dy)
    }

    /// Physical samples from DFT coefficients.
    pub fn field(&self, s: Vec<Complex64>) -> RealField {
        RealField::from_parts(&self.grid, self.grid.inverse_real(s))
    }

    pub fn profile(&self, c: f64, z: f64, omega: f64) -> RealField {
        RealField::from_parts(
            &self.grid,
            self.grid.inverse_real(self.profile_spectrum(c, z, omega)),
        )
    }

    pub fn lambda(&self, c: f64, z: f64, omega: f64) -> RealField {
        RealField::from_parts(
            &self.grid,
            self.grid.inverse_real(self.lambda_spectrum(c, z, omega)),
        )
    }
}

/// `⟨f, g⟩` from DFT coefficients by Parseval.
pub fn spectral_inner(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum();
    s * grid.cell_area() / grid.len() as f64
}
