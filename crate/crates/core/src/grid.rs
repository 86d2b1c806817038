//! Periodic rectangular grid, real-valued fields and the spectral operators
//! every other module is built on.
//!
//! Layout: a field on an `nx × ny` grid stores its samples row-major with `x`
//! varying fastest, i.e. sample `(ix, iy)` lives at `data[iy * nx + ix]`.
//! The physical coordinate of sample `ix` is `x = -lx/2 + ix * lx/nx`, so the
//! grid center `(0, 0)` is the sample `(nx/2, ny/2)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("sample count {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids ({left} vs {right})")]
    GridMismatch { left: String, right: String },
    #[error("non-finite sample {value} at index {index} (ix={ix}, iy={iy})")]
    NonFinite {
        index: usize,
        ix: usize,
        iy: usize,
        value: f64,
    },
    #[error("snapshot format: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GridError>;

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut p = planner().lock().expect("fft planner poisoned");
        Fft2 {
            nx,
            ny,
            fwd_x: p.plan_fft_forward(nx),
            inv_x: p.plan_fft_inverse(nx),
            fwd_y: p.plan_fft_forward(ny),
            inv_y: p.plan_fft_inverse(ny),
        }
    }

    fn run(&self, buf: &mut [Complex64], forward: bool) {
        let (nx, ny) = (self.nx, self.ny);
        let (fx, fy) = if forward {
            (&self.fwd_x, &self.fwd_y)
        } else {
            (&self.inv_x, &self.inv_y)
        };
        fx.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
        for iy in 0..ny {
            let row = &buf[iy * nx..(iy + 1) * nx];
            for (ix, v) in row.iter().enumerate() {
                t[ix * ny + iy] = *v;
            }
        }
        fy.process(&mut t);
        for ix in 0..nx {
            let col = &t[ix * ny..(ix + 1) * ny];
            for (iy, v) in col.iter().enumerate() {
                buf[iy * nx + ix] = *v;
            }
        }
    }
}

struct GridInner {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    fft: Fft2,
}

/// Periodic box `[-lx/2, lx/2) × [-ly/2, ly/2)` sampled on `nx × ny` points.
///
/// Cloning is cheap; FFT plans and wavenumber tables are shared.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.nx() == other.nx()
                && self.ny() == other.ny()
                && self.lx().to_bits() == other.lx().to_bits()
                && self.ly().to_bits() == other.ly().to_bits())
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Grid({}x{}, lx={}, ly={})",
            self.nx(),
            self.ny(),
            self.lx(),
            self.ly()
        )
    }
}

/// Signed mode index of DFT slot `i` for an `n`-point transform.
pub fn mode_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
        for (name, n) in [("nx", nx), ("ny", ny)] {
            if n < 16 || n % 2 != 0 {
                return Err(GridError::InvalidGrid(format!(
                    "{name}={n} must be even and >= 16"
                )));
            }
        }
        for (name, l) in [("lx", lx), ("ly", ly)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(GridError::InvalidGrid(format!("{name}={l} must be > 0")));
            }
        }
        let kx = (0..nx)
            .map(|i| 2.0 * PI / lx * mode_index(i, nx) as f64)
            .collect();
        let ky = (0..ny)
            .map(|i| 2.0 * PI / ly * mode_index(i, ny) as f64)
            .collect();
        Ok(Grid {
            inner: Arc::new(GridInner {
                nx,
                ny,
                lx,
                ly,
                kx,
                ky,
                fft: Fft2::new(nx, ny),
            }),
        })
    }

    pub fn nx(&self) -> usize {
        self.inner.nx
    }
    pub fn ny(&self) -> usize {
        self.inner.ny
    }
    pub fn lx(&self) -> f64 {
        self.inner.lx
    }
    pub fn ly(&self) -> f64 {
        self.inner.ly
    }
    pub fn len(&self) -> usize {
        self.inner.nx * self.inner.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dx(&self) -> f64 {
        self.lx() / self.nx() as f64
    }
    pub fn dy(&self) -> f64 {
        self.ly() / self.ny() as f64
    }
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }
    pub fn x(&self, ix: usize) -> f64 {
        -0.5 * self.lx() + ix as f64 * self.dx()
    }
    pub fn y(&self, iy: usize) -> f64 {
        -0.5 * self.ly() + iy as f64 * self.dy()
    }
    /// Wavenumbers along x in DFT order (Nyquist slot carries `-π/dx`).
    pub fn kx(&self) -> &[f64] {
        &self.inner.kx
    }
    pub fn ky(&self) -> &[f64] {
        &self.inner.ky
    }
    /// Wavenumber used for odd derivatives: the Nyquist slot is zeroed so the
    /// result stays real.
    pub fn kx_odd(&self, ix: usize) -> f64 {
        if ix == self.nx() / 2 {
            0.0
        } else {
            self.inner.kx[ix]
        }
    }
    pub fn ky_odd(&self, iy: usize) -> f64 {
        if iy == self.ny() / 2 {
            0.0
        } else {
            self.inner.ky[iy]
        }
    }
    pub fn k2(&self, ix: usize, iy: usize) -> f64 {
        let (kx, ky) = (self.inner.kx[ix], self.inner.ky[iy]);
        kx * kx + ky * ky
    }

    /// Two-thirds rule: keeps modes with `|m| < n/3` in both directions.
    pub fn dealias_keep(&self, ix: usize, iy: usize) -> bool {
        let mx = mode_index(ix, self.nx()).unsigned_abs() as usize;
        let my = mode_index(iy, self.ny()).unsigned_abs() as usize;
        3 * mx < self.nx() && 3 * my < self.ny()
    }

    /// Nearest periodic image of a displacement along x.
    pub fn wrap_x(&self, d: f64) -> f64 {
        wrap(d, self.lx())
    }
    pub fn wrap_y(&self, d: f64) -> f64 {
        wrap(d, self.ly())
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(GridError::GridMismatch {
                left: format!("{self:?}"),
                right: format!("{other:?}"),
            })
        }
    }

    /// Forward DFT of real samples (unnormalized).
    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.inner.fft.run(&mut buf, true);
        buf
    }

    /// Inverse DFT including the `1/(nx ny)` normalization; returns the real part.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inner.fft.run(&mut spec, false);
        let s = 1.0 / self.len() as f64;
        spec.into_iter().map(|c| c.re * s).collect()
    }

    /// Applies a real Fourier multiplier `symbol(ix, iy)` to `data`.
    pub fn apply_symbol<F>(&self, data: &[f64], symbol: F) -> Vec<f64>
    where
        F: Fn(usize, usize) -> Complex64,
    {
        let mut s = self.forward(data);
        let nx = self.nx();
        for (i, c) in s.iter_mut().enumerate() {
            *c *= symbol(i % nx, i / nx);
        }
        self.inverse_real(s)
    }
}

fn wrap(d: f64, l: f64) -> f64 {
    d - l * (d / l).round()
}

/// Real samples bound to a [`Grid`].
#[derive(Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    data: Vec<f64>,
}

impl fmt::Debug for RealField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealField({:?}, max|u|={:.3e})", self.grid, self.max_abs())
    }
}

fn first_non_finite(grid: &Grid, data: &[f64]) -> Result<()> {
    if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(GridError::NonFinite {
            index,
            ix: index % grid.nx(),
            iy: index / grid.nx(),
            value,
        });
    }
    Ok(())
}

impl RealField {
    pub fn new(grid: &Grid, data: Vec<f64>) -> Result<RealField> {
        if data.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: data.len(),
            });
        }
        first_non_finite(grid, &data)?;
        Ok(RealField {
            grid: grid.clone(),
            data,
        })
    }

    /// Internal constructor for results of operations on finite fields.
    pub(crate) fn from_parts(grid: &Grid, data: Vec<f64>) -> RealField {
        debug_assert_eq!(data.len(), grid.len());
        RealField {
            grid: grid.clone(),
            data,
        }
    }

    pub fn zeros(grid: &Grid) -> RealField {
        Self::from_parts(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: &Grid, value: f64) -> RealField {
        Self::from_parts(grid, vec![value; grid.len()])
    }

    /// Samples `f(x, y)` at every grid point.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: &Grid, f: F) -> Result<RealField> {
        let mut data = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny() {
            let y = grid.y(iy);
            for ix in 0..grid.nx() {
                data.push(f(grid.x(ix), y));
            }
        }
        RealField::new(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.grid.nx() + ix]
    }

    pub fn check_finite(&self) -> Result<()> {
        first_non_finite(&self.grid, &self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index `(ix, iy)` of the largest sample.
    pub fn argmax(&self) -> (usize, usize) {
        let (i, _) = self
            .data
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        (i % self.grid.nx(), i / self.grid.nx())
    }

    pub fn scale(&self, s: f64) -> RealField {
        self.map(|v| v * s)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> RealField {
        Self::from_parts(&self.grid, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &RealField, f: F) -> Result<RealField> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_parts(
            &self.grid,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &RealField) -> Result<RealField> {
        self.zip_map(other, |a, b| a + s * b)
    }

    /// Trapezoidal quadrature of the product, `Σ f g · dx dy`.
    pub fn inner(&self, other: &RealField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(dot(&self.data, &other.data) * self.grid.cell_area())
    }

    /// `∫ f`.
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn norm_l2(&self) -> f64 {
        (dot(&self.data, &self.data) * self.grid.cell_area()).sqrt()
    }

    /// `(∂x f, ∂y f)` by transform-multiply-invert.
    pub fn spectral_gradient(&self) -> Result<(RealField, RealField)> {
        self.check_finite()?;
        let g = &self.grid;
        let s = g.forward(&self.data);
        let nx = g.nx();
        let sx: Vec<Complex64> = s
            .iter()
            .enumerate()
            .map(|(i, c)| c * Complex64::new(0.0, g.kx_odd(i % nx)))
            .collect();
        let sy: Vec<Complex64> = s
            .iter()
            .enumerate()
            .map(|(i, c)| c * Complex64::new(0.0, g.ky_odd(i / nx)))
            .collect();
        Ok((
            Self::from_parts(g, g.inverse_real(sx)),
            Self::from_parts(g, g.inverse_real(sy)),
        ))
    }

    pub fn dx(&self) -> RealField {
        let g = &self.grid;
        let d = g.apply_symbol(&self.data, |ix, _| Complex64::new(0.0, g.kx_odd(ix)));
        Self::from_parts(g, d)
    }

    pub fn dy(&self) -> RealField {
        let g = &self.grid;
        let d = g.apply_symbol(&self.data, |_, iy| Complex64::new(0.0, g.ky_odd(iy)));
        Self::from_parts(g, d)
    }

    pub fn laplacian(&self) -> RealField {
        let g = &self.grid;
        let d = g.apply_symbol(&self.data, |ix, iy| Complex64::new(-g.k2(ix, iy), 0.0));
        Self::from_parts(g, d)
    }

    /// `∫ |∇f|²` via Parseval, consistent with [`RealField::spectral_gradient`].
    pub fn gradient_sq_integral(&self) -> f64 {
        let g = &self.grid;
        let s = g.forward(&self.data);
        let nx = g.nx();
        let acc: f64 = s
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (kx, ky) = (g.kx_odd(i % nx), g.ky_odd(i / nx));
                (kx * kx + ky * ky) * c.norm_sqr()
            })
            .sum();
        acc * g.cell_area() / g.len() as f64
    }

    /// Discrete H¹ norm `sqrt(‖f‖² + ‖∂x f‖² + ‖∂y f‖²)`.
    pub fn h1_norm(&self) -> f64 {
        (self.norm_l2().powi(2) + self.gradient_sq_integral()).sqrt()
    }

    /// Periodic translation `f(x - dz, y - dω)` by spectral phase shift.
    ///
    /// Exact (to rounding) for fields without Nyquist-mode content.
    pub fn translate(&self, dz: f64, domega: f64) -> RealField {
        let g = &self.grid;
        let d = g.apply_symbol(&self.data, |ix, iy| {
            Complex64::from_polar(1.0, -(g.kx()[ix] * dz + g.ky()[iy] * domega))
        });
        Self::from_parts(g, d)
    }

    /// Mirror `x → -x` about the grid center.
    pub fn reflect_x(&self) -> RealField {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut out = vec![0.0; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                out[iy * nx + (nx - ix) % nx] = self.data[iy * nx + ix];
            }
        }
        Self::from_parts(&self.grid, out)
    }

    /// Mirror `y → -y` about the grid center.
    pub fn reflect_y(&self) -> RealField {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut out = vec![0.0; nx * ny];
        for iy in 0..ny {
            let ty = (ny - iy) % ny;
            out[ty * nx..(ty + 1) * nx].copy_from_slice(&self.data[iy * nx..(iy + 1) * nx]);
        }
        Self::from_parts(&self.grid, out)
    }

    /// Swap `x ↔ y`; requires a square grid.
    pub fn transpose(&self) -> Result<RealField> {
        let g = &self.grid;
        if g.nx() != g.ny() || g.lx() != g.ly() {
            return Err(GridError::InvalidGrid(
                "transpose needs a square grid".into(),
            ));
        }
        let n = g.nx();
        let mut out = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                out[ix * n + iy] = self.data[iy * n + ix];
            }
        }
        Ok(Self::from_parts(g, out))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums keep the rounding error and the dependency chain short
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

macro_rules! binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr<&RealField> for &RealField {
            type Output = RealField;
            /// Panics if the operands live on different grids.
            fn $method(self, rhs: &RealField) -> RealField {
                self.zip_map(rhs, |a, b| a $op b).expect("field arithmetic across grids")
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl Mul<f64> for &RealField {
    type Output = RealField;
    fn mul(self, rhs: f64) -> RealField {
        self.scale(rhs)
    }
}

impl Neg for &RealField {
    type Output = RealField;
    fn neg(self) -> RealField {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> Grid {
        Grid::new(64, 32, 20.0, 10.0).unwrap()
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Grid::new(15, 32, 1.0, 1.0).is_err());
        assert!(Grid::new(8, 32, 1.0, 1.0).is_err());
        assert!(Grid::new(32, 32, 0.0, 1.0).is_err());
        assert!(Grid::new(32, 32, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn wavenumber_layout() {
        let g = grid();
        let dk = 2.0 * PI / 20.0;
        assert_eq!(g.kx()[0], 0.0);
        assert_relative_eq!(g.kx()[1], dk);
        assert_relative_eq!(g.kx()[31], 31.0 * dk);
        assert_relative_eq!(g.kx()[32], -32.0 * dk);
        assert_relative_eq!(g.kx()[63], -dk);
        assert_eq!(g.kx_odd(32), 0.0);
    }

    #[test]
    fn non_finite_rejected_with_index() {
        let g = grid();
        let mut d = vec![0.0; g.len()];
        d[70] = f64::NAN;
        match RealField::new(&g, d) {
            Err(GridError::NonFinite { index, ix, iy, .. }) => {
                assert_eq!((index, ix, iy), (70, 6, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradient_of_constant_and_single_mode() {
        let g = grid();
        let c = RealField::constant(&g, 3.5);
        let (gx, gy) = c.spectral_gradient().unwrap();
        assert!(gx.max_abs() < 1e-14 && gy.max_abs() < 1e-14);

        let k = 2.0 * PI / g.lx();
        let f = RealField::from_fn(&g, |x, _| (k * x).sin()).unwrap();
        let (fx, fy) = f.spectral_gradient().unwrap();
        let exact = RealField::from_fn(&g, |x, _| k * (k * x).cos()).unwrap();
        assert!((&fx - &exact).max_abs() < 1e-13);
        assert!(fy.max_abs() < 1e-13);
    }

    #[test]
    fn inner_examples() {
        let g = grid();
        let k = 2.0 * PI / g.lx();
        let s = RealField::from_fn(&g, |x, _| (k * x).sin()).unwrap();
        let z = RealField::zeros(&g);
        assert_eq!(z.inner(&s).unwrap(), 0.0);
        assert_relative_eq!(
            s.inner(&s).unwrap(),
            g.lx() * g.ly() / 2.0,
            max_relative = 1e-14
        );
        let other = Grid::new(64, 32, 20.0, 11.0).unwrap();
        assert!(s.inner(&RealField::zeros(&other)).is_err());
    }

    #[test]
    fn translate_identity_and_period() {
        let g = Grid::new(64, 64, 20.0, 20.0).unwrap();
        let f = RealField::from_fn(&g, |x, y| (-(x * x + y * y) / 2.0).exp()).unwrap();
        assert!((&f.translate(0.0, 0.0) - &f).max_abs() < 1e-15);
        assert!((&f.translate(g.lx(), 0.0) - &f).max_abs() < 1e-13);
        assert!((&f.translate(0.0, g.ly()) - &f).max_abs() < 1e-13);
        let shifted = f.translate(1.37, -0.4);
        let exact = RealField::from_fn(&g, |x, y| {
            let (x, y) = (x - 1.37, y + 0.4);
            (-(x * x + y * y) / 2.0).exp()
        })
        .unwrap();
        let err = (&shifted - &exact).max_abs();
        assert!(err < 1e-12, "{err:e}");
    }

    #[test]
    fn reflections_are_involutions() {
        let g = grid();
        let f = RealField::from_fn(&g, |x, y| (x - 1.0).tanh() * (y + 0.3).cos()).unwrap();
        assert_eq!(f.reflect_x().reflect_x(), f);
        assert_eq!(f.reflect_y().reflect_y(), f);
        let m = f.reflect_x();
        // sample at x maps to -x
        assert_eq!(m.at(64 - 10, 5), f.at(10, 5));
    }

    #[test]
    fn h1_norm_of_zero_and_mode() {
        let g = grid();
        assert_eq!(RealField::zeros(&g).h1_norm(), 0.0);
        let k = 2.0 * PI / g.lx();
        let s = RealField::from_fn(&g, |x, _| (k * x).sin()).unwrap();
        let expect = ((1.0 + k * k) * g.lx() * g.ly() / 2.0).sqrt();
        assert_relative_eq!(s.h1_norm(), expect, max_relative = 1e-13);
    }

    #[test]
    fn dealias_mask_two_thirds() {
        let g = grid();
        // nx = 64: keep |m| <= 21
        assert!(g.dealias_keep(21, 0));
        assert!(!g.dealias_keep(22, 0));
        assert!(g.dealias_keep(64 - 21, 0));
        assert!(!g.dealias_keep(64 - 22, 0));
        // ny = 32: keep |m| <= 10
        assert!(g.dealias_keep(0, 10));
        assert!(!g.dealias_keep(0, 11));
    }
}
