//! The linearized operator `L = −Δ + 1 − 2Q`, a block eigensolver for its
//! low spectrum, and the quadratic forms of the stability argument.
//!
//! Eigenpairs come from LOBPCG with full orthonormalization of the
//! `[X, W, P]` search basis and `(1 − Δ)⁻¹` as preconditioner. Linear
//! constraints are handled by projecting every iterate onto the orthogonal
//! complement of the constraint span.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::psi_gamma;
use crate::grid::{dot, Grid, GridError, RealField};
use crate::groundstate::GroundState;
use crate::modulation::Decomposition;

#[derive(Debug, Error)]
pub enum LinopError {
    #[error("eigensolver did not converge after {applies} operator applications (worst residual {worst:e})")]
    NotConverged {
        applies: usize,
        worst: f64,
        residual_history: Vec<f64>,
    },
    #[error("{count} eigenvalues below −{tol:e}; the ground state has exactly one")]
    NegativeDegeneracy { count: usize, tol: f64 },
    #[error("requested {0} eigenpairs; at most 8 are supported")]
    TooMany(usize),
    #[error("constraint fields are linearly dependent")]
    DependentConstraints,
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, LinopError>;

/// Residual tolerance used by the spectral checks.
pub const EIGEN_TOL: f64 = 1e-10;
/// Cap on operator applications per eigensolve.
pub const MAX_APPLIES: usize = 10_000;
/// Eigenvalues at or above this are treated as box continuum and not interpreted.
pub const INTERPRET_BELOW: f64 = 0.9;

/// `−Δ + a(x) − 2V(x)` for a potential `V` and an optional variable mass
/// `a` (`a ≡ 1` gives `L`).
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    potential: RealField,
    mass_term: Option<RealField>,
}

impl LinearizedOperator {
    /// `L` around the ground state.
    pub fn new(q: &GroundState) -> Self {
        Self::with_potential(q.profile().clone())
    }

    /// `−Δ + 1 − 2V`.
    pub fn with_potential(potential: RealField) -> Self {
        LinearizedOperator {
            potential,
            mass_term: None,
        }
    }

    /// `−Δ + a(x) − 2V`.
    pub fn with_mass_term(potential: RealField, a: RealField) -> Result<Self> {
        potential.grid().check_same(a.grid())?;
        Ok(LinearizedOperator {
            potential,
            mass_term: Some(a),
        })
    }

    pub fn grid(&self) -> &Grid {
        self.potential.grid()
    }

    pub fn potential(&self) -> &RealField {
        &self.potential
    }

    fn apply_raw(&self, f: &[f64]) -> Vec<f64> {
        let g = self.grid();
        let mut out = g.apply_symbol(f, |ix, iy| Complex64::new(g.k2(ix, iy), 0.0));
        let v = self.potential.data();
        match &self.mass_term {
            None => {
                for i in 0..out.len() {
                    out[i] += f[i] * (1.0 - 2.0 * v[i]);
                }
            }
            Some(a) => {
                let a = a.data();
                for i in 0..out.len() {
                    out[i] += f[i] * (a[i] - 2.0 * v[i]);
                }
            }
        }
        out
    }

    pub fn apply(&self, f: &RealField) -> Result<RealField> {
        self.grid().check_same(f.grid())?;
        f.check_finite()?;
        Ok(RealField::from_parts(self.grid(), self.apply_raw(f.data())))
    }

    /// `⟨L f, f⟩`.
    pub fn quadform(&self, f: &RealField) -> Result<f64> {
        Ok(self.apply(f)?.inner(f)?)
    }
}

/// `⟨L f, f⟩` for the operator around the ground state.
pub fn coercivity_quadform(op: &LinearizedOperator, f: &RealField) -> Result<f64> {
    op.quadform(f)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenReport {
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenfields: Vec<RealField>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub applies: usize,
    pub tol: f64,
}

impl EigenReport {
    /// Eigenvalues below `−tol`.
    pub fn negative_count(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l < -self.tol).count()
    }

    /// Eigenvalues below the continuum cut.
    pub fn interpreted(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .copied()
            .filter(|&l| l < INTERPRET_BELOW)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Orthonormal basis (discrete L² inner product) of a set of constraint fields.
struct Constraints {
    basis: Vec<Vec<f64>>,
}

impl Constraints {
    fn new(fields: &[Vec<f64>]) -> Result<Self> {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for f in fields {
            let mut v = f.clone();
            let n0 = dot(&v, &v).sqrt();
            for _ in 0..2 {
                for b in &basis {
                    let s = dot(b, &v);
                    axpy(&mut v, -s, b);
                }
            }
            let n = dot(&v, &v).sqrt();
            if !(n > 1e-10 * n0) {
                return Err(LinopError::DependentConstraints);
            }
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        Ok(Constraints { basis })
    }

    fn project(&self, v: &mut [f64]) {
        for _ in 0..2 {
            for b in &self.basis {
                let s = dot(b, v);
                axpy(v, -s, b);
            }
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Orthonormalizes `cands` against `fixed` (already orthonormal) and each
/// other, dropping nearly dependent vectors. Euclidean inner product.
fn orthonormalize_against(fixed: &[Vec<f64>], cands: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut v in cands {
        let n0 = dot(&v, &v).sqrt();
        if !(n0 > 0.0) {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n0);
        for _ in 0..2 {
            for b in fixed.iter().chain(out.iter()) {
                let s = dot(b, &v);
                axpy(&mut v, -s, b);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

/// Smooth seeded random field: `(1 − Δ)⁻²` applied to white noise.
fn random_smooth(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    grid.apply_symbol(&noise, |ix, iy| {
        Complex64::new((1.0 + grid.k2(ix, iy)).powi(-2), 0.0)
    })
}

struct Lobpcg<'a> {
    grid: &'a Grid,
    apply: &'a dyn Fn(&[f64]) -> Vec<f64>,
    precond: Option<&'a dyn Fn(&[f64]) -> Vec<f64>>,
    constraints: Option<&'a Constraints>,
    tol: f64,
    max_applies: usize,
}

struct LobpcgOut {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    iterations: usize,
    applies: usize,
}

impl Lobpcg<'_> {
    fn project(&self, v: &mut [f64]) {
        if let Some(c) = self.constraints {
            c.project(v);
        }
    }

    /// Rayleigh–Ritz on an orthonormal basis `s` with images `as_`;
    /// returns the `m` lowest Ritz values and coefficient matrix.
    fn ritz(s: &[Vec<f64>], as_: &[Vec<f64>], m: usize) -> (Vec<f64>, DMatrix<f64>) {
        let n = s.len();
        let mut g = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = 0.5 * (dot(&s[i], &as_[j]) + dot(&s[j], &as_[i]));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(g);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order[..m].iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut c = DMatrix::<f64>::zeros(n, m);
        for (col, &i) in order[..m].iter().enumerate() {
            c.set_column(col, &eig.eigenvectors.column(i));
        }
        (vals, c)
    }

    fn combine(basis: &[Vec<f64>], c: &DMatrix<f64>, rows: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        let len = basis[0].len();
        (0..c.ncols())
            .map(|j| {
                let mut v = vec![0.0; len];
                for i in rows.clone() {
                    let w = c[(i, j)];
                    if w != 0.0 {
                        axpy(&mut v, w, &basis[i]);
                    }
                }
                v
            })
            .collect()
    }

    fn run(&self, k: usize, x0: Vec<Vec<f64>>) -> Result<LobpcgOut> {
        let mut applies = 0usize;
        let apply = |v: &[f64], applies: &mut usize| {
            *applies += 1;
            let mut r = (self.apply)(v);
            self.project(&mut r);
            r
        };
        let m = x0.len();
        let x0: Vec<Vec<f64>> = x0
            .into_iter()
            .map(|mut v| {
                self.project(&mut v);
                v
            })
            .collect();
        let mut x = orthonormalize_against(&[], x0);
        if x.len() < m {
            return Err(LinopError::DependentConstraints);
        }
        let mut ax: Vec<Vec<f64>> = x.iter().map(|v| apply(v, &mut applies)).collect();
        let (mut vals, c) = Self::ritz(&x, &ax, m);
        x = Self::combine(&x, &c, 0..m);
        ax = Self::combine(&ax, &c, 0..m);
        let mut p: Vec<Vec<f64>> = Vec::new();
        let mut history = Vec::new();
        let mut iterations = 0;

        loop {
            iterations += 1;
            // refresh images now and then to stop drift from the recombinations
            if iterations % 25 == 0 {
                ax = x.iter().map(|v| apply(v, &mut applies)).collect();
            }
            let mut res = Vec::with_capacity(m);
            let mut r: Vec<Vec<f64>> = Vec::with_capacity(m);
            for i in 0..m {
                let mut ri = ax[i].clone();
                axpy(&mut ri, -vals[i], &x[i]);
                res.push(dot(&ri, &ri).sqrt());
                r.push(ri);
            }
            let worst = res[..k].iter().cloned().fold(0.0, f64::max);
            history.push(worst);
            if worst <= self.tol {
                // confirm with fresh images
                let fresh: Vec<Vec<f64>> = x.iter().map(|v| apply(v, &mut applies)).collect();
                let mut confirmed = Vec::with_capacity(k);
                for i in 0..k {
                    let mut ri = fresh[i].clone();
                    axpy(&mut ri, -vals[i], &x[i]);
                    confirmed.push(dot(&ri, &ri).sqrt());
                }
                if confirmed.iter().all(|&v| v <= self.tol) {
                    let scale = 1.0 / self.grid.cell_area().sqrt();
                    let vectors = x[..k]
                        .iter()
                        .map(|v| v.iter().map(|e| e * scale).collect())
                        .collect();
                    return Ok(LobpcgOut {
                        values: vals[..k].to_vec(),
                        vectors,
                        residuals: confirmed,
                        iterations,
                        applies,
                    });
                }
                ax = fresh;
                continue;
            }
            if applies >= self.max_applies {
                return Err(LinopError::NotConverged {
                    applies,
                    worst,
                    residual_history: history,
                });
            }
            let w: Vec<Vec<f64>> = r
                .into_iter()
                .zip(&res)
                .filter(|(_, &rn)| rn > 0.01 * self.tol)
                .map(|(ri, _)| {
                    let mut wi = match self.precond {
                        Some(t) => t(&ri),
                        None => ri,
                    };
                    self.project(&mut wi);
                    wi
                })
                .collect();
            let mut extra = orthonormalize_against(&x, w);
            let pw = orthonormalize_against(
                &x.iter().chain(extra.iter()).cloned().collect::<Vec<_>>(),
                std::mem::take(&mut p),
            );
            extra.extend(pw);
            let aextra: Vec<Vec<f64>> = extra.iter().map(|v| apply(v, &mut applies)).collect();
            let s: Vec<Vec<f64>> = x.iter().chain(extra.iter()).cloned().collect();
            let as_: Vec<Vec<f64>> = ax.iter().chain(aextra.iter()).cloned().collect();
            let (nv, c) = Self::ritz(&s, &as_, m);
            vals = nv;
            p = Self::combine(&s, &c, m..s.len());
            x = Self::combine(&s, &c, 0..s.len());
            ax = Self::combine(&as_, &c, 0..s.len());
            // keep X exactly orthonormal
            let xo = orthonormalize_against(&[], x.clone());
            if xo.len() == m {
                x = xo;
            }
        }
    }
}

fn helmholtz_inverse(grid: &Grid) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    move |v: &[f64]| {
        grid.apply_symbol(v, |ix, iy| Complex64::new(1.0 / (1.0 + grid.k2(ix, iy)), 0.0))
    }
}

fn initial_block(grid: &Grid, m: usize, seed: u64, guess: &[&RealField]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = guess.iter().map(|f| f.data().to_vec()).collect();
    while out.len() < m {
        out.push(random_smooth(grid, &mut rng));
    }
    out.truncate(m);
    out
}

/// The `k` smallest eigenpairs of the operator, ascending.
///
/// Two guard vectors ride along in the block to speed convergence of the
/// last requested pair.
pub fn smallest_eigenpairs(op: &LinearizedOperator, k: usize, tol: f64) -> Result<EigenReport> {
    smallest_eigenpairs_with(op, k, tol, MAX_APPLIES, 7)
}

pub fn smallest_eigenpairs_with(
    op: &LinearizedOperator,
    k: usize,
    tol: f64,
    max_applies: usize,
    seed: u64,
) -> Result<EigenReport> {
    if k == 0 || k > 8 {
        return Err(LinopError::TooMany(k));
    }
    let grid = op.grid().clone();
    let pre = helmholtz_inverse(&grid);
    let apply = |v: &[f64]| op.apply_raw(v);
    // seed the block with the potential and its gradient, which lie close to
    // the ground and kernel modes for a soliton potential
    let (px, py) = op.potential().spectral_gradient()?;
    let guess = [op.potential(), &px, &py];
    let m = k + 2;
    let x0 = initial_block(&grid, m, seed, &guess[..guess.len().min(m)]);
    let out = Lobpcg {
        grid: &grid,
        apply: &apply,
        precond: Some(&pre),
        constraints: None,
        tol,
        max_applies,
    }
    .run(k, x0)?;
    Ok(report_from(&grid, out, tol))
}

fn report_from(grid: &Grid, out: LobpcgOut, tol: f64) -> EigenReport {
    EigenReport {
        eigenvalues: out.values,
        eigenfields: out
            .vectors
            .into_iter()
            .map(|v| RealField::from_parts(grid, v))
            .collect(),
        // computed on unit vectors, so these are ‖Lv − λv‖/‖v‖
        residuals: out.residuals,
        iterations: out.iterations,
        applies: out.applies,
        tol,
    }
}

/// Low spectrum of `L` around a ground state, with the single-negative
/// eigenvalue contract checked.
pub fn ground_state_spectrum(q: &GroundState, k: usize, tol: f64) -> Result<EigenReport> {
    let op = LinearizedOperator::new(q);
    let report = smallest_eigenpairs(&op, k, tol)?;
    let count = report.negative_count();
    if count > 1 {
        return Err(LinopError::NegativeDegeneracy { count, tol });
    }
    Ok(report)
}

/// Projection onto the orthogonal complement of `span(fields)` in L²,
/// via the Gram system.
pub fn project_out(f: &RealField, fields: &[RealField]) -> Result<RealField> {
    let n = fields.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        f.grid().check_same(fields[i].grid())?;
        rhs[i] = fields[i].inner(f)?;
        for j in 0..n {
            gram[(i, j)] = fields[i].inner(&fields[j])?;
        }
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo > 1e-12 * hi) {
        return Err(LinopError::DependentConstraints);
    }
    let coef = gram
        .lu()
        .solve(&rhs)
        .ok_or(LinopError::DependentConstraints)?;
    let mut data = f.data().to_vec();
    for i in 0..n {
        axpy(&mut data, -coef[i], fields[i].data());
    }
    Ok(RealField::from_parts(f.grid(), data))
}

/// `min ⟨L f, f⟩ / ‖f‖²` over `f ⊥ {Q, ∂xQ, ∂yQ}` with its minimizer.
pub fn constrained_rayleigh_floor(q: &GroundState, tol: f64) -> Result<(f64, RealField)> {
    let op = LinearizedOperator::new(q);
    let grid = op.grid().clone();
    let (qx, qy) = q.profile().spectral_gradient()?;
    let cons = Constraints::new(
        &[q.profile().data().to_vec(), qx.data().to_vec(), qy.data().to_vec()],
    )?;
    let pre = helmholtz_inverse(&grid);
    let apply = |v: &[f64]| op.apply_raw(v);
    let lam = q.lambda_c(1.0).map_err(|_| LinopError::DependentConstraints)?;
    let x0 = initial_block(&grid, 3, 11, &[&lam]);
    let out = Lobpcg {
        grid: &grid,
        apply: &apply,
        precond: Some(&pre),
        constraints: Some(&cons),
        tol,
        max_applies: MAX_APPLIES,
    }
    .run(1, x0)?;
    let f = RealField::from_parts(&grid, out.vectors[0].clone());
    Ok((out.values[0], f))
}

/// Result of evaluating the two-soliton quadratic form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadformValue {
    pub value: f64,
    pub h1_norm_sq: f64,
    /// Separation was below the floor; positivity is not guaranteed there.
    pub below_separation_floor: bool,
}

/// Variable mass `c(x) = c₂ + (c₁ − c₂) ψ_γ(x − m)` with `m = (z₁+z₂)/2`,
/// using the nearest periodic image of `x − m`.
pub fn variable_mass(grid: &Grid, c1: f64, c2: f64, m: f64, gamma: f64) -> RealField {
    let row: Vec<f64> = (0..grid.nx())
        .map(|ix| c2 + (c1 - c2) * psi_gamma(grid.wrap_x(grid.x(ix) - m), gamma))
        .collect();
    let mut data = Vec::with_capacity(grid.len());
    for _ in 0..grid.ny() {
        data.extend_from_slice(&row);
    }
    RealField::from_parts(grid, data)
}

/// Operator of the two-soliton form `∫ |∇ε|² − 2Rε² + c(x)ε²`.
pub fn two_soliton_operator(dec: &Decomposition, gamma: f64) -> Result<LinearizedOperator> {
    let p = dec.params;
    let grid = dec.r1.grid();
    let r = &dec.r1 + &dec.r2;
    let a = variable_mass(grid, p.c1, p.c2, 0.5 * (p.z1 + p.z2), gamma);
    LinearizedOperator::with_mass_term(r, a)
}

/// The two-soliton quadratic form evaluated on the decomposition's `ε`.
pub fn two_soliton_quadform(dec: &Decomposition, gamma: f64) -> Result<QuadformValue> {
    two_soliton_quadform_on(dec, &dec.eps, gamma)
}

/// The two-soliton quadratic form built from `dec`'s templates, on `eps`.
pub fn two_soliton_quadform_on(dec: &Decomposition, eps: &RealField, gamma: f64) -> Result<QuadformValue> {
    let op = two_soliton_operator(dec, gamma)?;
    let value = op.quadform(eps)?;
    Ok(QuadformValue {
        value,
        h1_norm_sq: eps.h1_norm().powi(2),
        below_separation_floor: dec.params.separation() < separation_floor(dec.params.c_lower()),
    })
}

/// Minimum separation for which the two templates count as decoupled:
/// ten e-folding widths of the slower wave.
pub fn separation_floor(c_lower: f64) -> f64 {
    10.0 / c_lower.sqrt()
}

/// `min B(ε) / ‖ε‖²_{H¹}` over `ε` orthogonal to the six constraint fields
/// `{R_i, ∂xR_i, ∂yR_i}`, with the minimizer.
///
/// With `S = (1 − Δ)^{1/2}` and `g = Sε` this is the lowest eigenvalue of
/// `I + S⁻¹(c(x) − 1 − 2R)S⁻¹` on `g ⊥ S⁻¹ f_j`.
pub fn two_soliton_h1_floor(dec: &Decomposition, gamma: f64, tol: f64) -> Result<(f64, RealField)> {
    let op = two_soliton_operator(dec, gamma)?;
    let grid = op.grid().clone();
    let s_inv = |v: &[f64]| {
        grid.apply_symbol(v, |ix, iy| {
            Complex64::new((1.0 + grid.k2(ix, iy)).powf(-0.5), 0.0)
        })
    };
    let pot: Vec<f64> = {
        let a = variable_mass(&grid, dec.params.c1, dec.params.c2, dec.params.midpoint(), gamma);
        let r = &dec.r1 + &dec.r2;
        a.data()
            .iter()
            .zip(r.data())
            .map(|(a, r)| a - 1.0 - 2.0 * r)
            .collect()
    };
    let apply = |g: &[f64]| {
        let e = s_inv(g);
        let pe: Vec<f64> = e.iter().zip(&pot).map(|(e, p)| e * p).collect();
        let mut out = s_inv(&pe);
        axpy(&mut out, 1.0, g);
        out
    };
    let fields = dec.constraint_fields();
    let cons = Constraints::new(
        &fields.iter().map(|f| s_inv(f.data())).collect::<Vec<_>>(),
    )?;
    let x0 = initial_block(&grid, 4, 13, &[&dec.r1, &dec.r2]);
    let out = Lobpcg {
        grid: &grid,
        apply: &apply,
        precond: None,
        constraints: Some(&cons),
        tol,
        max_applies: MAX_APPLIES,
    }
    .run(1, x0)?;
    let eps = RealField::from_parts(&grid, s_inv(&out.vectors[0]));
    Ok((out.values[0], eps))
}

/// Seeded random trial field for coercivity sampling: band-limited noise
/// (`|k| ≤ 2`) under a Gaussian envelope of width `width` centered at
/// `(x0, y0)`.
pub fn random_localized_field(grid: &Grid, seed: u64, x0: f64, y0: f64, width: f64) -> RealField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let smooth = grid.apply_symbol(&noise, |ix, iy| {
        if grid.k2(ix, iy) <= 4.0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let data = smooth
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = grid.wrap_x(grid.x(i % grid.nx()) - x0);
            let y = grid.wrap_y(grid.y(i / grid.nx()) - y0);
            v * (-(x * x + y * y) / (2.0 * width * width)).exp()
        })
        .collect();
    RealField::from_parts(grid, data)
}

/// Largest principal angle between two subspaces spanned by (not
/// necessarily orthonormal) fields.
pub fn subspace_angle(a: &[RealField], b: &[RealField]) -> Result<f64> {
    let orth = |fs: &[RealField]| -> Result<Vec<Vec<f64>>> {
        let v = orthonormalize_against(&[], fs.iter().map(|f| f.data().to_vec()).collect());
        if v.len() < fs.len() {
            return Err(LinopError::DependentConstraints);
        }
        Ok(v)
    };
    let (qa, qb) = (orth(a)?, orth(b)?);
    let mut m = DMatrix::<f64>::zeros(qa.len(), qb.len());
    for i in 0..qa.len() {
        for j in 0..qb.len() {
            m[(i, j)] = dot(&qa[i], &qb[j]);
        }
    }
    let sv = m.singular_values();
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    Ok(smin.acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::solve_ground_state;
    use std::sync::OnceLock;

    fn gs() -> &'static GroundState {
        static GS: OnceLock<GroundState> = OnceLock::new();
        GS.get_or_init(|| {
            let g = Grid::new(256, 256, 64.0, 64.0).unwrap();
            solve_ground_state(&g, 1e-12, 500).unwrap()
        })
    }

    #[test]
    fn apply_on_zero_and_self_adjoint() {
        let op = LinearizedOperator::new(gs());
        let g = gs().grid();
        assert_eq!(op.apply(&RealField::zeros(g)).unwrap().max_abs(), 0.0);
        let f = random_localized_field(g, 1, 0.0, 0.0, 4.0);
        let h = random_localized_field(g, 2, 1.0, -1.0, 3.0);
        let a = op.apply(&f).unwrap().inner(&h).unwrap();
        let b = f.inner(&op.apply(&h).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
    }

    #[test]
    fn kernel_and_scaling_relation() {
        let q = gs();
        let op = LinearizedOperator::new(q);
        let qx = q.profile().dx();
        let r = op.apply(&qx).unwrap().norm_l2() / qx.norm_l2();
        assert!(r < 1e-7, "{r:e}");
        let lam = q.lambda_c(1.0).unwrap();
        let r = (&op.apply(&lam).unwrap() + q.profile()).norm_l2() / q.profile().norm_l2();
        assert!(r < 1e-6, "{r:e}");
    }

    #[test]
    fn spectrum_has_one_negative_and_two_kernel_modes() {
        let q = gs();
        let rep = ground_state_spectrum(q, 4, 1e-9).unwrap();
        assert_eq!(rep.negative_count(), 1);
        assert!(rep.eigenvalues[1].abs() < 1e-8 && rep.eigenvalues[2].abs() < 1e-8);
        assert!(rep.eigenvalues[3] > 1e-3);
        let (qx, qy) = q.profile().spectral_gradient().unwrap();
        let angle = subspace_angle(&rep.eigenfields[1..3], &[qx, qy]).unwrap();
        assert!(angle < 1e-4, "{angle}");
        for (i, a) in rep.eigenfields.iter().enumerate() {
            for (j, b) in rep.eigenfields.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((a.inner(b).unwrap() - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn projection_is_orthogonal_and_idempotent() {
        let q = gs();
        let (qx, qy) = q.profile().spectral_gradient().unwrap();
        let fields = [q.profile().clone(), qx, qy];
        let f = random_localized_field(q.grid(), 5, 0.5, 0.0, 3.0);
        let p = project_out(&f, &fields).unwrap();
        for c in &fields {
            assert!(p.inner(c).unwrap().abs() < 1e-12 * f.norm_l2() * c.norm_l2());
        }
        let pp = project_out(&p, &fields).unwrap();
        assert!((&pp - &p).max_abs() < 1e-13 * p.max_abs());
        assert!(matches!(
            project_out(&f, &[fields[0].clone(), fields[0].clone()]),
            Err(LinopError::DependentConstraints)
        ));
    }

    #[test]
    fn rejects_large_k() {
        let op = LinearizedOperator::new(gs());
        assert!(matches!(smallest_eigenpairs(&op, 9, 1e-8), Err(LinopError::TooMany(9))));
    }

    #[test]
    fn subspace_angle_basics() {
        let g = Grid::new(16, 16, 2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI).unwrap();
        let a = RealField::from_fn(&g, |x, _| x.sin()).unwrap();
        let b = RealField::from_fn(&g, |_, y| y.cos()).unwrap();
        assert!(subspace_angle(&[a.clone()], &[a.scale(3.0)]).unwrap() < 1e-7);
        let ang = subspace_angle(&[a], &[b]).unwrap();
        assert!((ang - std::f64::consts::FRAC_PI_2).abs() < 1e-7);
    }
}
