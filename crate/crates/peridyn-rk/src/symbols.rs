//! Fourier symbols of the continuous and quasi-discrete Navier operators,
//! the Galerkin and collocation lattice sums, and positivity scans.
//!
//! For a radial kernel the bond symbol splits into a transverse part
//! `p_1(I - n n^T)` and a longitudinal part `q_1 n n^T`, where the unit-ball
//! scalars reduce to one-dimensional integrals:
//!
//! * 2D: `p_1 = pi int rho t (1 - J_0(Rt) - J_2(Rt))`, `q_1 = pi int rho t (1 - J_0 + J_2)`,
//!   `b_1 = 2 pi int rho t^2 J_1(Rt)`;
//! * 3D: the polar-angle integrals of `(1 - c^2)`, `c^2` and `c` against
//!   `cos(zc)` and `sin(zc)` are elementary.
//!
//! Symbols are built from the operator definitions with the computed moment
//! `m`, so `M^S -> mu |xi|^2 I + (mu + lambda) xi xi^T` as `delta -> 0`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::gauss::{gauss_on, Compensated};
use crate::grid::{Point, MAX_DIM};
use crate::kernel::{KernelError, RadialKernel};
use crate::nlops::Material;
use crate::quad::{integrate_ball, AngularScheme, PolarRule, QuadSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lattice sum did not converge: last of {shells} shells contributes {last:e} relative")]
    Nonconvergent { shells: usize, last: f64 },
    #[error("quasi-discrete form requires a quadrature set")]
    MissingQuadSet,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Continuous symbol or the symbol of a fixed quadrature set.
#[derive(Debug, Clone, Copy)]
pub enum SymbolMode<'a> {
    Continuous,
    Quasi(&'a QuadSet),
}

fn unit_kernel(kernel: &RadialKernel) -> RadialKernel {
    kernel.with_delta(1.0).expect("a valid kernel rescales")
}

/// `(1 - J_0(z), J_1(z), J_2(z))`, by series below `z = 2`.
fn bessel_terms(z: f64) -> (f64, f64, f64) {
    if z.abs() < 2.0 {
        let q = -0.25 * z * z;
        let (mut one_minus_j0, mut j1, mut j2) = (0.0, 0.0, 0.0);
        let mut t0 = 1.0;
        let mut t1 = 0.5 * z;
        let mut t2 = 0.125 * z * z;
        for k in 0..30 {
            if k > 0 {
                t0 *= q / (k * k) as f64;
                one_minus_j0 -= t0;
            }
            j1 += t1;
            j2 += t2;
            let kf = k as f64;
            t1 *= q / ((kf + 1.0) * (kf + 2.0));
            t2 *= q / ((kf + 1.0) * (kf + 3.0));
        }
        (one_minus_j0, j1, j2)
    } else {
        let j0 = libm::j0(z);
        let j1 = libm::j1(z);
        (1.0 - j0, j1, 2.0 * j1 / z - j0)
    }
}

/// `int_{-1}^{1} (1 - c^2)(1 - cos zc)`, `int c^2 (1 - cos zc)`, `int c sin zc`.
fn spherical_terms(z: f64) -> (f64, f64, f64) {
    if z.abs() < 3.0 {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        let mut even = 1.0;
        let mut odd = z;
        for k in 0..40 {
            let kf = k as f64;
            if k > 0 {
                let s = -even;
                a += s * (2.0 / (2.0 * kf + 1.0) - 2.0 / (2.0 * kf + 3.0));
                b += s * 2.0 / (2.0 * kf + 3.0);
            }
            c += odd * 2.0 / (2.0 * kf + 3.0);
            even *= -z * z / ((2.0 * kf + 1.0) * (2.0 * kf + 2.0));
            odd *= -z * z / ((2.0 * kf + 2.0) * (2.0 * kf + 3.0));
        }
        (a, b, c)
    } else {
        let (s, co) = z.sin_cos();
        let z2 = z * z;
        let z3 = z2 * z;
        let a = 4.0 / 3.0 - 4.0 * (s - z * co) / z3;
        let b = 2.0 / 3.0 - (2.0 * s / z + 4.0 * co / z2 - 4.0 * s / z3);
        let c = 2.0 * (s - z * co) / z2;
        (a, b, c)
    }
}

fn continuous_scalars(unit: &RadialKernel, r: f64) -> [f64; 3] {
    if r == 0.0 {
        return [0.0; 3];
    }
    let sign = r.signum();
    let r = r.abs();
    let panels = (r / 4.0).ceil() as usize + 2;
    let d = unit.dim();
    let mut acc = [Compensated::default(); 3];
    for p in 0..panels {
        let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
        for (t, w) in gauss_on(a, b, 8) {
            let rho = unit.profile().eval(t);
            let z = r * t;
            if d == 2 {
                let (omj0, j1, j2) = bessel_terms(z);
                acc[0].add(w * PI * rho * t * (omj0 - j2));
                acc[1].add(w * PI * rho * t * (omj0 + j2));
                acc[2].add(w * 2.0 * PI * rho * t * t * j1);
            } else {
                let (sa, sb, sc) = spherical_terms(z);
                acc[0].add(w * PI * rho * t * t * sa);
                acc[1].add(w * 2.0 * PI * rho * t * t * sb);
                acc[2].add(w * 2.0 * PI * rho * t * t * t * sc);
            }
        }
    }
    [acc[0].value(), acc[1].value(), sign * acc[2].value()]
}

fn quasi_scalars(unit: &RadialKernel, set: &QuadSet, r: f64) -> [f64; 3] {
    let d = set.d;
    let mut acc = [Compensated::default(); 3];
    for (t, w) in set.points.iter().zip(&set.weights) {
        let n2: f64 = t[..d].iter().map(|v| v * v).sum();
        let wr = w * unit.profile().eval(n2.sqrt());
        if wr == 0.0 {
            continue;
        }
        let (s, c) = (r * t[d - 1]).sin_cos();
        acc[0].add(wr * t[0] * t[0] / n2 * (1.0 - c));
        acc[1].add(wr * t[d - 1] * t[d - 1] / n2 * (1.0 - c));
        acc[2].add(wr * t[d - 1] * s);
    }
    acc.map(|a| a.value())
}

/// Unit-ball scalars `(p_1(r), q_1(r), b_1(r))` for the profile of `kernel`.
pub fn scalar_symbols(kernel: &RadialKernel, r: f64, mode: SymbolMode<'_>) -> Result<[f64; 3], SymbolError> {
    let unit = unit_kernel(kernel);
    match mode {
        SymbolMode::Continuous => Ok(continuous_scalars(&unit, r)),
        SymbolMode::Quasi(set) => {
            if set.d != kernel.dim() {
                return Err(SymbolError::Dimension(format!("set d = {} but kernel d = {}", set.d, kernel.dim())));
            }
            Ok(quasi_scalars(&unit, set, r))
        }
    }
}

/// Transverse and longitudinal eigenvalues of a radial symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub transverse: f64,
    pub longitudinal: f64,
}

/// Real symmetric `d x d` symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix {
    pub d: usize,
    pub m: [[f64; MAX_DIM]; MAX_DIM],
    pub decomposition: Option<Decomposition>,
}

impl SymbolMatrix {
    fn zeros(d: usize) -> Self {
        Self { d, m: [[0.0; MAX_DIM]; MAX_DIM], decomposition: None }
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |i, j| self.m[i][j])
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.d == 2 {
            let (a, b, c) = (self.m[0][0], 0.5 * (self.m[0][1] + self.m[1][0]), self.m[1][1]);
            let mid = 0.5 * (a + c);
            let rad = (0.5 * (a - c)).hypot(b);
            let hi = mid + rad;
            let lo = if hi != 0.0 { (a * c - b * b) / hi } else { mid - rad };
            let mut e = vec![lo.min(hi), lo.max(hi)];
            if mid < 0.0 {
                e = vec![mid - rad, mid - rad + 2.0 * rad];
            }
            return e;
        }
        let mut e: Vec<f64> = self.to_dmatrix().symmetric_eigen().eigenvalues.iter().cloned().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Largest `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut a: f64 = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                a = a.max((self.m[i][j] - self.m[j][i]).abs());
            }
        }
        a
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.m[i][j] * self.m[i][j];
            }
        }
        s.sqrt()
    }
}

/// Smallest eigenvalue of `G^{-1} C` for symmetric positive definite `G`, `None` otherwise.
pub fn generalized_min_eigenvalue(c: &SymbolMatrix, g: &SymbolMatrix) -> Option<f64> {
    let chol = g.to_dmatrix().cholesky()?;
    let l = chol.l();
    let linv = l.try_inverse()?;
    let s = &linv * c.to_dmatrix() * linv.transpose();
    let s = 0.5 * (&s + s.transpose());
    s.symmetric_eigen().eigenvalues.iter().cloned().reduce(f64::min)
}

fn check_material(kernel: &RadialKernel, mat: &Material, xi: &[f64]) -> Result<usize, SymbolError> {
    let d = kernel.dim();
    if mat.d != d || xi.len() != d {
        return Err(SymbolError::Dimension(format!(
            "kernel d = {d}, material d = {}, wave vector length {}",
            mat.d,
            xi.len()
        )));
    }
    Ok(d)
}

fn radial_matrix(d: usize, n: &[f64], transverse: f64, longitudinal: f64) -> SymbolMatrix {
    let mut out = SymbolMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let nn = n[i] * n[j];
            out.m[i][j] = transverse * (if i == j { 1.0 } else { 0.0 } - nn) + longitudinal * nn;
        }
    }
    out.decomposition = Some(Decomposition { transverse, longitudinal });
    out
}

/// Quasi symbol from its definition as a weighted point sum: `(M^B, b)` for `C_a mu / m = 1`.
fn quasi_parts(unit: &RadialKernel, set: &QuadSet, delta: f64, xi: &[f64]) -> ([[f64; MAX_DIM]; MAX_DIM], Point) {
    let d = set.d;
    let mut mb = [[Compensated::default(); MAX_DIM]; MAX_DIM];
    let mut b = [Compensated::default(); MAX_DIM];
    for (t, w) in set.points.iter().zip(&set.weights) {
        let n2: f64 = t[..d].iter().map(|v| v * v).sum();
        let wr = w * unit.profile().eval(n2.sqrt());
        if wr == 0.0 {
            continue;
        }
        let phase: f64 = (0..d).map(|j| delta * t[j] * xi[j]).sum();
        let (s, c) = phase.sin_cos();
        for i in 0..d {
            for j in 0..d {
                mb[i][j].add(wr * t[i] * t[j] / n2 * (1.0 - c));
            }
            b[i].add(wr * t[i] * s);
        }
    }
    let mut m = [[0.0; MAX_DIM]; MAX_DIM];
    let mut bv = [0.0; MAX_DIM];
    for i in 0..d {
        for j in 0..d {
            m[i][j] = mb[i][j].value() / (delta * delta);
        }
        bv[i] = b[i].value() / delta;
    }
    (m, bv)
}

/// `M^S_delta(xi) = M^B + M^D` for the horizon of `kernel`.
pub fn navier_symbol(
    xi: &[f64],
    kernel: &RadialKernel,
    mat: &Material,
    m: f64,
    mode: SymbolMode<'_>,
) -> Result<SymbolMatrix, SymbolError> {
    let d = check_material(kernel, mat, xi)?;
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(SymbolMatrix::zeros(d));
    }
    let delta = kernel.delta();
    let (cb, cs) = (mat.bond_coefficient(m), mat.state_coefficient(m));
    let unit = unit_kernel(kernel);
    match mode {
        SymbolMode::Continuous => {
            let [p, q, b] = continuous_scalars(&unit, delta * norm);
            let n: Vec<f64> = xi.iter().map(|v| v / norm).collect();
            let bd = b / delta;
            Ok(radial_matrix(d, &n, cb * p / (delta * delta), cb * q / (delta * delta) + cs * bd * bd))
        }
        SymbolMode::Quasi(set) => {
            if set.d != d {
                return Err(SymbolError::Dimension(format!("set d = {} but kernel d = {d}", set.d)));
            }
            let (mb, b) = quasi_parts(&unit, set, delta, xi);
            let mut out = SymbolMatrix::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    out.m[i][j] = cb * mb[i][j] + cs * b[i] * b[j];
                }
            }
            Ok(out)
        }
    }
}

/// `(C_a mu / m) int rho_delta (s s^T / |s|^2)(1 - cos s.xi)` by direct polar quadrature.
pub fn bond_symbol_direct(
    xi: &[f64],
    kernel: &RadialKernel,
    mat: &Material,
    m: f64,
) -> Result<SymbolMatrix, SymbolError> {
    let d = check_material(kernel, mat, xi)?;
    let delta = kernel.delta();
    let big_r = delta * xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ang = ((big_r + 32.0).ceil() as usize).div_ceil(4) * 4;
    let rule = PolarRule {
        d,
        delta,
        radial_panels: (big_r / 4.0).ceil() as usize + 2,
        radial_order: 8,
        angular: AngularScheme::Uniform { points: ang },
        polar_panels: if d == 3 { (big_r / 4.0).ceil() as usize + 2 } else { 0 },
        polar_order: 8,
    };
    let vals = integrate_ball::<9>(&rule, kernel, |s| {
        let n2: f64 = s.iter().map(|v| v * v).sum();
        let c = 1.0 - s.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>().cos();
        let mut out = [0.0; 9];
        for i in 0..d {
            for j in 0..d {
                out[i * 3 + j] = s[i] * s[j] / n2 * c;
            }
        }
        out
    });
    let cb = mat.bond_coefficient(m);
    let mut out = SymbolMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            out.m[i][j] = cb * vals[i * 3 + j];
        }
    }
    Ok(out)
}

/// Equispaced table of the continuous unit scalars with 8-point Lagrange interpolation.
#[derive(Debug, Clone)]
pub struct ScalarTable {
    step: f64,
    values: Vec<[f64; 3]>,
}

const TABLE_HALF: usize = 4;

impl ScalarTable {
    pub fn new(kernel: &RadialKernel, r_max: f64, step: f64) -> Self {
        let unit = unit_kernel(kernel);
        let n = (r_max / step).ceil() as usize + TABLE_HALF + 1;
        let values = (0..=n).into_par_iter().map(|i| continuous_scalars(&unit, i as f64 * step)).collect();
        Self { step, values }
    }

    /// Largest argument served by interpolation.
    pub fn r_max(&self) -> f64 {
        (self.values.len() - TABLE_HALF - 1) as f64 * self.step
    }

    /// Interpolated `(p_1, q_1, b_1)`, `None` beyond the table.
    pub fn eval(&self, r: f64) -> Option<[f64; 3]> {
        let x = r.abs() / self.step;
        if x > (self.values.len() - TABLE_HALF - 1) as f64 {
            return None;
        }
        const N: usize = 2 * TABLE_HALF;
        const DENOM: [f64; N] = [-5040.0, 720.0, -240.0, 144.0, -144.0, 240.0, -720.0, 5040.0];
        let base = x.floor() as i64 - (TABLE_HALF as i64 - 1);
        let mut diff = [0.0; N];
        for (k, v) in diff.iter_mut().enumerate() {
            *v = x - (base + k as i64) as f64;
        }
        let mut prefix = [1.0; N];
        let mut suffix = [1.0; N];
        for k in 1..N {
            prefix[k] = prefix[k - 1] * diff[k - 1];
            suffix[N - 1 - k] = suffix[N - k] * diff[N - k];
        }
        let mut out = [0.0; 3];
        for k in 0..N {
            let node = base + k as i64;
            let w = prefix[k] * suffix[k] / DENOM[k];
            let v = self.values[node.unsigned_abs() as usize];
            let odd = if node < 0 { -1.0 } else { 1.0 };
            out[0] += w * v[0];
            out[1] += w * v[1];
            out[2] += w * odd * v[2];
        }
        if r < 0.0 {
            out[2] = -out[2];
        }
        Some(out)
    }
}

/// Discrete quadratic forms whose symbols are lattice sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeForm {
    Galerkin,
    Collocation,
    QuasiCollocation,
}

impl LatticeForm {
    pub fn tag(&self) -> &'static str {
        match self {
            LatticeForm::Galerkin => "galerkin",
            LatticeForm::Collocation => "collocation",
            LatticeForm::QuasiCollocation => "quasi_collocation",
        }
    }

    /// `(bond power, state power, bond prefactor exponent, state prefactor exponent)` for dimension `d`.
    fn powers(&self, d: usize) -> (i32, i32, i32, i32) {
        let d = d as i32;
        match self {
            LatticeForm::Galerkin => (8, 12, 8 * d, 8 * d + 4),
            LatticeForm::Collocation | LatticeForm::QuasiCollocation => (4, 8, 4 * d, 4 * d + 4),
        }
    }
}

/// Truncation controls for lattice sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeOptions {
    /// Shells are added until the last one contributes less than this, relative.
    pub shell_tol: f64,
    pub max_shells: usize,
    /// Error threshold on the last shell when `max_shells` is reached.
    pub fail_tol: f64,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        Self { shell_tol: 1e-10, max_shells: 64, fail_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSum {
    pub matrix: SymbolMatrix,
    /// Shells summed, counting the origin shell as zero.
    pub shells: usize,
    pub last_shell: f64,
    pub converged: bool,
}

/// Material, kernel profile, optional quadrature set and scalar table shared by symbol evaluations.
#[derive(Debug, Clone)]
pub struct SymbolContext {
    pub kernel: RadialKernel,
    pub mat: Material,
    pub m: f64,
    pub quad: Option<QuadSet>,
    table: ScalarTable,
}

impl SymbolContext {
    /// `r_max` bounds `delta |(xi + 2 pi r) / h|` over the intended evaluations.
    pub fn new(kernel: &RadialKernel, mat: &Material, quad: Option<QuadSet>, r_max: f64) -> Result<Self, SymbolError> {
        if mat.d != kernel.dim() {
            return Err(SymbolError::Dimension(format!("material d = {} but kernel d = {}", mat.d, kernel.dim())));
        }
        let unit = unit_kernel(kernel);
        let m = unit.compute_moments().m;
        let table = ScalarTable::new(&unit, r_max, 0.125);
        Ok(Self { kernel: unit, mat: *mat, m, quad, table })
    }

    /// Table bound needed for lattice sums at `delta / h_min` with `shells` shells in `d` dimensions.
    pub fn required_r_max(delta_over_h_min: f64, shells: usize, d: usize) -> f64 {
        delta_over_h_min * (PI + 2.0 * PI * shells as f64) * (d as f64).sqrt()
    }

    fn scalars(&self, r: f64) -> [f64; 3] {
        self.table.eval(r).unwrap_or_else(|| continuous_scalars(&self.kernel, r))
    }

    /// Continuous or quasi `M^S_delta(xi)`.
    pub fn navier(&self, xi: &[f64], delta: f64, quasi: bool) -> Result<SymbolMatrix, SymbolError> {
        let k = self.kernel.with_delta(delta)?;
        let mode = if quasi {
            SymbolMode::Quasi(self.quad.as_ref().ok_or(SymbolError::MissingQuadSet)?)
        } else {
            SymbolMode::Continuous
        };
        navier_symbol(xi, &k, &self.mat, self.m, mode)
    }
}

/// Lattice sum of `form` at `xi` in `(-pi, pi)^d`.
pub fn lattice_symbol(
    ctx: &SymbolContext,
    xi: &[f64],
    delta: f64,
    h: &[f64],
    form: LatticeForm,
    opts: &LatticeOptions,
) -> Result<LatticeSum, SymbolError> {
    let d = ctx.kernel.dim();
    if xi.len() != d || h.len() != d {
        return Err(SymbolError::Dimension(format!("xi has {} and h has {} entries for d = {d}", xi.len(), h.len())));
    }
    if xi.iter().all(|&v| v == 0.0) {
        return Ok(LatticeSum { matrix: SymbolMatrix::zeros(d), shells: 0, last_shell: 0.0, converged: true });
    }
    let quasi = match form {
        LatticeForm::QuasiCollocation => Some(ctx.quad.as_ref().ok_or(SymbolError::MissingQuadSet)?),
        _ => None,
    };
    let (pb, pd, eb, ed) = form.powers(d);
    let (cb, cs) = (ctx.mat.bond_coefficient(ctx.m), ctx.mat.state_coefficient(ctx.m));
    let half_sin: Vec<f64> = xi.iter().map(|v| (0.5 * v).sin()).collect();
    let hprod: f64 = h.iter().product();
    let (pre_b, pre_d) = (2f64.powi(eb), 2f64.powi(ed));

    let phases = quasi.map(|set| QuasiPhases::new(&ctx.kernel, set, delta, xi, h, opts.max_shells as i64));

    let summand = |r: &[i64]| -> Option<[[f64; MAX_DIM]; MAX_DIM]> {
        let mut ratio = 1.0;
        let mut arg = [0.0; MAX_DIM];
        for j in 0..d {
            let den = xi[j] + 2.0 * PI * r[j] as f64;
            if den == 0.0 {
                if half_sin[j] != 0.0 {
                    return None;
                }
                ratio *= 0.5;
            } else {
                if half_sin[j] == 0.0 {
                    return None;
                }
                ratio *= half_sin[j] / den;
            }
            arg[j] = den / h[j];
        }
        let wb = pre_b * hprod * ratio.powi(pb);
        let wd = pre_d * hprod * ratio.powi(pd);
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        match quasi {
            None => {
                let norm = arg[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Some(out);
                }
                let [p, q, b] = ctx.scalars(delta * norm);
                let (tr, lo, bb) = (cb * p / (delta * delta), cb * q / (delta * delta), cs * (b / delta).powi(2));
                for i in 0..d {
                    for j in 0..d {
                        let nn = arg[i] * arg[j] / (norm * norm);
                        let id = if i == j { 1.0 } else { 0.0 };
                        out[i][j] = wb * (tr * (id - nn) + lo * nn) + wd * bb * nn;
                    }
                }
            }
            Some(_) => {
                let (mb, b) = phases.as_ref().expect("phases built for quasi forms").parts(r);
                for i in 0..d {
                    for j in 0..d {
                        out[i][j] = wb * cb * mb[i][j] + wd * cs * b[i] * b[j];
                    }
                }
            }
        }
        Some(out)
    };

    let mut total = [[Compensated::default(); MAX_DIM]; MAX_DIM];
    let mut last = f64::INFINITY;
    let mut shells = 0;
    let mut converged = false;
    for n in 0..=opts.max_shells as i64 {
        let mut shell = [[0.0; MAX_DIM]; MAX_DIM];
        for_each_shell_point(d, n, |r| {
            if let Some(s) = summand(r) {
                for i in 0..d {
                    for j in 0..d {
                        shell[i][j] += s[i][j];
                    }
                }
            }
        });
        let mut sn = 0.0;
        let mut tn = 0.0;
        for i in 0..d {
            for j in 0..d {
                total[i][j].add(shell[i][j]);
                sn += shell[i][j] * shell[i][j];
                let t = total[i][j].value();
                tn += t * t;
            }
        }
        shells = n as usize;
        last = if tn > 0.0 { (sn / tn).sqrt() } else { 0.0 };
        if n > 0 && last < opts.shell_tol {
            converged = true;
            break;
        }
    }
    if !converged && last > opts.fail_tol {
        return Err(SymbolError::Nonconvergent { shells, last });
    }
    let mut matrix = SymbolMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            matrix.m[i][j] = total[i][j].value();
        }
    }
    Ok(LatticeSum { matrix, shells, last_shell: last, converged })
}

/// Quasi symbol at `(xi + 2 pi r) / h` with phases factored per axis.
struct QuasiPhases {
    d: usize,
    shells: i64,
    delta: f64,
    /// `(w rho(|t|), 1 / |t|^2, t)`.
    nodes: Vec<(f64, f64, Point)>,
    /// `(cos, sin)` of `delta t . (xi / h)` per node.
    base: Vec<(f64, f64)>,
    /// `(cos, sin)` of `2 pi delta t_j r_j / h_j`, node-major, axis, then `r_j + shells`.
    steps: Vec<(f64, f64)>,
}

impl QuasiPhases {
    fn new(unit: &RadialKernel, set: &QuadSet, delta: f64, xi: &[f64], h: &[f64], shells: i64) -> Self {
        let d = set.d;
        let side = (2 * shells + 1) as usize;
        let mut nodes = Vec::new();
        let mut base = Vec::new();
        let mut steps = Vec::new();
        for (t, w) in set.points.iter().zip(&set.weights) {
            let n2: f64 = t[..d].iter().map(|v| v * v).sum();
            let wr = w * unit.profile().eval(n2.sqrt());
            if wr == 0.0 {
                continue;
            }
            nodes.push((wr, 1.0 / n2, *t));
            base.push((0..d).map(|j| delta * t[j] * xi[j] / h[j]).sum::<f64>().sin_cos());
            for j in 0..d {
                let a = 2.0 * PI * delta * t[j] / h[j];
                steps.extend((0..side).map(|k| {
                    let (s, c) = (a * (k as i64 - shells) as f64).sin_cos();
                    (c, s)
                }));
            }
        }
        let base = base.into_iter().map(|(s, c)| (c, s)).collect();
        Self { d, shells, delta, nodes, base, steps }
    }

    fn parts(&self, r: &[i64]) -> ([[f64; MAX_DIM]; MAX_DIM], Point) {
        let d = self.d;
        let side = (2 * self.shells + 1) as usize;
        let mut mb = [[0.0; MAX_DIM]; MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        for (q, (wr, inv, t)) in self.nodes.iter().enumerate() {
            let (mut c, mut s) = self.base[q];
            for j in 0..d {
                let (sc, ss) = self.steps[(q * d + j) * side + (r[j] + self.shells) as usize];
                (c, s) = (c * sc - s * ss, c * ss + s * sc);
            }
            for i in 0..d {
                for k in 0..d {
                    mb[i][k] += wr * inv * t[i] * t[k] * (1.0 - c);
                }
                b[i] += wr * t[i] * s;
            }
        }
        let dd = self.delta * self.delta;
        for row in mb.iter_mut().take(d) {
            for v in row.iter_mut().take(d) {
                *v /= dd;
            }
        }
        for v in b.iter_mut().take(d) {
            *v /= self.delta;
        }
        (mb, b)
    }
}

/// Calls `f` on every `r` with `|r|_inf = n`.
fn for_each_shell_point(d: usize, n: i64, mut f: impl FnMut(&[i64])) {
    if n == 0 {
        f(&[0; MAX_DIM][..d]);
        return;
    }
    let mut r = [0i64; MAX_DIM];
    let side = (2 * n + 1) as usize;
    let count = side.pow(d as u32);
    for idx in 0..count {
        let mut rem = idx;
        let mut on_shell = false;
        for v in r.iter_mut().take(d) {
            *v = (rem % side) as i64 - n;
            rem /= side;
            on_shell |= v.abs() == n;
        }
        if on_shell {
            f(&r[..d]);
        }
    }
}

/// The printed and the operator-derived material constants of the decomposed symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolConstants {
    /// `C_a mu / d`, valid when `m = d`.
    pub printed_c_mu: f64,
    /// `C_b (lambda - mu)`.
    pub printed_c_lambda_mu: f64,
    /// `C_a mu / m`.
    pub operator_c_mu: f64,
    /// `C_b d (lambda - mu) / m^2`.
    pub operator_c_lambda_mu: f64,
}

impl SymbolConstants {
    pub fn new(mat: &Material, m: f64) -> Self {
        let d = mat.d as f64;
        Self {
            printed_c_mu: mat.c_alpha * mat.mu / d,
            printed_c_lambda_mu: mat.c_beta * (mat.lambda - mat.mu),
            operator_c_mu: mat.bond_coefficient(m),
            operator_c_lambda_mu: mat.state_coefficient(m),
        }
    }
}

/// Wave vectors: a `res x res` grid over `(-pi, pi)^2` without the origin,
/// plus `radial` log-spaced radii along `directions` equally spaced directions.
pub fn scan_points(res: usize, radial: usize, directions: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let c = |i: usize| PI * (2.0 * i as f64 + 1.0 - res as f64) / res as f64;
    for i in 0..res {
        for j in 0..res {
            let p = [c(i), c(j)];
            if p[0].abs() > 1e-14 || p[1].abs() > 1e-14 {
                out.push(p);
            }
        }
    }
    let (r0, r1) = (1e-3, 0.99 * PI);
    for a in 0..directions {
        let th = 2.0 * PI * a as f64 / directions as f64;
        for k in 0..radial {
            let r = r0 * (r1 / r0).powf(k as f64 / (radial.max(2) - 1) as f64);
            out.push([r * th.cos(), r * th.sin()]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    /// `(delta, h)` pairs.
    pub pairs: Vec<(f64, Vec<f64>)>,
    pub resolution: usize,
    pub radial: usize,
    pub directions: usize,
    pub lattice: LatticeOptions,
}

impl ScanConfig {
    /// `delta = ratio * h_max` for each `h_max`, spacing `h_max * h_hat`.
    pub fn ratio_sweep(ratio: f64, h_max: &[f64], h_hat: &[f64]) -> Self {
        Self {
            pairs: h_max.iter().map(|&h| (ratio * h, h_hat.iter().map(|a| a * h).collect())).collect(),
            resolution: 33,
            radial: 64,
            directions: 8,
            lattice: LatticeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub delta: f64,
    pub h_max: f64,
    pub xi: [f64; 2],
    /// `lambda_min` of `M^S_delta(xi / h)`.
    pub navier_min: f64,
    pub collocation_min: f64,
    pub quasi_collocation_min: Option<f64>,
    pub galerkin_min: f64,
    /// `lambda_min(M_G^{-1} M_C)`.
    pub generalized_min: f64,
    pub converged: bool,
    /// Largest relative contribution of a final shell among the lattice sums.
    pub last_shell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSummary {
    pub delta: f64,
    pub h: Vec<f64>,
    pub navier_min: f64,
    pub collocation_min: f64,
    pub quasi_collocation_min: Option<f64>,
    /// `c(delta, h)`.
    pub generalized_min: f64,
    pub points: usize,
    pub nonconverged: usize,
    pub max_last_shell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub lambda_ge_mu: bool,
    pub constants: SymbolConstants,
    pub rows: Vec<ScanRow>,
    pub pairs: Vec<PairSummary>,
}

impl ScanReport {
    /// Every scanned minimum eigenvalue positive.
    pub fn all_positive(&self) -> bool {
        self.pairs.iter().all(|p| {
            p.navier_min > 0.0
                && p.collocation_min > 0.0
                && p.quasi_collocation_min.is_none_or(|v| v > 0.0)
                && p.generalized_min > 0.0
        })
    }

    /// `min c / max c` over the pairs.
    pub fn c_ratio(&self) -> f64 {
        let cs: Vec<f64> = self.pairs.iter().map(|p| p.generalized_min).collect();
        let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = cs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lo / hi
    }
}

/// Positivity scan over wave vectors for every `(delta, h)` pair (2D).
pub fn stability_scan(ctx: &SymbolContext, cfg: &ScanConfig) -> Result<ScanReport, SymbolError> {
    if ctx.kernel.dim() != 2 {
        return Err(SymbolError::Dimension("stability scans are two-dimensional".into()));
    }
    let points = scan_points(cfg.resolution, cfg.radial, cfg.directions);
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for (delta, h) in &cfg.pairs {
        let delta = *delta;
        let h_max = h.iter().cloned().fold(0.0, f64::max);
        let pair_rows: Vec<ScanRow> = points
            .par_iter()
            .map(|xi| -> Result<ScanRow, SymbolError> {
                let scaled = [xi[0] / h[0], xi[1] / h[1]];
                let navier = ctx.navier(&scaled, delta, false)?;
                let g = lattice_symbol(ctx, xi, delta, h, LatticeForm::Galerkin, &cfg.lattice)?;
                let c = lattice_symbol(ctx, xi, delta, h, LatticeForm::Collocation, &cfg.lattice)?;
                let qc = match ctx.quad {
                    Some(_) => Some(lattice_symbol(ctx, xi, delta, h, LatticeForm::QuasiCollocation, &cfg.lattice)?),
                    None => None,
                };
                let generalized = generalized_min_eigenvalue(&c.matrix, &g.matrix).unwrap_or(f64::NAN);
                let last_shell =
                    [&g, &c].iter().map(|s| s.last_shell).chain(qc.iter().map(|s| s.last_shell)).fold(0.0, f64::max);
                Ok(ScanRow {
                    delta,
                    h_max,
                    xi: *xi,
                    navier_min: navier.min_eigenvalue(),
                    collocation_min: c.matrix.min_eigenvalue(),
                    quasi_collocation_min: qc.as_ref().map(|s| s.matrix.min_eigenvalue()),
                    galerkin_min: g.matrix.min_eigenvalue(),
                    generalized_min: generalized,
                    converged: g.converged && c.converged && qc.as_ref().is_none_or(|s| s.converged),
                    last_shell,
                })
            })
            .collect::<Result<_, _>>()?;
        let min_of = |f: &dyn Fn(&ScanRow) -> f64| pair_rows.iter().map(f).fold(f64::INFINITY, f64::min);
        pairs.push(PairSummary {
            delta,
            h: h.clone(),
            navier_min: min_of(&|r| r.navier_min),
            collocation_min: min_of(&|r| r.collocation_min),
            quasi_collocation_min: ctx.quad.as_ref().map(|_| min_of(&|r| r.quasi_collocation_min.unwrap_or(f64::NAN))),
            generalized_min: min_of(&|r| {
                if r.generalized_min.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    r.generalized_min
                }
            }),
            points: pair_rows.len(),
            nonconverged: pair_rows.iter().filter(|r| !r.converged).count(),
            max_last_shell: pair_rows.iter().map(|r| r.last_shell).fold(0.0, f64::max),
        });
        rows.extend(pair_rows);
    }
    Ok(ScanReport {
        lambda_ge_mu: ctx.mat.lambda_ge_mu(),
        constants: SymbolConstants::new(&ctx.mat, ctx.m),
        rows,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::bond_stencil;
    use crate::grid::{build_grid, DomainBox};
    use crate::kernel::Profile;
    use crate::nlops::{BallQuadrature, Integration};
    use crate::quad::{generate_point_set, polar_rule, solve_weights, Symmetry};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn kernel(delta: f64) -> RadialKernel {
        RadialKernel::new(Profile::inverse_distance_2d(), delta, 2).unwrap()
    }

    fn material() -> Material {
        Material::from_young_poisson(1.0, 0.4, 2).unwrap()
    }

    fn quad_set(eps: f64) -> QuadSet {
        let pts = generate_point_set(eps, 2).unwrap();
        solve_weights(&pts, eps, &kernel(1.0), Symmetry::Hyperoctahedral).unwrap()
    }

    fn context() -> &'static SymbolContext {
        static CTX: OnceLock<SymbolContext> = OnceLock::new();
        CTX.get_or_init(|| {
            let r_max = SymbolContext::required_r_max(4.0, 64, 2);
            SymbolContext::new(&kernel(1.0), &material(), Some(quad_set(0.25)), r_max).unwrap()
        })
    }

    #[test]
    fn bessel_branches_agree_with_libm() {
        for z in [0.3, 1.0, 1.9, 1.999_999, 2.0, 2.5, 7.0] {
            let (omj0, j1, j2) = bessel_terms(z);
            assert!((1.0 - omj0 - libm::j0(z)).abs() < 1e-15);
            assert!((j1 - libm::j1(z)).abs() < 1e-15);
            assert!((j2 - libm::jn(2, z)).abs() < 1e-14);
        }
    }

    #[test]
    fn spherical_series_matches_closed_forms() {
        for z in [0.5, 1.5, 2.9] {
            let (a, b, c) = spherical_terms(z);
            let (s, co) = z.sin_cos();
            let (z2, z3) = (z * z, z * z * z);
            assert!((a - (4.0 / 3.0 - 4.0 * (s - z * co) / z3)).abs() < 1e-12);
            assert!((b - (2.0 / 3.0 - (2.0 * s / z + 4.0 * co / z2 - 4.0 * s / z3))).abs() < 1e-12);
            assert!((c - 2.0 * (s - z * co) / z2).abs() < 1e-13);
        }
    }

    #[test]
    fn small_argument_limits() {
        let r = 1e-3;
        let [p, q, b] = scalar_symbols(&kernel(1.0), r, SymbolMode::Continuous).unwrap();
        assert!((p / (r * r) - 1.0 / 16.0).abs() < 1e-7);
        assert!((q / (r * r) - 3.0 / 16.0).abs() < 1e-7);
        assert!((b / r - 0.5).abs() < 1e-7);
        assert_eq!(scalar_symbols(&kernel(1.0), 0.0, SymbolMode::Continuous).unwrap(), [0.0; 3]);
    }

    #[test]
    fn scalar_parity() {
        for r in [0.7, 3.0, 11.0] {
            let a = scalar_symbols(&kernel(1.0), r, SymbolMode::Continuous).unwrap();
            let b = scalar_symbols(&kernel(1.0), -r, SymbolMode::Continuous).unwrap();
            assert_eq!(a[0], b[0]);
            assert_eq!(a[1], b[1]);
            assert_eq!(a[2], -b[2]);
        }
    }

    #[test]
    fn quasi_scalars_approach_continuous() {
        let cont = scalar_symbols(&kernel(1.0), 1.0, SymbolMode::Continuous).unwrap();
        let quasi = scalar_symbols(&kernel(1.0), 1.0, SymbolMode::Quasi(&quad_set(0.125))).unwrap();
        for i in 0..2 {
            assert!((cont[i] - quasi[i]).abs() < 1e-3, "{i}: {} vs {}", cont[i], quasi[i]);
        }
        let errs: Vec<f64> = [0.25, 0.125, 0.0625]
            .iter()
            .map(|&e| {
                let q = scalar_symbols(&kernel(1.0), 1.0, SymbolMode::Quasi(&quad_set(e))).unwrap();
                (0..3).map(|i| (q[i] - cont[i]).abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!((errs[0] / errs[2]).log2() / 2.0 >= 1.0, "{errs:?}");
    }

    #[test]
    fn table_interpolates_to_near_machine_precision() {
        let t = ScalarTable::new(&kernel(1.0), 60.0, 0.125);
        for r in [0.01, 0.3, 5.77, 31.41, 59.0] {
            let a = t.eval(r).unwrap();
            let b = continuous_scalars(&kernel(1.0), r);
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-10, "r = {r}: {a:?} vs {b:?}");
            }
        }
        assert!(t.eval(70.0).is_none());
    }

    #[test]
    fn wave_vector_zero_gives_zero() {
        let s = navier_symbol(&[0.0, 0.0], &kernel(0.25), &material(), 1.0, SymbolMode::Continuous).unwrap();
        assert_eq!(s.frobenius(), 0.0);
        let l = lattice_symbol(
            context(),
            &[0.0, 0.0],
            0.25,
            &[0.125, 0.125],
            LatticeForm::Collocation,
            &LatticeOptions::default(),
        )
        .unwrap();
        assert_eq!(l.matrix.frobenius(), 0.0);
        let near = |t: f64| {
            lattice_symbol(
                context(),
                &[t, 0.5 * t],
                0.25,
                &[0.125, 0.125],
                LatticeForm::Collocation,
                &LatticeOptions::default(),
            )
            .unwrap()
            .matrix
            .frobenius()
        };
        let ratio = near(1e-3) / near(1e-4);
        assert!((ratio - 100.0).abs() < 1e-2, "{ratio}");
    }

    #[test]
    fn three_dimensional_scalars_match_direct_quadrature() {
        let k = RadialKernel::new(Profile::InverseDistance { c: 1.0 }, 0.5, 3).unwrap();
        let mat = Material::new(1.0, 1.0, 3).unwrap();
        let m = k.compute_moments().m;
        for xi in [[3.0, 1.0, -2.0], [0.1, 0.0, 0.2], [9.0, -7.0, 4.0]] {
            let a = navier_symbol(&xi, &k, &mat, m, SymbolMode::Continuous).unwrap();
            let b = bond_symbol_direct(&xi, &k, &mat, m).unwrap();
            let scale = a.frobenius();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a.m[i][j] - b.m[i][j]).abs() <= 1e-9 * scale, "{xi:?}");
                }
            }
        }
    }

    #[test]
    fn local_limit_is_second_order() {
        let mat = material();
        let xi = [1.0, 0.5];
        let mut local = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                local[i][j] = mat.mu * 1.25 * id + (mat.lambda + mat.mu) * xi[i] * xi[j];
            }
        }
        let err = |delta: f64| {
            let s = navier_symbol(&xi, &kernel(delta), &mat, 1.0, SymbolMode::Continuous).unwrap();
            (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (s.m[i][j] - local[i][j]).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(0.4), err(0.2), err(0.1));
        assert!((e2 / e3 - 4.0).abs() < 0.2 && (e1 / e2 - 4.0).abs() < 0.5, "{e1} {e2} {e3}");
        let s = navier_symbol(&[1.0, 0.0], &kernel(1e-3), &mat, 1.0, SymbolMode::Continuous).unwrap();
        let e = s.eigenvalues();
        assert!((e[0] - mat.mu).abs() < 1e-6 && (e[1] - mat.lambda - 2.0 * mat.mu).abs() < 1e-6);
    }

    #[test]
    fn symbols_are_symmetric_and_positive() {
        let set = quad_set(0.25);
        for xi in [[3.0, -1.0], [40.0, 2.0], [-5.5, 12.0]] {
            for mode in [SymbolMode::Continuous, SymbolMode::Quasi(&set)] {
                let s = navier_symbol(&xi, &kernel(0.25), &material(), 1.0, mode).unwrap();
                assert!(s.asymmetry() <= 1e-12 * s.frobenius());
                assert!(s.min_eigenvalue() > 0.0);
            }
        }
    }

    #[test]
    fn collocation_positive_at_quarter_wave() {
        let h = [0.125, 0.0625];
        let opts = LatticeOptions::default();
        for form in [LatticeForm::Collocation, LatticeForm::QuasiCollocation, LatticeForm::Galerkin] {
            let s = lattice_symbol(context(), &[PI / 2.0, PI / 2.0], 0.25, &h, form, &opts).unwrap();
            assert!(s.matrix.min_eigenvalue() > 0.0, "{form:?}");
            assert!(s.matrix.asymmetry() <= 1e-12 * s.matrix.frobenius());
        }
    }

    #[test]
    fn collocation_dominates_scaled_galerkin() {
        let h = [0.125, 0.125];
        let opts = LatticeOptions::default();
        let pts = [[0.3, -2.0], [PI * 0.9, PI * 0.9], [-1.0, 0.01], [2.5, 0.7]];
        let pair = |xi: &[f64; 2]| {
            let g = lattice_symbol(context(), xi, 0.25, &h, LatticeForm::Galerkin, &opts).unwrap().matrix;
            let c = lattice_symbol(context(), xi, 0.25, &h, LatticeForm::Collocation, &opts).unwrap().matrix;
            (g, c)
        };
        let c_min = pts
            .iter()
            .map(|xi| {
                let (g, c) = pair(xi);
                generalized_min_eigenvalue(&c, &g).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(c_min > 0.0);
        for xi in &pts {
            let (g, mut c) = pair(xi);
            for i in 0..2 {
                for j in 0..2 {
                    c.m[i][j] -= 0.5 * c_min * g.m[i][j];
                }
            }
            assert!(c.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn collocation_bond_part_matches_stencil_transform() {
        let h = 0.125;
        let delta = 0.25;
        let mat = Material::new(1.0, 1.0, 2).unwrap();
        let ctx = SymbolContext::new(&kernel(1.0), &mat, None, SymbolContext::required_r_max(2.0, 64, 2)).unwrap();
        let grid = build_grid(&DomainBox::unit_square(), h, &[1.0, 1.0], delta).unwrap();
        let k = kernel(delta);
        let rule = polar_rule(delta, h, 2);
        let ball = BallQuadrature::new(Integration::Continuous(&rule), &k);
        let stencil = bond_stencil(&grid, &ball).unwrap();
        let cb = mat.bond_coefficient(ctx.m);
        for xi in [[0.4, 1.3], [PI / 2.0, -PI / 3.0], [2.9, 2.9]] {
            let mut dtft = [[0.0; 2]; 2];
            for (o, v) in stencil.entries() {
                let c = (o[0] as f64 * xi[0] + o[1] as f64 * xi[1]).cos();
                for i in 0..2 {
                    for j in 0..2 {
                        dtft[i][j] -= h * h * cb * v[i * 2 + j] * c;
                    }
                }
            }
            let s = lattice_symbol(&ctx, &xi, delta, &[h, h], LatticeForm::Collocation, &LatticeOptions::default())
                .unwrap();
            let scale = s.matrix.frobenius();
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (s.matrix.m[i][j] - dtft[i][j]).abs() <= 1e-6 * scale,
                        "{xi:?}: {:?} vs {dtft:?}",
                        s.matrix.m
                    );
                }
            }
        }
    }

    #[test]
    fn factored_phases_match_direct_sum() {
        let set = quad_set(0.25);
        let unit = kernel(1.0);
        let (xi, h, delta) = ([0.7, -2.2], [0.125, 0.0625], 0.25);
        let ph = QuasiPhases::new(&unit, &set, delta, &xi, &h, 5);
        for r in [[0i64, 0], [3, -5], [-5, 1]] {
            let arg: Vec<f64> = (0..2).map(|j| (xi[j] + 2.0 * PI * r[j] as f64) / h[j]).collect();
            let (ma, ba) = ph.parts(&r);
            let (mb, bb) = quasi_parts(&unit, &set, delta, &arg);
            for i in 0..2 {
                assert!((ba[i] - bb[i]).abs() < 1e-11 * (1.0 + bb[i].abs()));
                for j in 0..2 {
                    assert!((ma[i][j] - mb[i][j]).abs() < 1e-11 * (1.0 + mb[i][j].abs()));
                }
            }
        }
    }

    #[test]
    fn reported_constants() {
        let c = SymbolConstants::new(&material(), 1.0);
        let mat = material();
        assert!((c.printed_c_mu - 8.0 * mat.mu).abs() < 1e-15);
        assert!((c.printed_c_lambda_mu - 2.0 * (mat.lambda - mat.mu)).abs() < 1e-15);
        assert!((c.operator_c_mu - 16.0 * mat.mu).abs() < 1e-15);
        assert!((c.operator_c_lambda_mu - 4.0 * (mat.lambda - mat.mu)).abs() < 1e-15);
    }

    #[test]
    fn scan_point_counts() {
        let p = scan_points(33, 64, 8);
        assert_eq!(p.len(), 1088 + 512);
        assert!(p.iter().all(|x| x[0].abs() < PI && x[1].abs() < PI && (x[0] != 0.0 || x[1] != 0.0)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn decomposition_matches_direct_integral(x in -60.0f64..60.0, y in -60.0f64..60.0) {
            prop_assume!(x.hypot(y) > 1e-3);
            let mat = Material::new(1.0, 1.0, 2).unwrap();
            let k = kernel(0.25);
            let a = navier_symbol(&[x, y], &k, &mat, 1.0, SymbolMode::Continuous).unwrap();
            let b = bond_symbol_direct(&[x, y], &k, &mat, 1.0).unwrap();
            let scale = a.frobenius();
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((a.m[i][j] - b.m[i][j]).abs() <= 1e-9 * scale);
                }
            }
        }

        #[test]
        fn symbols_are_even_in_the_wave_vector(x in -30.0f64..30.0, y in -30.0f64..30.0) {
            let set = quad_set(0.25);
            for mode in [SymbolMode::Continuous, SymbolMode::Quasi(&set)] {
                let a = navier_symbol(&[x, y], &kernel(0.25), &material(), 1.0, mode).unwrap();
                let b = navier_symbol(&[-x, -y], &kernel(0.25), &material(), 1.0, mode).unwrap();
                for i in 0..2 {
                    for j in 0..2 {
                        prop_assert!((a.m[i][j] - b.m[i][j]).abs() <= 1e-12 * (1.0 + a.frobenius()));
                    }
                }
            }
        }
    }
}
