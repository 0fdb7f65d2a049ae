//! Cubic B-spline RK shape functions, the quasi-interpolant and the discrete norm.
//!
//! `Psi_k(x) = prod_j phi(|x_j - x_{k_j}| / (2 h_j))` with support `2 h_j` per
//! axis. The quasi-interpolant uses nodal samples as coefficients.

use thiserror::Error;

use crate::gauss::{gauss_legendre, Compensated};
use crate::grid::{GridSpec, Index, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RkError {
    #[error("cubic B-spline argument must be nonnegative (got {0})")]
    NegativeArgument(f64),
    #[error("derivative order {0} exceeds 2")]
    DerivativeOrder(usize),
    #[error("missing coefficient: node {0:?} supporting the evaluation point is not indexed")]
    MissingCoefficient(Vec<i64>),
    #[error("field does not match the grid ({0})")]
    Shape(String),
}

/// Cubic B-spline profile on `[0, inf)`.
pub fn cubic_bspline(t: f64) -> Result<f64, RkError> {
    if t < 0.0 || t.is_nan() {
        return Err(RkError::NegativeArgument(t));
    }
    Ok(phi(t))
}

#[inline]
pub(crate) fn phi(t: f64) -> f64 {
    if t <= 0.5 {
        2.0 / 3.0 - 4.0 * t * t + 4.0 * t * t * t
    } else if t < 1.0 {
        let u = 1.0 - t;
        4.0 / 3.0 * u * u * u
    } else {
        0.0
    }
}

#[inline]
fn phi_d1(t: f64) -> f64 {
    if t <= 0.5 {
        -8.0 * t + 12.0 * t * t
    } else if t < 1.0 {
        let u = 1.0 - t;
        -4.0 * u * u
    } else {
        0.0
    }
}

#[inline]
fn phi_d2(t: f64) -> f64 {
    if t <= 0.5 {
        -8.0 + 24.0 * t
    } else if t < 1.0 {
        8.0 * (1.0 - t)
    } else {
        0.0
    }
}

/// Order-`order` derivative of the 1D factor `phi(|y| / (2h))` with respect to `y`.
#[inline]
pub(crate) fn factor(y: f64, h: f64, order: u8) -> f64 {
    let t = y.abs() / (2.0 * h);
    match order {
        0 => phi(t),
        1 => {
            let s = if y < 0.0 { -1.0 } else { 1.0 };
            phi_d1(t) * s / (2.0 * h)
        }
        _ => phi_d2(t) / (4.0 * h * h),
    }
}

/// Values of the four 1D factors whose support contains `x` along `axis`.
/// Returns the first node index and the factors for nodes `k0..k0+4`.
#[inline]
pub(crate) fn axis_factors(grid: &GridSpec, axis: usize, x: f64, order: u8) -> (i64, [f64; 4]) {
    let h = grid.spacing()[axis];
    let k0 = grid.cell_of(axis, x) - 1;
    let mut w = [0.0; 4];
    for (i, wi) in w.iter_mut().enumerate() {
        let y = x - grid.coord_axis(axis, k0 + i as i64);
        *wi = factor(y, h, order);
    }
    (k0, w)
}

fn check_derivative(grid: &GridSpec, deriv: &[u8]) -> Result<[u8; MAX_DIM], RkError> {
    if deriv.len() != grid.dim() {
        return Err(RkError::Shape(format!("derivative multi-index has {} entries", deriv.len())));
    }
    let order: usize = deriv.iter().map(|&a| a as usize).sum();
    if order > 2 {
        return Err(RkError::DerivativeOrder(order));
    }
    let mut out = [0u8; MAX_DIM];
    out[..deriv.len()].copy_from_slice(deriv);
    Ok(out)
}

/// Shape function `D^alpha Psi_k(x)` with `|alpha| <= 2`.
pub fn shape_value(grid: &GridSpec, k: &Index, x: &[f64], deriv: &[u8]) -> Result<f64, RkError> {
    let deriv = check_derivative(grid, deriv)?;
    let mut v = 1.0;
    for j in 0..grid.dim() {
        let y = x[j] - grid.coord_axis(j, k[j]);
        v *= factor(y, grid.spacing()[j], deriv[j]);
    }
    Ok(v)
}

/// Vector of nodal coefficients over every indexed node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    ncomp: usize,
    data: Vec<f64>,
}

impl NodalField {
    pub fn zeros(grid: &GridSpec, ncomp: usize) -> Self {
        Self { ncomp, data: vec![0.0; grid.n_nodes() * ncomp] }
    }

    /// Samples `f` at every node (the restriction `r^h f`).
    pub fn from_fn(grid: &GridSpec, ncomp: usize, f: impl Fn(&[f64]) -> [f64; MAX_DIM]) -> Self {
        let mut out = Self::zeros(grid, ncomp);
        for (lin, k) in grid.indices().enumerate() {
            let x = grid.coord(&k);
            let v = f(&x[..grid.dim()]);
            out.data[lin * ncomp..(lin + 1) * ncomp].copy_from_slice(&v[..ncomp]);
        }
        out
    }

    pub fn from_vec(grid: &GridSpec, ncomp: usize, data: Vec<f64>) -> Result<Self, RkError> {
        if data.len() != grid.n_nodes() * ncomp {
            return Err(RkError::Shape(format!("expected {} values, got {}", grid.n_nodes() * ncomp, data.len())));
        }
        Ok(Self { ncomp, data })
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn n_nodes(&self) -> usize {
        self.data.len() / self.ncomp
    }

    #[inline]
    pub fn get(&self, lin: usize, c: usize) -> f64 {
        self.data[lin * self.ncomp + c]
    }

    #[inline]
    pub fn set(&mut self, lin: usize, c: usize, v: f64) {
        self.data[lin * self.ncomp + c] = v;
    }

    pub fn node(&self, lin: usize) -> &[f64] {
        &self.data[lin * self.ncomp..(lin + 1) * self.ncomp]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { ncomp: self.ncomp, data: self.data.iter().map(|v| v * c).collect() }
    }

    fn check(&self, grid: &GridSpec) -> Result<(), RkError> {
        if self.data.len() != grid.n_nodes() * self.ncomp {
            return Err(RkError::Shape("field length does not match grid".into()));
        }
        Ok(())
    }
}

/// Sums `D^alpha Psi_k(x) u_k` into `out`; nodes outside the indexed range
/// either raise an error or count as zero.
pub(crate) fn interpolate_into(
    grid: &GridSpec,
    field: &NodalField,
    x: &[f64],
    deriv: &[u8; MAX_DIM],
    zero_outside: bool,
    out: &mut [f64],
) -> Result<(), RkError> {
    let d = grid.dim();
    let nc = field.ncomp;
    out[..nc].iter_mut().for_each(|v| *v = 0.0);
    let mut k0 = [0i64; MAX_DIM];
    let mut w = [[1.0; 4]; MAX_DIM];
    for j in 0..d {
        let (a, f) = axis_factors(grid, j, x[j], deriv[j]);
        k0[j] = a;
        w[j] = f;
    }
    let span = |j: usize| if j < d { 4 } else { 1 };
    for i0 in 0..span(0) {
        for i1 in 0..span(1) {
            for i2 in 0..span(2) {
                let wt = w[0][i0] * if d > 1 { w[1][i1] } else { 1.0 } * if d > 2 { w[2][i2] } else { 1.0 };
                if wt == 0.0 {
                    continue;
                }
                let k = [k0[0] + i0 as i64, k0[1] + i1 as i64, k0[2] + i2 as i64];
                let mut kk = [0i64; MAX_DIM];
                kk[..d].copy_from_slice(&k[..d]);
                match grid.linear_index(&kk) {
                    Some(lin) => {
                        for c in 0..nc {
                            out[c] += wt * field.data[lin * nc + c];
                        }
                    }
                    None if zero_outside => {}
                    None => return Err(RkError::MissingCoefficient(kk[..d].to_vec())),
                }
            }
        }
    }
    Ok(())
}

/// `D^alpha (sum_k Psi_k u_k)(x)`, one entry per field component.
pub fn quasi_interpolant(grid: &GridSpec, field: &NodalField, x: &[f64], deriv: &[u8]) -> Result<Vec<f64>, RkError> {
    field.check(grid)?;
    let deriv = check_derivative(grid, deriv)?;
    let mut out = vec![0.0; field.ncomp];
    interpolate_into(grid, field, x, &deriv, false, &mut out)?;
    Ok(out)
}

/// Visits every Gauss point (4 per axis) of every cell in the inclusive cell
/// range `[c_lo, c_hi]`, clipped to `[a, b]` per axis when given.
pub(crate) fn for_each_cell_point(
    grid: &GridSpec,
    c_lo: &Index,
    c_hi: &Index,
    clip: Option<(&[f64], &[f64])>,
    mut visit: impl FnMut(&[f64; MAX_DIM], f64),
) {
    let d = grid.dim();
    let (gx, gw) = gauss_legendre(4);
    let mut c = *c_lo;
    loop {
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        let mut empty = false;
        for j in 0..d {
            lo[j] = grid.coord_axis(j, c[j]);
            hi[j] = grid.coord_axis(j, c[j] + 1);
            if let Some((a, b)) = clip {
                lo[j] = lo[j].max(a[j]);
                hi[j] = hi[j].min(b[j]);
            }
            empty |= hi[j] <= lo[j];
        }
        if !empty {
            let npts = 4usize.pow(d as u32);
            for p in 0..npts {
                let mut x = [0.0; MAX_DIM];
                let mut wt = 1.0;
                let mut rem = p;
                for j in 0..d {
                    let q = rem % 4;
                    rem /= 4;
                    let half = 0.5 * (hi[j] - lo[j]);
                    x[j] = 0.5 * (lo[j] + hi[j]) + half * gx[q];
                    wt *= half * gw[q];
                }
                visit(&x, wt);
            }
        }
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if c[axis] < c_hi[axis] {
                c[axis] += 1;
                break;
            }
            c[axis] = c_lo[axis];
        }
    }
}

/// Discrete norm `|u|_h = || i^h u ||_{L^2}` with zero extension beyond the indexed nodes.
pub fn norm_h(grid: &GridSpec, field: &NodalField) -> f64 {
    let d = grid.dim();
    let nc = field.ncomp;
    let mut lo = [i64::MAX; MAX_DIM];
    let mut hi = [i64::MIN; MAX_DIM];
    let mut any = false;
    for lin in 0..field.n_nodes() {
        if field.node(lin).iter().any(|&v| v != 0.0) {
            any = true;
            let k = grid.multi_index(lin);
            for j in 0..d {
                lo[j] = lo[j].min(k[j]);
                hi[j] = hi[j].max(k[j]);
            }
        }
    }
    if !any {
        return 0.0;
    }
    for j in 0..d {
        lo[j] -= 2;
        hi[j] += 1;
    }
    for j in d..MAX_DIM {
        lo[j] = 0;
        hi[j] = 0;
    }
    let zero = [0u8; MAX_DIM];
    let mut acc = Compensated::default();
    let mut buf = vec![0.0; nc];
    for_each_cell_point(grid, &lo, &hi, None, |x, w| {
        interpolate_into(grid, field, &x[..d], &zero, true, &mut buf).expect("zero extension never fails");
        acc.add(w * buf.iter().map(|v| v * v).sum::<f64>());
    });
    acc.value().max(0.0).sqrt()
}
