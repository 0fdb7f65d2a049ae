//! Rectilinear Cartesian grids over a box domain and its interaction layer.
//!
//! Node `k` sits at `lower + k * h` (one multiply and one add per axis), so
//! coordinates never accumulate rounding. The indexed region covers the
//! domain, the `2 delta` interaction layer and an extra `4 h_max` margin that
//! the composed gradient/divergence stencils reach into.

use thiserror::Error;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Multi-index of a grid node; unused trailing axes are zero.
pub type Index = [i64; MAX_DIM];

/// Point in space; unused trailing axes are zero.
pub type Point = [f64; MAX_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("degenerate domain: extent along axis {axis} is not positive")]
    DegenerateDomain { axis: usize },
    #[error("dimension must be 1, 2 or 3 and consistent across inputs (got {0})")]
    Dimension(usize),
    #[error("invalid spacing: {0}")]
    InvalidSpacing(String),
    #[error("invalid horizon {0}")]
    InvalidHorizon(f64),
    #[error("margin exceeds layer: delta = {delta} < h_max/2 = {half}")]
    MarginExceedsLayer { delta: f64, half: f64 },
    #[error("index {index:?} outside the indexed range")]
    OutOfRange { index: Vec<i64> },
}

/// Axis-aligned open box `(lower, upper)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    d: usize,
    lower: Point,
    upper: Point,
}

impl DomainBox {
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self, GridError> {
        let d = lower.len();
        if d == 0 || d > MAX_DIM || upper.len() != d {
            return Err(GridError::Dimension(d));
        }
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for j in 0..d {
            if !(upper[j] - lower[j] > 0.0) || !lower[j].is_finite() || !upper[j].is_finite() {
                return Err(GridError::DegenerateDomain { axis: j });
            }
            lo[j] = lower[j];
            hi[j] = upper[j];
        }
        Ok(Self { d, lower: lo, upper: hi })
    }

    /// The unit square `(0,1)^2`.
    pub fn unit_square() -> Self {
        Self::new(&[0.0, 0.0], &[1.0, 1.0]).expect("unit square is valid")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.d]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.d]
    }

    /// Euclidean distance from `x` to the closed box.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.d {
            let e = (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0);
            acc += e * e;
        }
        acc.sqrt()
    }
}

/// Class of a grid node with respect to the collocation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeClass {
    /// Strictly inside the domain; carries unknown coefficients.
    Unknown,
    /// On the boundary or outside; carries prescribed coefficients.
    /// `auxiliary` marks nodes within `delta + 2 h_max` of the domain, where
    /// the nonlocal divergence is evaluated for the state term.
    Constrained { auxiliary: bool },
}

/// Construction switches for [`build_grid_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GridOptions {
    /// Accept `delta < h_max / 2`. Every node outside the domain then carries
    /// prescribed data out to the full evaluation margin.
    pub allow_thin_layer: bool,
}

/// Immutable grid description.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    domain: DomainBox,
    d: usize,
    h: Point,
    h_hat: Point,
    h_max: f64,
    delta: f64,
    lo: Index,
    hi: Index,
    tol: f64,
}

/// Builds a grid with default options.
pub fn build_grid(domain: &DomainBox, h_max: f64, h_hat: &[f64], delta: f64) -> Result<GridSpec, GridError> {
    build_grid_with(domain, h_max, h_hat, delta, GridOptions::default())
}

pub fn build_grid_with(
    domain: &DomainBox,
    h_max: f64,
    h_hat: &[f64],
    delta: f64,
    options: GridOptions,
) -> Result<GridSpec, GridError> {
    let d = domain.dim();
    if h_hat.len() != d {
        return Err(GridError::Dimension(h_hat.len()));
    }
    if !(h_max > 0.0) || !h_max.is_finite() {
        return Err(GridError::InvalidSpacing(format!("h_max = {h_max} must be positive")));
    }
    let hmax_hat = h_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let hmin_hat = h_hat.iter().cloned().fold(f64::INFINITY, f64::min);
    if (hmax_hat - 1.0).abs() > 1e-14 || !(hmin_hat > 0.0) {
        return Err(GridError::InvalidSpacing(format!(
            "h_hat = {h_hat:?} must have max component 1 and positive entries"
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(GridError::InvalidHorizon(delta));
    }
    if delta < 0.5 * h_max && !options.allow_thin_layer {
        return Err(GridError::MarginExceedsLayer { delta, half: 0.5 * h_max });
    }
    let margin = 2.0 * delta + 4.0 * h_max;
    let mut h = [0.0; MAX_DIM];
    let mut hh = [0.0; MAX_DIM];
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    let mut extent_max: f64 = 0.0;
    for j in 0..d {
        h[j] = h_max * h_hat[j];
        hh[j] = h_hat[j];
        let extent = domain.upper[j] - domain.lower[j];
        extent_max = extent_max.max(extent);
        lo[j] = -((margin / h[j]) * (1.0 - 1e-12)).ceil() as i64;
        hi[j] = (((extent + margin) / h[j]) * (1.0 + 1e-12)).ceil() as i64;
    }
    Ok(GridSpec { domain: domain.clone(), d, h, h_hat: hh, h_max, delta, lo, hi, tol: 1e-12 * extent_max })
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_min(&self) -> f64 {
        self.spacing().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn h_hat(&self) -> &[f64] {
        &self.h_hat[..self.d]
    }

    /// Per-axis spacing `h = h_max * h_hat`.
    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.d]
    }

    /// Inclusive index range along `axis`.
    pub fn index_range(&self, axis: usize) -> (i64, i64) {
        (self.lo[axis], self.hi[axis])
    }

    /// Number of indexed nodes along `axis`.
    pub fn axis_len(&self, axis: usize) -> usize {
        if axis >= self.d {
            1
        } else {
            (self.hi[axis] - self.lo[axis] + 1) as usize
        }
    }

    pub fn n_nodes(&self) -> usize {
        (0..self.d).map(|j| self.axis_len(j)).product()
    }

    /// Coordinate of index `k` along `axis`.
    #[inline]
    pub fn coord_axis(&self, axis: usize, k: i64) -> f64 {
        self.domain.lower[axis] + k as f64 * self.h[axis]
    }

    #[inline]
    pub fn coord(&self, k: &Index) -> Point {
        let mut x = [0.0; MAX_DIM];
        for j in 0..self.d {
            x[j] = self.coord_axis(j, k[j]);
        }
        x
    }

    #[inline]
    pub fn in_range(&self, k: &Index) -> bool {
        (0..self.d).all(|j| k[j] >= self.lo[j] && k[j] <= self.hi[j])
    }

    /// Row-major (last axis fastest) position of `k` in the indexed box.
    #[inline]
    pub fn linear_index(&self, k: &Index) -> Option<usize> {
        if !self.in_range(k) {
            return None;
        }
        let mut lin = 0usize;
        for j in 0..self.d {
            lin = lin * self.axis_len(j) + (k[j] - self.lo[j]) as usize;
        }
        Some(lin)
    }

    pub fn multi_index(&self, mut lin: usize) -> Index {
        let mut k = [0i64; MAX_DIM];
        for j in (0..self.d).rev() {
            let n = self.axis_len(j);
            k[j] = (lin % n) as i64 + self.lo[j];
            lin /= n;
        }
        k
    }

    /// All indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Index> + '_ {
        (0..self.n_nodes()).map(move |l| self.multi_index(l))
    }

    /// True when `x` lies strictly inside the domain (boundary ties go to the constraint).
    pub fn is_interior_point(&self, x: &[f64]) -> bool {
        (0..self.d).all(|j| x[j] > self.domain.lower[j] + self.tol && x[j] < self.domain.upper[j] - self.tol)
    }

    pub fn classify_node(&self, k: &Index) -> Result<NodeClass, GridError> {
        if !self.in_range(k) {
            return Err(GridError::OutOfRange { index: k[..self.d].to_vec() });
        }
        let x = self.coord(k);
        if self.is_interior_point(&x) {
            return Ok(NodeClass::Unknown);
        }
        let dist = self.domain.distance(&x[..self.d]);
        let auxiliary = dist <= self.delta + 2.0 * self.h_max + self.tol;
        Ok(NodeClass::Constrained { auxiliary })
    }

    /// Unknown nodes in row-major order.
    pub fn unknown_nodes(&self) -> Vec<Index> {
        self.indices().filter(|k| self.is_interior_point(&self.coord(k)[..self.d])).collect()
    }

    /// Indices with `|x_k - x| <= r`, in row-major order.
    pub fn nodes_in_ball(&self, x: &[f64], r: f64) -> Vec<Index> {
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for j in 0..self.d {
            let a = ((x[j] - r - self.domain.lower[j]) / self.h[j]).floor() as i64;
            let b = ((x[j] + r - self.domain.lower[j]) / self.h[j]).ceil() as i64;
            lo[j] = a.max(self.lo[j]);
            hi[j] = b.min(self.hi[j]);
            if lo[j] > hi[j] {
                return Vec::new();
            }
        }
        let mut out = Vec::new();
        let mut k = lo;
        loop {
            let y = self.coord(&k);
            let dist2: f64 = (0..self.d).map(|j| (y[j] - x[j]) * (y[j] - x[j])).sum();
            if dist2 <= r * r {
                out.push(k);
            }
            let mut axis = self.d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if k[axis] < hi[axis] {
                    k[axis] += 1;
                    break;
                }
                k[axis] = lo[axis];
            }
        }
    }

    /// Bounds of the interaction region `Omega + 2 delta` per axis.
    pub fn interaction_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.d)
            .map(|j| (self.domain.lower[j] - 2.0 * self.delta, self.domain.upper[j] + 2.0 * self.delta))
            .collect()
    }

    /// Bounds of the indexed region per axis.
    pub fn indexed_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.d).map(|j| (self.coord_axis(j, self.lo[j]), self.coord_axis(j, self.hi[j]))).collect()
    }

    /// Index of the cell `[x_k, x_{k+1})` containing coordinate `x` along `axis`.
    #[inline]
    pub(crate) fn cell_of(&self, axis: usize, x: f64) -> i64 {
        ((x - self.domain.lower[axis]) / self.h[axis]).floor() as i64
    }
}
