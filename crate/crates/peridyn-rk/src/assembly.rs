//! Collocation systems for the state-based Navier operator on uniform grids.
//!
//! On a grid with constant spacing the discrete operator is translation
//! invariant in node offsets, so every row is generated from one stencil.
//! The bond part and the nonlocal gradient are obtained by scattering each
//! ball quadrature node into the sixteen (2D) or sixty-four (3D) basis
//! functions that are nonzero there. The state part is the composition
//! `G D`, formed as a discrete convolution of the gradient stencil with
//! itself.
//!
//! Systems are solved by sparse LU when the matrix is small enough, and by
//! restarted GMRES with an FFT-based matrix-vector product otherwise.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::gauss::Compensated;
use crate::grid::{GridSpec, Index, Point, MAX_DIM};
use crate::kernel::RadialKernel;
use crate::nlops::{BallQuadrature, Integration, Material, VectorFn};
use crate::rkbasis::{factor, for_each_cell_point, interpolate_into, NodalField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("horizon {kernel} exceeds the grid horizon {grid}")]
    Horizon { kernel: f64, grid: f64 },
    #[error("stencil reaches node {0:?} outside the indexed range")]
    Coverage(Vec<i64>),
    #[error("the system has no unknowns")]
    Empty,
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("iterative solver stagnated after {iterations} iterations at relative residual {residual:e}")]
    Stagnation { iterations: usize, residual: f64 },
    #[error("unknown nodes do not form a box; the FFT operator is unavailable")]
    NotABox,
}

/// Translation-invariant stencil with `ncomp` values per node offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    d: usize,
    ncomp: usize,
    reach: Index,
    values: Vec<f64>,
}

impl Stencil {
    fn zeros(d: usize, ncomp: usize, reach: Index) -> Self {
        let len: usize = (0..d).map(|j| (2 * reach[j] + 1) as usize).product();
        Self { d, ncomp, reach, values: vec![0.0; len * ncomp] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    /// Largest offset magnitude per axis.
    pub fn reach(&self) -> &[i64] {
        &self.reach[..self.d]
    }

    fn slot(&self, o: &[i64]) -> Option<usize> {
        let mut s = 0usize;
        for j in 0..self.d {
            if o[j].abs() > self.reach[j] {
                return None;
            }
            s = s * (2 * self.reach[j] + 1) as usize + (o[j] + self.reach[j]) as usize;
        }
        Some(s)
    }

    fn offset_of(&self, mut slot: usize) -> Index {
        let mut o = [0i64; MAX_DIM];
        for j in (0..self.d).rev() {
            let n = (2 * self.reach[j] + 1) as usize;
            o[j] = (slot % n) as i64 - self.reach[j];
            slot /= n;
        }
        o
    }

    /// Values at offset `o`, `None` beyond the reach.
    pub fn get(&self, o: &[i64]) -> Option<&[f64]> {
        self.slot(o).map(|s| &self.values[s * self.ncomp..(s + 1) * self.ncomp])
    }

    /// Offsets carrying at least one nonzero value, in lexicographic order.
    pub fn entries(&self) -> impl Iterator<Item = (Index, &[f64])> + '_ {
        self.values
            .chunks(self.ncomp)
            .enumerate()
            .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
            .map(|(s, v)| (self.offset_of(s), v))
    }

    /// Sum of the values over all offsets.
    pub fn total(&self) -> Vec<f64> {
        let mut acc = vec![Compensated::default(); self.ncomp];
        for v in self.values.chunks(self.ncomp) {
            for (a, x) in acc.iter_mut().zip(v) {
                a.add(*x);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    }

    fn trimmed(self) -> Self {
        let mut reach = [0i64; MAX_DIM];
        for (o, _) in self.entries() {
            for j in 0..self.d {
                reach[j] = reach[j].max(o[j].abs());
            }
        }
        let mut out = Stencil::zeros(self.d, self.ncomp, reach);
        for (o, v) in self.entries() {
            let s = out.slot(&o).expect("inside trimmed reach");
            out.values[s * self.ncomp..(s + 1) * self.ncomp].copy_from_slice(v);
        }
        out
    }
}

fn check_dims(grid: &GridSpec, ball: &BallQuadrature) -> Result<usize, AssemblyError> {
    let d = grid.dim();
    if ball.dim() != d {
        return Err(AssemblyError::Dimension(format!("grid d = {d} but ball d = {}", ball.dim())));
    }
    Ok(d)
}

/// `sum_q psi_o(s_q) v_q - psi_o(0) sum_q v_q` for per-node vectors `v_q`.
fn scatter(grid: &GridSpec, ball: &BallQuadrature, ncomp: usize, value: impl Fn(&Point, f64, &mut [f64])) -> Stencil {
    let d = grid.dim();
    let h = grid.spacing();
    let mut reach = [0i64; MAX_DIM];
    for j in 0..d {
        reach[j] = (ball.delta() / h[j]).ceil() as i64 + 2;
    }
    let mut st = Stencil::zeros(d, ncomp, reach);
    let mut acc = vec![Compensated::default(); st.values.len()];
    let mut origin = [[0.0; 3]; MAX_DIM];
    for (j, row) in origin.iter_mut().enumerate().take(d) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = factor((i as f64 - 1.0) * h[j], h[j], 0);
        }
    }
    let mut vals = vec![0.0; ncomp];
    let span = |j: usize, n: usize| if j < d { n } else { 1 };
    for (s, w) in ball.nodes() {
        value(s, *w, &mut vals);
        let mut base = [0i64; MAX_DIM];
        let mut f = [[1.0; 4]; MAX_DIM];
        for j in 0..d {
            base[j] = (s[j] / h[j]).floor() as i64 - 1;
            for (i, fi) in f[j].iter_mut().enumerate() {
                *fi = factor(s[j] - (base[j] + i as i64) as f64 * h[j], h[j], 0);
            }
        }
        for a in 0..span(0, 4) {
            for b in 0..span(1, 4) {
                for c in 0..span(2, 4) {
                    let psi = f[0][a] * f[1][b] * f[2][c];
                    if psi == 0.0 {
                        continue;
                    }
                    let o = [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64];
                    let slot = st.slot(&o).expect("scatter stays within the horizon reach");
                    for (k, v) in vals.iter().enumerate() {
                        acc[slot * ncomp + k].add(psi * v);
                    }
                }
            }
        }
        for a in 0..span(0, 3) {
            for b in 0..span(1, 3) {
                for c in 0..span(2, 3) {
                    let psi =
                        origin[0][a] * if d > 1 { origin[1][b] } else { 1.0 } * if d > 2 { origin[2][c] } else { 1.0 };
                    let o = [a as i64 - 1, b as i64 - 1, c as i64 - 1];
                    let slot = st.slot(&o).expect("origin offsets lie within reach");
                    for (k, v) in vals.iter().enumerate() {
                        acc[slot * ncomp + k].add(-psi * v);
                    }
                }
            }
        }
    }
    for (v, a) in st.values.iter_mut().zip(&acc) {
        *v = a.value();
    }
    st.trimmed()
}

/// Bond stencil `B(o) = sum_q W_q (s s^T / |s|^2) (Psi_o(s_q) - Psi_o(0))`, row-major `d x d` blocks.
pub fn bond_stencil(grid: &GridSpec, ball: &BallQuadrature) -> Result<Stencil, AssemblyError> {
    let d = check_dims(grid, ball)?;
    Ok(scatter(grid, ball, d * d, |s, w, out| {
        let r2: f64 = s[..d].iter().map(|v| v * v).sum();
        for i in 0..d {
            for c in 0..d {
                out[i * d + c] = w * s[i] * s[c] / r2;
            }
        }
    }))
}

/// Gradient stencil `g(o) = sum_q W_q s_q (Psi_o(s_q) - Psi_o(0))`.
///
/// Row `(j, i)` of the factor `G` is `g_i(k - j)`; row `k` of `D` is `g_c(k' - k)`.
pub fn gradient_stencil(grid: &GridSpec, ball: &BallQuadrature) -> Result<Stencil, AssemblyError> {
    let d = check_dims(grid, ball)?;
    Ok(scatter(grid, ball, d, |s, w, out| {
        for i in 0..d {
            out[i] = w * s[i];
        }
    }))
}

/// `S_ic(o) = sum_{o1} g_i(o1) g_c(o - o1)`, the stencil of `G D`.
pub fn compose_state(g: &Stencil) -> Stencil {
    let d = g.d;
    let mut reach = [0i64; MAX_DIM];
    for j in 0..d {
        reach[j] = 2 * g.reach[j];
    }
    let mut st = Stencil::zeros(d, d * d, reach);
    let mut acc = vec![Compensated::default(); st.values.len()];
    let entries: Vec<(Index, &[f64])> = g.entries().collect();
    for (o1, g1) in &entries {
        for (o2, g2) in &entries {
            let o = [o1[0] + o2[0], o1[1] + o2[1], o1[2] + o2[2]];
            let slot = st.slot(&o).expect("sum of offsets within doubled reach");
            for i in 0..d {
                for c in 0..d {
                    acc[slot * d * d + i * d + c].add(g1[i] * g2[c]);
                }
            }
        }
    }
    for (v, a) in st.values.iter_mut().zip(&acc) {
        *v = a.value();
    }
    st.trimmed()
}

/// Stencil of `-L^S` on the trial space: `-(cb B + cs S)`.
pub fn operator_stencil(
    grid: &GridSpec,
    ball: &BallQuadrature,
    mat: &Material,
    m: f64,
) -> Result<Stencil, AssemblyError> {
    let d = check_dims(grid, ball)?;
    if mat.d != d {
        return Err(AssemblyError::Dimension(format!("material d = {} but grid d = {d}", mat.d)));
    }
    let bond = bond_stencil(grid, ball)?;
    let state = compose_state(&gradient_stencil(grid, ball)?);
    let (cb, cs) = (mat.bond_coefficient(m), mat.state_coefficient(m));
    let mut reach = [0i64; MAX_DIM];
    for j in 0..d {
        reach[j] = bond.reach[j].max(state.reach[j]);
    }
    let mut out = Stencil::zeros(d, d * d, reach);
    for (src, coef) in [(&bond, cb), (&state, cs)] {
        for (o, v) in src.entries() {
            let s = out.slot(&o).expect("within combined reach");
            for (k, x) in v.iter().enumerate() {
                out.values[s * d * d + k] -= coef * x;
            }
        }
    }
    Ok(out.trimmed())
}

/// Collocation system over the scalar unknowns `(node, component)`.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    grid: GridSpec,
    stencil: Stencil,
    /// Stencil entries as (linear offset, values).
    taps: Vec<(isize, Vec<f64>)>,
    unknown: Vec<usize>,
    row_of_node: Vec<usize>,
    rhs: Vec<f64>,
    prescribed: NodalField,
    box_n: [usize; MAX_DIM],
    is_box: bool,
}

const NOT_UNKNOWN: usize = usize::MAX;

/// Assembles `-L^S (Pi^h u)(x_j) = f(x_j)` at every Unknown node, with the
/// nodal coefficients of all other nodes fixed to `boundary(x_k)`.
pub fn assemble(
    grid: &GridSpec,
    kernel: &RadialKernel,
    mat: &Material,
    integration: Integration<'_>,
    boundary: VectorFn<'_>,
    rhs: VectorFn<'_>,
) -> Result<SparseSystem, AssemblyError> {
    let d = grid.dim();
    if kernel.dim() != d {
        return Err(AssemblyError::Dimension(format!("kernel d = {} but grid d = {d}", kernel.dim())));
    }
    if kernel.delta() > grid.delta() * (1.0 + 1e-12) {
        return Err(AssemblyError::Horizon { kernel: kernel.delta(), grid: grid.delta() });
    }
    let ball = BallQuadrature::new(integration, kernel);
    let m = kernel.compute_moments().m;
    let stencil = operator_stencil(grid, &ball, mat, m)?;
    SparseSystem::from_stencil(grid, stencil, boundary, rhs)
}

impl SparseSystem {
    /// System for an arbitrary operator stencil with `d x d` blocks.
    pub fn from_stencil(
        grid: &GridSpec,
        stencil: Stencil,
        boundary: VectorFn<'_>,
        rhs: VectorFn<'_>,
    ) -> Result<Self, AssemblyError> {
        let d = grid.dim();
        if stencil.d != d || stencil.ncomp != d * d {
            return Err(AssemblyError::Dimension("stencil does not carry d x d blocks".into()));
        }
        let unknown_idx = grid.unknown_nodes();
        if unknown_idx.is_empty() {
            return Err(AssemblyError::Empty);
        }
        let mut box_lo = [0i64; MAX_DIM];
        let mut box_hi = [0i64; MAX_DIM];
        for j in 0..d {
            box_lo[j] = unknown_idx.iter().map(|k| k[j]).min().expect("nonempty");
            box_hi[j] = unknown_idx.iter().map(|k| k[j]).max().expect("nonempty");
            let (lo, hi) = grid.index_range(j);
            for (edge, dir) in [(box_lo[j], -1), (box_hi[j], 1)] {
                let far = edge + dir * stencil.reach[j];
                if far < lo || far > hi {
                    let mut k = box_lo;
                    k[j] = far;
                    return Err(AssemblyError::Coverage(k[..d].to_vec()));
                }
            }
        }
        let mut box_n = [1usize; MAX_DIM];
        for j in 0..d {
            box_n[j] = (box_hi[j] - box_lo[j] + 1) as usize;
        }
        let is_box = box_n.iter().product::<usize>() == unknown_idx.len();

        let mut stride = [0isize; MAX_DIM];
        let mut acc = 1isize;
        for j in (0..d).rev() {
            stride[j] = acc;
            acc *= grid.axis_len(j) as isize;
        }
        let taps: Vec<(isize, Vec<f64>)> =
            stencil.entries().map(|(o, v)| ((0..d).map(|j| o[j] as isize * stride[j]).sum(), v.to_vec())).collect();

        let unknown: Vec<usize> = unknown_idx.iter().map(|k| grid.linear_index(k).expect("in range")).collect();
        let mut row_of_node = vec![NOT_UNKNOWN; grid.n_nodes()];
        for (p, &lin) in unknown.iter().enumerate() {
            row_of_node[lin] = p;
        }
        let mut prescribed = NodalField::zeros(grid, d);
        for (lin, k) in grid.indices().enumerate() {
            if row_of_node[lin] == NOT_UNKNOWN {
                let v = boundary(&grid.coord(&k)[..d]);
                for c in 0..d {
                    prescribed.set(lin, c, v[c]);
                }
            }
        }

        let mut sys = Self {
            grid: grid.clone(),
            stencil,
            taps,
            unknown,
            row_of_node,
            rhs: Vec::new(),
            prescribed,
            box_n,
            is_box,
        };
        let rows: Vec<[f64; MAX_DIM]> = sys
            .unknown
            .par_iter()
            .map(|&lin| {
                let x = sys.grid.coord(&sys.grid.multi_index(lin));
                let f = rhs(&x[..d]);
                let mut out = [Compensated::default(); MAX_DIM];
                for c in 0..d {
                    out[c].add(f[c]);
                }
                for (off, v) in &sys.taps {
                    let nb = (lin as isize + off) as usize;
                    if sys.row_of_node[nb] != NOT_UNKNOWN {
                        continue;
                    }
                    let u = sys.prescribed.node(nb);
                    for i in 0..d {
                        for c in 0..d {
                            out[i].add(-v[i * d + c] * u[c]);
                        }
                    }
                }
                out.map(|a| a.value())
            })
            .collect();
        sys.rhs = rows.iter().flat_map(|r| r[..d].to_vec()).collect();
        Ok(sys)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    pub fn n_dofs(&self) -> usize {
        self.unknown.len() * self.grid.dim()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Grid linear index of the node behind each row block.
    pub fn unknown_nodes(&self) -> &[usize] {
        &self.unknown
    }

    /// Row of `(node, component)`, `None` for constrained nodes.
    pub fn dof(&self, node: usize, component: usize) -> Option<usize> {
        match self.row_of_node.get(node) {
            Some(&p) if p != NOT_UNKNOWN && component < self.grid.dim() => Some(p * self.grid.dim() + component),
            _ => None,
        }
    }

    /// Prescribed coefficients; zero at Unknown nodes.
    pub fn prescribed(&self) -> &NodalField {
        &self.prescribed
    }

    /// Upper bound on the number of stored entries.
    pub fn nnz_estimate(&self) -> usize {
        let d = self.grid.dim();
        self.unknown.len() * self.taps.len() * d * d
    }

    /// Matrix entries `(row, col, value)` in row-major order, explicit zeros dropped.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let d = self.grid.dim();
        let per_row: Vec<Vec<(usize, usize, f64)>> = self
            .unknown
            .par_iter()
            .enumerate()
            .map(|(p, &lin)| {
                let mut out = Vec::new();
                for i in 0..d {
                    for (off, v) in &self.taps {
                        let q = self.row_of_node[(lin as isize + off) as usize];
                        if q == NOT_UNKNOWN {
                            continue;
                        }
                        for c in 0..d {
                            if v[i * d + c] != 0.0 {
                                out.push((p * d + i, q * d + c, v[i * d + c]));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        per_row.into_iter().flatten().collect()
    }

    /// `A x` by direct stencil application.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.grid.dim();
        assert_eq!(x.len(), self.n_dofs(), "vector length must equal the number of unknowns");
        let mut y = vec![0.0; x.len()];
        y.par_chunks_mut(d).zip(self.unknown.par_iter()).for_each(|(out, &lin)| {
            for (off, v) in &self.taps {
                let q = self.row_of_node[(lin as isize + off) as usize];
                if q == NOT_UNKNOWN {
                    continue;
                }
                for i in 0..d {
                    for c in 0..d {
                        out[i] += v[i * d + c] * x[q * d + c];
                    }
                }
            }
        });
        y
    }

    /// Full collocated operator `sum_o A(o) u_{j+o}` for coefficients on every node.
    pub fn apply_full(&self, field: &NodalField) -> Vec<f64> {
        let d = self.grid.dim();
        let mut y = vec![0.0; self.n_dofs()];
        y.par_chunks_mut(d).zip(self.unknown.par_iter()).for_each(|(out, &lin)| {
            for (off, v) in &self.taps {
                let u = field.node((lin as isize + off) as usize);
                for i in 0..d {
                    for c in 0..d {
                        out[i] += v[i * d + c] * u[c];
                    }
                }
            }
        });
        y
    }

    /// Relative residual `|b - A x| / |b|` (absolute when `b = 0`).
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let ax = self.apply(x);
        let r = norm(&ax.iter().zip(&self.rhs).map(|(a, b)| b - a).collect::<Vec<_>>());
        let b = norm(&self.rhs);
        if b > 0.0 {
            r / b
        } else {
            r
        }
    }

    /// Unknown values scattered into a nodal field together with the prescribed data.
    pub fn to_field(&self, x: &[f64]) -> NodalField {
        let d = self.grid.dim();
        let mut field = self.prescribed.clone();
        for (p, &lin) in self.unknown.iter().enumerate() {
            for c in 0..d {
                field.set(lin, c, x[p * d + c]);
            }
        }
        field
    }

    /// Unknown values gathered from a nodal field.
    pub fn restrict(&self, field: &NodalField) -> Vec<f64> {
        let d = self.grid.dim();
        self.unknown.iter().flat_map(|&lin| field.node(lin)[..d].to_vec()).collect()
    }

    /// Writes the matrix as `row col value` lines.
    pub fn write_matrix(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "% rows {} cols {}", self.n_dofs(), self.n_dofs())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:e}")?;
        }
        Ok(())
    }

    /// Writes the right-hand side as `row value` lines.
    pub fn write_rhs(&self, mut w: impl Write) -> std::io::Result<()> {
        for (r, v) in self.rhs.iter().enumerate() {
            writeln!(w, "{r} {v:e}")?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    let mut acc = Compensated::default();
    for x in v {
        acc.add(x * x);
    }
    acc.value().sqrt()
}

/// Solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Direct when the estimated entry count is below the limit, else iterative.
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub kind: SolverKind,
    pub tolerance: f64,
    pub restart: usize,
    /// Iteration cap; `None` means `10 * #DOF`.
    pub max_iterations: Option<usize>,
    pub direct_nnz_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            tolerance: 1e-10,
            restart: 100,
            max_iterations: None,
            direct_nnz_limit: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    SparseLu,
    Gmres,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: SolveMethod,
    pub dofs: usize,
    /// Stored entries (direct) or stencil taps per row block (iterative).
    pub nnz: usize,
    /// Krylov iterations, or refinement steps after the LU solve.
    pub iterations: usize,
    pub relative_residual: f64,
    pub wall_seconds: f64,
}

pub fn solve(sys: &SparseSystem) -> Result<(NodalField, SolveReport), AssemblyError> {
    solve_with(sys, &SolveOptions::default())
}

pub fn solve_with(sys: &SparseSystem, opts: &SolveOptions) -> Result<(NodalField, SolveReport), AssemblyError> {
    let start = Instant::now();
    let direct = match opts.kind {
        SolverKind::Direct => true,
        SolverKind::Iterative => false,
        SolverKind::Auto => sys.nnz_estimate() <= opts.direct_nnz_limit || !sys.is_box,
    };
    let n = sys.n_dofs();
    let cap = opts.max_iterations.unwrap_or(10 * n);
    let (x, nnz, iterations) = if direct {
        let trip = sys.triplets();
        let nnz = trip.len();
        let lu = DirectSolver::factor(n, &trip)?;
        let mut x = lu.solve(sys.rhs())?;
        let mut steps = 0;
        while sys.relative_residual(&x) > opts.tolerance && steps < 3 {
            let ax = sys.apply(&x);
            let r: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let dx = lu.solve(&r)?;
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            steps += 1;
        }
        (x, nnz, steps)
    } else {
        let op = FftOperator::new(sys)?;
        let pre = BlockJacobi::new(sys)?;
        let (x, it) =
            gmres(|v, out| op.apply(v, out), |v, out| pre.apply(v, out), sys.rhs(), opts.tolerance, opts.restart, cap)?;
        (x, sys.taps.len(), it)
    };
    let relative_residual = sys.relative_residual(&x);
    if !relative_residual.is_finite() {
        return Err(AssemblyError::Singular("non-finite solution".into()));
    }
    if relative_residual > opts.tolerance {
        return Err(AssemblyError::Stagnation { iterations, residual: relative_residual });
    }
    let report = SolveReport {
        method: if direct { SolveMethod::SparseLu } else { SolveMethod::Gmres },
        dofs: n,
        nnz,
        iterations,
        relative_residual,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((sys.to_field(&x), report))
}

struct DirectSolver {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl DirectSolver {
    fn factor(n: usize, trip: &[(usize, usize, f64)]) -> Result<Self, AssemblyError> {
        let t: Vec<Triplet<usize, usize, f64>> = trip.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
            .map_err(|e| AssemblyError::Singular(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| AssemblyError::Singular(format!("{e:?}")))?;
        Ok(Self { lu, n })
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let rhs = Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(AssemblyError::Singular("zero pivot".into()));
        }
        Ok(out)
    }
}

/// Inverse of the diagonal block `A(0)` applied node by node.
struct BlockJacobi {
    d: usize,
    inv: [[f64; MAX_DIM]; MAX_DIM],
}

impl BlockJacobi {
    fn new(sys: &SparseSystem) -> Result<Self, AssemblyError> {
        let d = sys.grid.dim();
        let a0 = sys.stencil.get(&[0; MAX_DIM]).ok_or_else(|| AssemblyError::Singular("empty diagonal".into()))?;
        let m = nalgebra::DMatrix::from_fn(d, d, |i, c| a0[i * d + c]);
        let inv = m.try_inverse().ok_or_else(|| AssemblyError::Singular("singular diagonal block".into()))?;
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..d {
            for c in 0..d {
                out[i][c] = inv[(i, c)];
            }
        }
        Ok(Self { d, inv: out })
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.d;
        for (o, x) in out.chunks_mut(d).zip(v.chunks(d)) {
            for i in 0..d {
                o[i] = (0..d).map(|c| self.inv[i][c] * x[c]).sum();
            }
        }
    }
}

fn fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Matrix-free `A x` over a box of unknowns by zero-padded FFT correlation.
struct FftOperator {
    d: usize,
    n: [usize; MAX_DIM],
    p: [usize; MAX_DIM],
    kernel_hat: Vec<Vec<Complex<f64>>>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftOperator {
    fn new(sys: &SparseSystem) -> Result<Self, AssemblyError> {
        if !sys.is_box {
            return Err(AssemblyError::NotABox);
        }
        let d = sys.grid.dim();
        let mut p = [1usize; MAX_DIM];
        for j in 0..d {
            let e = (sys.stencil.reach[j] as usize).min(sys.box_n[j] - 1);
            p[j] = fast_size(sys.box_n[j] + e);
        }
        let mut planner = FftPlanner::new();
        let forward: Vec<_> = (0..d).map(|j| planner.plan_fft_forward(p[j])).collect();
        let inverse: Vec<_> = (0..d).map(|j| planner.plan_fft_inverse(p[j])).collect();
        let total: usize = p[..d].iter().product();
        let mut kernel_hat = vec![vec![Complex::new(0.0, 0.0); total]; d * d];
        for (o, v) in sys.stencil.entries() {
            if (0..d).any(|j| o[j].unsigned_abs() as usize >= sys.box_n[j]) {
                continue;
            }
            let mut idx = 0usize;
            for j in 0..d {
                idx = idx * p[j] + (-o[j]).rem_euclid(p[j] as i64) as usize;
            }
            for (k, x) in v.iter().enumerate() {
                kernel_hat[k][idx].re = *x;
            }
        }
        let mut op = Self { d, n: sys.box_n, p, kernel_hat, forward, inverse };
        let mut kh = std::mem::take(&mut op.kernel_hat);
        for a in kh.iter_mut() {
            op.transform(a, false);
        }
        op.kernel_hat = kh;
        Ok(op)
    }

    fn transform(&self, data: &mut [Complex<f64>], inverse: bool) {
        let d = self.d;
        let mut stride = [1usize; MAX_DIM];
        for j in (0..d.saturating_sub(1)).rev() {
            stride[j] = stride[j + 1] * self.p[j + 1];
        }
        let total = data.len();
        for j in 0..d {
            let fft = if inverse { &self.inverse[j] } else { &self.forward[j] };
            let len = self.p[j];
            let mut line = vec![Complex::new(0.0, 0.0); len];
            let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            for start in 0..total {
                if (start / stride[j]) % len != 0 {
                    continue;
                }
                for (i, l) in line.iter_mut().enumerate() {
                    *l = data[start + i * stride[j]];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, l) in line.iter().enumerate() {
                    data[start + i * stride[j]] = *l;
                }
            }
        }
    }

    fn pad_index(&self, mut pos: usize) -> usize {
        let d = self.d;
        let mut a = [0usize; MAX_DIM];
        for j in (0..d).rev() {
            a[j] = pos % self.n[j];
            pos /= self.n[j];
        }
        let mut idx = 0;
        for j in 0..d {
            idx = idx * self.p[j] + a[j];
        }
        idx
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.d;
        let total: usize = self.p[..d].iter().product();
        let nodes = x.len() / d;
        let map: Vec<usize> = (0..nodes).map(|q| self.pad_index(q)).collect();
        let xs: Vec<Vec<Complex<f64>>> = (0..d)
            .map(|c| {
                let mut buf = vec![Complex::new(0.0, 0.0); total];
                for (q, &idx) in map.iter().enumerate() {
                    buf[idx].re = x[q * d + c];
                }
                self.transform(&mut buf, false);
                buf
            })
            .collect();
        let scale = 1.0 / total as f64;
        for i in 0..d {
            let mut acc = vec![Complex::new(0.0, 0.0); total];
            for (c, xc) in xs.iter().enumerate() {
                for ((a, k), v) in acc.iter_mut().zip(&self.kernel_hat[i * d + c]).zip(xc) {
                    *a += k * v;
                }
            }
            self.transform(&mut acc, true);
            for (q, &idx) in map.iter().enumerate() {
                y[q * d + i] = acc[idx].re * scale;
            }
        }
    }
}

/// Right-preconditioned restarted GMRES. Returns the iterate and the iteration count.
fn gmres(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), AssemblyError> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let m = restart.max(1);
    let mut iters = 0;
    let mut tmp = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        apply(&x, &mut tmp);
        let r: Vec<f64> = b.iter().zip(&tmp).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= tol {
            return Ok((x, iters));
        }
        if iters >= max_iter {
            return Err(AssemblyError::Stagnation { iterations: iters, residual: beta / bnorm });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut hcol: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        for j in 0..m {
            precond(&v[j], &mut z);
            apply(&z, &mut tmp);
            let mut w = tmp.clone();
            let mut h = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                h[i] = hij;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= hij * b);
            }
            let hn = norm(&w);
            h[j + 1] = hn;
            for i in 0..j {
                let (a, bb) = (h[i], h[i + 1]);
                h[i] = cs[i] * a + sn[i] * bb;
                h[i + 1] = -sn[i] * a + cs[i] * bb;
            }
            let denom = h[j].hypot(h[j + 1]);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[j] / denom, h[j + 1] / denom) };
            h[j] = denom;
            h[j + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s * gj);
            hcol.push(h);
            iters += 1;
            let done = g[j + 1].abs() / bnorm <= 0.5 * tol || hn == 0.0;
            if done || iters >= max_iter || j + 1 == m {
                break;
            }
            v.push(w.iter().map(|a| a / hn).collect());
        }
        let k = hcol.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (l, yl) in y.iter().enumerate().take(k).skip(i + 1) {
                s -= hcol[l][i] * yl;
            }
            if hcol[i][i] == 0.0 {
                return Err(AssemblyError::Singular("GMRES breakdown".into()));
            }
            y[i] = s / hcol[i][i];
        }
        let mut update = vec![0.0; n];
        for (vi, yi) in v.iter().zip(&y) {
            update.iter_mut().zip(vi).for_each(|(a, b)| *a += yi * b);
        }
        precond(&update, &mut z);
        x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
    }
}

/// `sqrt(int_Omega |i^h(field) - exact|^2)` with 4 Gauss points per axis and cell.
pub fn l2_error(grid: &GridSpec, field: &NodalField, exact: VectorFn<'_>) -> f64 {
    let d = grid.dim();
    let nc = field.ncomp();
    let (a, b) = (grid.domain().lower(), grid.domain().upper());
    let lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for j in 0..d {
        let h = grid.spacing()[j];
        hi[j] = (((b[j] - a[j]) / h) * (1.0 - 1e-12)).ceil() as i64 - 1;
    }
    let zero = [0u8; MAX_DIM];
    let mut buf = vec![0.0; nc];
    let mut acc = Compensated::default();
    for_each_cell_point(grid, &lo, &hi, Some((a, b)), |x, w| {
        interpolate_into(grid, field, &x[..d], &zero, false, &mut buf).expect("domain nodes are indexed");
        let u = exact(&x[..d]);
        acc.add(w * (0..nc).map(|c| (buf[c] - u[c]) * (buf[c] - u[c])).sum::<f64>());
    });
    acc.value().max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainBox};
    use crate::kernel::Profile;
    use crate::nlops::{apply_navier, FieldSource};
    use crate::quad::{generate_point_set, polar_rule, solve_weights, PolarRule, QuadSet, Symmetry};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn material() -> Material {
        Material::from_young_poisson(1.0, 0.4, 2).unwrap()
    }

    fn kernel(delta: f64) -> RadialKernel {
        RadialKernel::new(Profile::inverse_distance_2d(), delta, 2).unwrap()
    }

    fn grid(h_max: f64, h_hat: &[f64], delta: f64) -> GridSpec {
        build_grid(&DomainBox::unit_square(), h_max, h_hat, delta).unwrap()
    }

    fn zero(_: &[f64]) -> Point {
        [0.0; MAX_DIM]
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn anisotropic_system_dimension() {
        let g = grid(0.125, &[1.0, 0.5], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let sys = assemble(&g, &kernel(0.25), &material(), Integration::Continuous(&rule), &zero, &zero).unwrap();
        assert_eq!(sys.n_dofs(), 210);
        assert_eq!(sys.rhs().len(), 210);
    }

    #[test]
    fn stencil_rows_annihilate_constants_and_affine_fields() {
        let g = grid(0.125, &[1.0, 0.5], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let k = kernel(0.25);
        let m = k.compute_moments().m;
        let ball = BallQuadrature::new(Integration::Continuous(&rule), &k);
        let st = operator_stencil(&g, &ball, &material(), m).unwrap();
        let scale = st.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for t in st.total() {
            assert!(t.abs() < 1e-12 * scale, "row sum {t}");
        }
        let constant = |_: &[f64]| [0.3, -1.2, 0.0];
        let sys = assemble(&g, &k, &material(), Integration::Continuous(&rule), &constant, &zero).unwrap();
        let field = NodalField::from_fn(&g, 2, constant);
        let ax = sys.apply(&sys.restrict(&field));
        for (a, b) in ax.iter().zip(sys.rhs()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let affine = |x: &[f64]| [1.0 + 2.0 * x[0] - x[1], 0.5 * x[0] + 3.0 * x[1], 0.0];
        let full = sys.apply_full(&NodalField::from_fn(&g, 2, affine));
        assert!(full.iter().all(|v| v.abs() < 1e-10), "max {}", full.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }

    #[test]
    fn gradient_stencil_reproduces_moment_identity() {
        // Acting on the linear coefficients x_k, g must give int rho s s^T = (m / d) I.
        let g = grid(0.125, &[1.0, 1.0], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let k = kernel(0.25);
        let ball = BallQuadrature::new(Integration::Continuous(&rule), &k);
        let gs = gradient_stencil(&g, &ball).unwrap();
        let h = g.spacing();
        let mut t = [[0.0; 2]; 2];
        for (o, v) in gs.entries() {
            for i in 0..2 {
                for c in 0..2 {
                    t[i][c] += v[i] * o[c] as f64 * h[c];
                }
            }
        }
        assert!((t[0][0] - 0.5).abs() < 1e-9 && (t[1][1] - 0.5).abs() < 1e-9, "{t:?}");
        assert!(t[0][1].abs() < 1e-12 && t[1][0].abs() < 1e-12);
    }

    #[test]
    fn stencil_action_matches_pointwise_trial_operator() {
        let g = grid(0.125, &[1.0, 0.5], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let k = kernel(0.25);
        let mat = material();
        let m = k.compute_moments().m;
        let sys = assemble(&g, &k, &mat, Integration::Continuous(&rule), &zero, &zero).unwrap();
        let vals = pseudo_random(2 * g.n_nodes(), 7);
        let field = NodalField::from_vec(&g, 2, vals).unwrap();
        let via_stencil = sys.apply_full(&field);
        let ball = BallQuadrature::new(Integration::Continuous(&rule), &k);
        for p in [0, 17, 52, 104] {
            let lin = sys.unknown_nodes()[p];
            let x = g.coord(&g.multi_index(lin));
            let pt = apply_navier(FieldSource::Trial { grid: &g, field: &field }, &x[..2], &ball, &mat, m).unwrap();
            for i in 0..2 {
                let a = via_stencil[2 * p + i];
                assert!((a + pt[i]).abs() < 1e-9 * pt[i].abs().max(1.0), "node {p}: {a} vs {}", -pt[i]);
            }
        }
    }

    #[test]
    fn assembly_is_bitwise_deterministic() {
        let g = grid(0.125, &[1.0, 0.5], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let k = kernel(0.25);
        let f = |x: &[f64]| [x[0] * x[1], x[0] - x[1], 0.0];
        let a = assemble(&g, &k, &material(), Integration::Continuous(&rule), &f, &f).unwrap();
        let b = assemble(&g, &k, &material(), Integration::Continuous(&rule), &f, &f).unwrap();
        let bits = |s: &SparseSystem| s.triplets().iter().map(|t| (t.0, t.1, t.2.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(
            a.rhs().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.rhs().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn quasi_row_nonzeros_are_bounded() {
        let h = 0.125;
        let delta = 2.0 * h;
        let g = grid(h, &[1.0, 1.0], delta);
        let k = kernel(delta);
        let set = quasi_set();
        let sys = assemble(&g, &k, &material(), Integration::Quasi(set), &zero, &zero).unwrap();
        let x0 = [0.5, 0.5];
        let r = 2.0 * delta + 4.0 * h;
        let bound = 2 * g
            .nodes_in_ball(&x0, r)
            .into_iter()
            .filter(|k| {
                let y = g.coord(k);
                ((y[0] - x0[0]).powi(2) + (y[1] - x0[1]).powi(2)).sqrt() < r
            })
            .count();
        let mut counts = vec![0usize; sys.n_dofs()];
        for (row, _, _) in sys.triplets() {
            counts[row] += 1;
        }
        assert!(counts.iter().all(|&c| c <= bound), "max {} bound {bound}", counts.iter().max().unwrap());
    }

    fn quasi_set() -> &'static QuadSet {
        static SET: OnceLock<QuadSet> = OnceLock::new();
        SET.get_or_init(|| {
            let pts = generate_point_set(0.25, 2).unwrap();
            solve_weights(&pts, 0.25, &kernel(1.0), Symmetry::Hyperoctahedral).unwrap()
        })
    }

    struct QuadraticCase {
        grid: GridSpec,
        continuous: SparseSystem,
        quasi: SparseSystem,
    }

    fn quadratic_case() -> &'static QuadraticCase {
        static CASE: OnceLock<QuadraticCase> = OnceLock::new();
        CASE.get_or_init(|| {
            let h = 0.125;
            let delta = 2.0 * h;
            let g = grid(h, &[1.0, 1.0], delta);
            let k = kernel(delta);
            let rule = PolarRule::smooth(delta, 2, 8, 64);
            let continuous = assemble(&g, &k, &material(), Integration::Continuous(&rule), &zero, &zero).unwrap();
            let quasi = assemble(&g, &k, &material(), Integration::Quasi(quasi_set()), &zero, &zero).unwrap();
            QuadraticCase { grid: g, continuous, quasi }
        })
    }

    #[test]
    fn fft_operator_matches_stencil_application() {
        let g = grid(0.125, &[1.0, 0.5], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let sys = assemble(&g, &kernel(0.25), &material(), Integration::Continuous(&rule), &zero, &zero).unwrap();
        let x = pseudo_random(sys.n_dofs(), 3);
        let op = FftOperator::new(&sys).unwrap();
        let mut y = vec![0.0; x.len()];
        op.apply(&x, &mut y);
        let z = sys.apply(&x);
        let scale = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).abs() < 1e-11 * scale);
        }
    }

    #[test]
    fn direct_and_iterative_solutions_agree() {
        let g = grid(0.125, &[1.0, 0.5], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let f = |x: &[f64]| [1.0 + x[0], x[1] * x[1], 0.0];
        let sys = assemble(&g, &kernel(0.25), &material(), Integration::Continuous(&rule), &zero, &f).unwrap();
        let direct = SolveOptions { kind: SolverKind::Direct, ..Default::default() };
        let iterative = SolveOptions { kind: SolverKind::Iterative, ..Default::default() };
        let (u1, r1) = solve_with(&sys, &direct).unwrap();
        let (u2, r2) = solve_with(&sys, &iterative).unwrap();
        assert_eq!(r1.method, SolveMethod::SparseLu);
        assert_eq!(r2.method, SolveMethod::Gmres);
        assert!(r1.relative_residual <= 1e-10 && r2.relative_residual <= 1e-10);
        let scale = u1.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in u1.values().iter().zip(u2.values()) {
            assert!((a - b).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn scalar_systems() {
        let lu = DirectSolver::factor(1, &[(0, 0, 4.0)]).unwrap();
        assert_eq!(lu.solve(&[2.0]).unwrap(), vec![0.5]);
        let (x, _) = gmres(|v, o| o[0] = 4.0 * v[0], |v, o| o[0] = v[0], &[2.0], 1e-12, 10, 10).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!(DirectSolver::factor(2, &[(0, 0, 1.0)]).and_then(|lu| lu.solve(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn gmres_reports_stagnation() {
        let err = gmres(
            |v, o| {
                o[0] = v[1];
                o[1] = -v[0];
            },
            |v, o| o.copy_from_slice(v),
            &[1.0, 0.0],
            1e-12,
            1,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, AssemblyError::Stagnation { .. }));
    }

    #[test]
    fn l2_error_examples() {
        let g = grid(0.125, &[1.0, 0.5], 0.25);
        let lin = |x: &[f64]| [1.0 + x[0] - 2.0 * x[1], 3.0 * x[1], 0.0];
        let field = NodalField::from_fn(&g, 2, lin);
        assert!(l2_error(&g, &field, &lin) < 1e-12);
        let zero_field = NodalField::zeros(&g, 2);
        let e = l2_error(&g, &zero_field, &|_| [1.0, 0.0, 0.0]);
        assert!((e - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_error_is_second_order() {
        let u = |x: &[f64]| [x[0] * x[0] * (1.0 - x[0]).powi(2) + x[1] * x[1] * (1.0 - x[1]).powi(2), 0.0, 0.0];
        let errs: Vec<f64> = [8.0, 16.0, 32.0]
            .iter()
            .map(|n| {
                let g = grid(1.0 / n, &[1.0, 1.0], 0.5 / n);
                l2_error(&g, &NodalField::from_fn(&g, 2, u), &u)
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 2.0).abs() < 0.2, "rate {rate}");
        }
    }

    #[test]
    fn coordinate_export() {
        let g = grid(0.25, &[1.0, 1.0], 0.25);
        let rule = polar_rule(0.25, g.h_min(), 2);
        let sys = assemble(&g, &kernel(0.25), &material(), Integration::Continuous(&rule), &zero, &zero).unwrap();
        let mut buf = Vec::new();
        sys.write_matrix(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), sys.triplets().len() + 1);
        let mut rhs = Vec::new();
        sys.write_rhs(&mut rhs).unwrap();
        assert_eq!(String::from_utf8(rhs).unwrap().lines().count(), sys.n_dofs());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn quasi_and_continuous_systems_agree_on_quadratics(c in proptest::collection::vec(-1.0f64..1.0, 12)) {
            let case = quadratic_case();
            let q = |x: &[f64]| {
                let f = |o: usize| c[o] + c[o + 1] * x[0] + c[o + 2] * x[1] + c[o + 3] * x[0] * x[0] + c[o + 4] * x[0] * x[1] + c[o + 5] * x[1] * x[1];
                [f(0), f(6), 0.0]
            };
            let field = NodalField::from_fn(&case.grid, 2, q);
            let a = case.continuous.apply_full(&field);
            let b = case.quasi.apply_full(&field);
            let scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-8 * scale, "{x} vs {y}");
            }
        }
    }
}
