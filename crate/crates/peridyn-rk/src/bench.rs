//! Manufactured-solution cases and convergence harnesses.
//!
//! The manufactured displacement is `u = (x1^2 (1 - x1)^2 + x2^2 (1 - x2)^2, 0)`.
//! For any radial kernel `-L^S_delta u - f_0` is a constant vector because `u`
//! is quartic; for `rho_delta = 3 / (2 pi delta^3 |s|)` it equals
//! `(-18 lambda delta^2 / 5, 0)`.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assembly::{assemble, l2_error, solve_with, AssemblyError, SolveOptions, SolveReport};
use crate::grid::{build_grid_with, DomainBox, GridError, GridOptions, GridSpec, Point, MAX_DIM};
use crate::kernel::{KernelError, Profile, RadialKernel};
use crate::nlops::{apply_navier, local_navier, BallQuadrature, FieldSource, Integration, Material, NlopsError};
use crate::quad::{generate_point_set, polar_rule, solve_weights, PolarRule, QuadError, QuadSet, Symmetry};
use crate::rkbasis::{norm_h, quasi_interpolant, NodalField, RkError};
use crate::symbols::{navier_symbol, SymbolError, SymbolMode};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("ladder has {0} entries; at least 3 are required")]
    LadderTooShort(usize),
    #[error("invalid ladder: {0}")]
    Ladder(String),
    #[error("invalid coupling: {0}")]
    Coupling(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Nlops(#[from] NlopsError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Basis(#[from] RkError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

fn a(t: f64) -> f64 {
    t * t * (1.0 - t) * (1.0 - t)
}

/// Manufactured displacement.
pub fn exact_u(x: &[f64]) -> Point {
    [a(x[0]) + a(x[1]), 0.0, 0.0]
}

/// `f_0 = -L^S_0 u`.
pub fn rhs_local(x: &[f64], mat: &Material) -> Point {
    let (x1, x2) = (x[0], x[1]);
    let v = 2.0 * mat.lambda * (1.0 - 6.0 * x1 + 6.0 * x1 * x1)
        + 6.0 * mat.mu * (1.0 - 4.0 * x1 + 4.0 * x1 * x1 - 2.0 * x2 + 2.0 * x2 * x2);
    [-v, 0.0, 0.0]
}

/// Polar rule integrating the quartic case exactly.
fn smooth_rule(delta: f64) -> PolarRule {
    PolarRule::smooth(delta, 2, 8, 16)
}

/// `f_delta = -L^S_delta u` by nested ball quadrature.
pub fn rhs_nonlocal(x: &[f64], mat: &Material, kernel: &RadialKernel) -> Result<Point, BenchError> {
    let rule = smooth_rule(kernel.delta());
    let ball = BallQuadrature::new(Integration::Continuous(&rule), kernel);
    let m = kernel.compute_moments().m;
    let v = apply_navier(FieldSource::Smooth(&exact_u), x, &ball, mat, m)?;
    Ok([-v[0], -v[1], 0.0])
}

/// `f_delta - f_0`, constant in `x`.
pub fn nonlocal_shift(mat: &Material, kernel: &RadialKernel) -> Result<Point, BenchError> {
    let x = [0.5, 0.5];
    let f = rhs_nonlocal(&x, mat, kernel)?;
    let f0 = rhs_local(&x, mat);
    Ok([f[0] - f0[0], f[1] - f0[1], 0.0])
}

/// Coupling between the horizon and the grid spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coupling {
    FixedDelta(f64),
    DeltaEqH,
    DeltaEqH2,
    DeltaSqrtH,
    Quasi { m0: f64, epsilon1: f64 },
}

impl Coupling {
    pub fn delta(&self, h_max: f64) -> f64 {
        match *self {
            Coupling::FixedDelta(d) => d,
            Coupling::DeltaEqH => h_max,
            Coupling::DeltaEqH2 => h_max * h_max,
            Coupling::DeltaSqrtH => h_max.sqrt(),
            Coupling::Quasi { m0, .. } => m0 * h_max,
        }
    }

    pub fn epsilon1(&self) -> Option<f64> {
        match *self {
            Coupling::Quasi { epsilon1, .. } => Some(epsilon1),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Coupling::FixedDelta(_) => "fixed_delta",
            Coupling::DeltaEqH => "delta_eq_h",
            Coupling::DeltaEqH2 => "delta_eq_h2",
            Coupling::DeltaSqrtH => "delta_sqrt_h",
            Coupling::Quasi { .. } => "quasi",
        }
    }
}

/// Settings shared by the studies.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub mat: Material,
    pub profile: Profile,
    pub domain: DomainBox,
    pub h_hat: Vec<f64>,
    pub solve: SolveOptions,
    /// Refinement factor of the fixed-horizon reference solve.
    pub reference_refinement: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            mat: Material::from_young_poisson(1.0, 0.4, 2).expect("valid default material"),
            profile: Profile::inverse_distance_2d(),
            domain: DomainBox::unit_square(),
            h_hat: vec![1.0, 0.5],
            solve: SolveOptions::default(),
            reference_refinement: 4,
        }
    }
}

fn validate_ladder(ladder: &[f64]) -> Result<(), BenchError> {
    if ladder.len() < 3 {
        return Err(BenchError::LadderTooShort(ladder.len()));
    }
    for w in ladder.windows(2) {
        if !(w[0] > 0.0) || ((w[0] / w[1]) - 2.0).abs() > 1e-9 {
            return Err(BenchError::Ladder(format!("{} -> {} is not a halving", w[0], w[1])));
        }
    }
    Ok(())
}

/// `log2(e_i / e_{i+1})`.
pub fn pairwise_rates(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_rate(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h_max: f64,
    pub delta: f64,
    pub epsilon1: Option<f64>,
    pub dofs: usize,
    pub l2_error: f64,
    /// Rate against the previous row.
    pub rate: Option<f64>,
    pub wall_seconds: f64,
    pub solve: SolveReport,
    /// Error against the manufactured solution, which is also the exact
    /// nonlocal solution for the fixed-horizon coupling.
    pub exact_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolve {
    pub h_max: f64,
    pub dofs: usize,
    pub exact_error: f64,
    pub wall_seconds: f64,
    pub solve: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub coupling: Coupling,
    pub rows: Vec<ConvergenceRow>,
    pub slope: f64,
    pub reference: Option<ReferenceSolve>,
}

impl ConvergenceRecord {
    /// Errors decrease along the ladder.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].l2_error < w[0].l2_error)
    }
}

struct Solved {
    grid: GridSpec,
    field: NodalField,
    report: SolveReport,
    seconds: f64,
}

fn solve_level(
    coupling: &Coupling,
    h_max: f64,
    cfg: &StudyConfig,
    quad: Option<&QuadSet>,
) -> Result<Solved, BenchError> {
    let start = Instant::now();
    let delta = coupling.delta(h_max);
    let options = GridOptions { allow_thin_layer: delta < 0.5 * h_max };
    let grid = build_grid_with(&cfg.domain, h_max, &cfg.h_hat, delta, options)?;
    let kernel = RadialKernel::new(cfg.profile.clone(), delta, grid.dim())?;
    let mat = cfg.mat;
    let rule = polar_rule(delta, grid.h_min(), grid.dim());
    let integration = match quad {
        Some(set) => Integration::Quasi(set),
        None => Integration::Continuous(&rule),
    };
    let sys = match coupling {
        Coupling::FixedDelta(_) => {
            let shift = nonlocal_shift(&mat, &kernel)?;
            let rhs = move |x: &[f64]| {
                let f = rhs_local(x, &mat);
                [f[0] + shift[0], f[1] + shift[1], 0.0]
            };
            assemble(&grid, &kernel, &mat, integration, &exact_u, &rhs)?
        }
        _ => {
            let rhs = move |x: &[f64]| rhs_local(x, &mat);
            assemble(&grid, &kernel, &mat, integration, &exact_u, &rhs)?
        }
    };
    let (field, report) = solve_with(&sys, &cfg.solve)?;
    Ok(Solved { grid, field, report, seconds: start.elapsed().as_secs_f64() })
}

fn check_dimension(cfg: &StudyConfig) -> Result<(), BenchError> {
    if cfg.domain.dim() != 2 || cfg.mat.d != 2 {
        return Err(BenchError::Coupling("convergence studies are two-dimensional".into()));
    }
    Ok(())
}

/// Solves the manufactured problem along `ladder` and records errors and rates.
///
/// The fixed-horizon coupling is measured against a reference solve at
/// `min(ladder) / reference_refinement`; all others against `u`.
pub fn run_convergence(coupling: Coupling, ladder: &[f64], cfg: &StudyConfig) -> Result<ConvergenceRecord, BenchError> {
    validate_ladder(ladder)?;
    check_dimension(cfg)?;
    let quad = match coupling {
        Coupling::Quasi { m0, epsilon1 } => {
            if !(m0 > 0.0) {
                return Err(BenchError::Coupling(format!("M0 = {m0} must be positive")));
            }
            let unit = RadialKernel::new(cfg.profile.clone(), 1.0, 2)?;
            let pts = generate_point_set(epsilon1, 2)?;
            Some(solve_weights(&pts, epsilon1, &unit, Symmetry::Hyperoctahedral)?)
        }
        Coupling::FixedDelta(d) if !(d > 0.0) => {
            return Err(BenchError::Coupling(format!("delta = {d} must be positive")))
        }
        _ => None,
    };
    let reference = match coupling {
        Coupling::FixedDelta(_) => {
            let h_ref = ladder[ladder.len() - 1] / cfg.reference_refinement as f64;
            Some(solve_level(&coupling, h_ref, cfg, None)?)
        }
        _ => None,
    };
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &h in ladder {
        let s = solve_level(&coupling, h, cfg, quad.as_ref())?;
        let exact_error = l2_error(&s.grid, &s.field, &exact_u);
        let l2 = match &reference {
            Some(r) => {
                let (rg, rf) = (&r.grid, &r.field);
                let ref_u = move |x: &[f64]| {
                    let v = quasi_interpolant(rg, rf, x, &[0, 0]).expect("reference covers the domain");
                    [v[0], v[1], 0.0]
                };
                l2_error(&s.grid, &s.field, &ref_u)
            }
            None => exact_error,
        };
        let rate = rows.last().map(|p| (p.l2_error / l2).log2());
        rows.push(ConvergenceRow {
            h_max: h,
            delta: coupling.delta(h),
            epsilon1: coupling.epsilon1(),
            dofs: s.report.dofs,
            l2_error: l2,
            rate,
            wall_seconds: s.seconds,
            solve: s.report,
            exact_error,
        });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h_max).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.l2_error).collect();
    let reference = reference.map(|r| ReferenceSolve {
        h_max: r.grid.h_max(),
        dofs: r.report.dofs,
        exact_error: l2_error(&r.grid, &r.field, &exact_u),
        wall_seconds: r.seconds,
        solve: r.report,
    });
    Ok(ConvergenceRecord { coupling, rows, slope: fitted_rate(&hs, &es), reference })
}

/// Smooth test fields with closed-form local and nonlocal images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationField {
    /// The quartic manufactured solution.
    Manufactured,
    /// `(sin(pi x1) sin(pi x2), 0)`.
    SinSin,
}

impl TruncationField {
    pub fn value(&self, x: &[f64]) -> Point {
        match self {
            TruncationField::Manufactured => exact_u(x),
            TruncationField::SinSin => [(PI * x[0]).sin() * (PI * x[1]).sin(), 0.0, 0.0],
        }
    }

    /// `L^S_0 u`.
    pub fn local_image(&self, x: &[f64], mat: &Material) -> Point {
        match self {
            TruncationField::Manufactured => {
                let f = rhs_local(x, mat);
                [-f[0], -f[1], 0.0]
            }
            TruncationField::SinSin => {
                let (s1, c1) = (PI * x[0]).sin_cos();
                let (s2, c2) = (PI * x[1]).sin_cos();
                let p2 = PI * PI;
                let mut hess = [[[0.0; 3]; 3]; 3];
                hess[0][0][0] = -p2 * s1 * s2;
                hess[0][1][1] = -p2 * s1 * s2;
                hess[0][0][1] = p2 * c1 * c2;
                hess[0][1][0] = p2 * c1 * c2;
                local_navier(mat, &hess)
            }
        }
    }
}

/// Per-field data for `L^S_delta u` at a fixed horizon.
enum NonlocalImage {
    Shift(Point),
    Waves { minus: [[f64; 2]; 2], plus: [[f64; 2]; 2] },
}

impl NonlocalImage {
    fn new(field: TruncationField, mat: &Material, kernel: &RadialKernel) -> Result<Self, BenchError> {
        Ok(match field {
            TruncationField::Manufactured => NonlocalImage::Shift(nonlocal_shift(mat, kernel)?),
            TruncationField::SinSin => {
                let m = kernel.compute_moments().m;
                let sym = |xi: [f64; 2]| -> Result<[[f64; 2]; 2], BenchError> {
                    let s = navier_symbol(&xi, kernel, mat, m, SymbolMode::Continuous)?;
                    Ok([[s.m[0][0], s.m[0][1]], [s.m[1][0], s.m[1][1]]])
                };
                NonlocalImage::Waves { minus: sym([PI, -PI])?, plus: sym([PI, PI])? }
            }
        })
    }

    fn eval(&self, field: TruncationField, x: &[f64], mat: &Material) -> Point {
        match self {
            NonlocalImage::Shift(s) => {
                let l0 = field.local_image(x, mat);
                [l0[0] - s[0], l0[1] - s[1], 0.0]
            }
            NonlocalImage::Waves { minus, plus } => {
                let cm = (PI * (x[0] - x[1])).cos();
                let cp = (PI * (x[0] + x[1])).cos();
                let mut out = [0.0; MAX_DIM];
                for i in 0..2 {
                    out[i] = -0.5 * (minus[i][0] * cm - plus[i][0] * cp);
                }
                out
            }
        }
    }
}

/// Which consistency residual a truncation row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Residual {
    /// `L^S_delta Pi^h u - L^S_delta u`, fixed horizon.
    Uniform,
    /// `L^S_delta Pi^h u - L^S_0 u`, `delta = h_max`.
    Asymptotic,
    /// `L^S_{delta,eps} Pi^h u - L^S_0 u`, `delta = M0 h_max`.
    QuasiAsymptotic,
}

impl Residual {
    pub fn tag(&self) -> &'static str {
        match self {
            Residual::Uniform => "uniform",
            Residual::Asymptotic => "asymptotic",
            Residual::QuasiAsymptotic => "quasi_asymptotic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationOptions {
    pub fixed_delta: f64,
    pub m0: f64,
    pub epsilon1: f64,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        Self { fixed_delta: 0.25, m0: 2.0, epsilon1: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRow {
    pub residual: Residual,
    pub h_max: f64,
    pub delta: f64,
    pub norm: f64,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRecord {
    pub field: TruncationField,
    pub rows: Vec<TruncationRow>,
}

impl TruncationRecord {
    /// Fitted rate of one residual.
    pub fn slope(&self, residual: Residual) -> f64 {
        let rows: Vec<&TruncationRow> = self.rows.iter().filter(|r| r.residual == residual).collect();
        let h: Vec<f64> = rows.iter().map(|r| r.h_max).collect();
        let e: Vec<f64> = rows.iter().map(|r| r.norm).collect();
        fitted_rate(&h, &e)
    }
}

fn residual_norm(
    field: TruncationField,
    residual: Residual,
    h_max: f64,
    delta: f64,
    cfg: &StudyConfig,
    quad: &QuadSet,
) -> Result<f64, BenchError> {
    let options = GridOptions { allow_thin_layer: delta < 0.5 * h_max };
    let grid = build_grid_with(&cfg.domain, h_max, &cfg.h_hat, delta, options)?;
    let kernel = RadialKernel::new(cfg.profile.clone(), delta, 2)?;
    let mat = cfg.mat;
    let rule = polar_rule(delta, grid.h_min(), 2);
    let integration = match residual {
        Residual::QuasiAsymptotic => Integration::Quasi(quad),
        _ => Integration::Continuous(&rule),
    };
    let u = move |x: &[f64]| field.value(x);
    let zero = |_: &[f64]| [0.0; MAX_DIM];
    let sys = assemble(&grid, &kernel, &mat, integration, &u, &zero)?;
    let samples = NodalField::from_fn(&grid, 2, |x| field.value(x));
    let applied = sys.apply_full(&samples);
    let image = match residual {
        Residual::Uniform => Some(NonlocalImage::new(field, &mat, &kernel)?),
        _ => None,
    };
    let mut r = NodalField::zeros(&grid, 2);
    for (p, &lin) in sys.unknown_nodes().iter().enumerate() {
        let x = grid.coord(&grid.multi_index(lin));
        let target = match &image {
            Some(img) => img.eval(field, &x[..2], &mat),
            None => field.local_image(&x[..2], &mat),
        };
        for c in 0..2 {
            r.set(lin, c, -applied[p * 2 + c] - target[c]);
        }
    }
    Ok(norm_h(&grid, &r))
}

/// `norm_h` of the three consistency residuals along `ladder`.
pub fn truncation_study(
    field: TruncationField,
    ladder: &[f64],
    cfg: &StudyConfig,
    opts: &TruncationOptions,
) -> Result<TruncationRecord, BenchError> {
    validate_ladder(ladder)?;
    check_dimension(cfg)?;
    let unit = RadialKernel::new(cfg.profile.clone(), 1.0, 2)?;
    let quad = solve_weights(&generate_point_set(opts.epsilon1, 2)?, opts.epsilon1, &unit, Symmetry::Hyperoctahedral)?;
    let mut rows = Vec::new();
    for residual in [Residual::Uniform, Residual::Asymptotic, Residual::QuasiAsymptotic] {
        let mut prev: Option<f64> = None;
        for &h in ladder {
            let delta = match residual {
                Residual::Uniform => opts.fixed_delta,
                Residual::Asymptotic => h,
                Residual::QuasiAsymptotic => opts.m0 * h,
            };
            let norm = residual_norm(field, residual, h, delta, cfg, &quad)?;
            rows.push(TruncationRow { residual, h_max: h, delta, norm, rate: prev.map(|p| (p / norm).log2()) });
            prev = Some(norm);
        }
    }
    Ok(TruncationRecord { field, rows })
}

/// Multi-indices with `|alpha| <= 2` in 2D.
pub const ALPHAS: [[u8; 2]; 6] = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];

#[derive(Debug, Clone, PartialEq)]
pub struct SyncRow {
    pub h_max: f64,
    pub alpha: [u8; 2],
    pub sup_error: f64,
    pub rate: Option<f64>,
}

fn sin_derivative(order: u8, t: f64) -> f64 {
    let (s, c) = (PI * t).sin_cos();
    PI.powi(order as i32)
        * match order {
            0 => s,
            1 => c,
            _ => -s,
        }
}

/// Sampled sup-errors of `D^alpha (Pi^h u - u)` for `u = sin(pi x1) sin(pi x2)`.
pub fn synchronized_convergence(
    ladder: &[f64],
    h_hat: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<SyncRow>, BenchError> {
    validate_ladder(ladder)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 2]> = (0..samples).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let mut rows: Vec<SyncRow> = Vec::new();
    for &h in ladder {
        let grid = build_grid_with(&DomainBox::unit_square(), h, h_hat, h, GridOptions::default())?;
        let field = NodalField::from_fn(&grid, 1, |x| [(PI * x[0]).sin() * (PI * x[1]).sin(), 0.0, 0.0]);
        for alpha in ALPHAS {
            let mut sup: f64 = 0.0;
            for p in &pts {
                let v = quasi_interpolant(&grid, &field, p, &alpha)?[0];
                let exact = sin_derivative(alpha[0], p[0]) * sin_derivative(alpha[1], p[1]);
                sup = sup.max((v - exact).abs());
            }
            let rate = rows.iter().rev().find(|r| r.alpha == alpha).map(|r| (r.sup_error / sup).log2());
            rows.push(SyncRow { h_max: h, alpha, sup_error: sup, rate });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat() -> Material {
        Material::from_young_poisson(1.0, 0.4, 2).unwrap()
    }

    fn kernel(delta: f64) -> RadialKernel {
        RadialKernel::new(Profile::inverse_distance_2d(), delta, 2).unwrap()
    }

    /// `L^S_0 u` by central differences of `u`.
    fn local_by_differences(x: &[f64], mat: &Material) -> Point {
        let e = 1e-4;
        let u = |y0: f64, y1: f64| exact_u(&[y0, y1])[0];
        let (x0, x1) = (x[0], x[1]);
        let u00 = (u(x0 + e, x1) - 2.0 * u(x0, x1) + u(x0 - e, x1)) / (e * e);
        let u11 = (u(x0, x1 + e) - 2.0 * u(x0, x1) + u(x0, x1 - e)) / (e * e);
        let u01 = (u(x0 + e, x1 + e) - u(x0 + e, x1 - e) - u(x0 - e, x1 + e) + u(x0 - e, x1 - e)) / (4.0 * e * e);
        [mat.mu * (u00 + u11) + (mat.lambda + mat.mu) * u00, (mat.lambda + mat.mu) * u01, 0.0]
    }

    #[test]
    fn manufactured_examples() {
        assert_eq!(exact_u(&[0.5, 0.5])[0], 0.125);
        let f = rhs_local(&[0.0, 0.0], &mat());
        assert!((f[0] + 5.0).abs() < 1e-14 && f[1] == 0.0);
        let s = nonlocal_shift(&mat(), &kernel(0.1)).unwrap();
        assert!((s[0] + 0.051_428_571_428_571).abs() < 1e-8 * 0.0514 && s[1].abs() < 1e-12);
    }

    #[test]
    fn local_rhs_matches_finite_differences() {
        let m = mat();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let f = rhs_local(&x, &m);
            let l = local_by_differences(&x, &m);
            assert!((f[0] + l[0]).abs() <= 1e-6 && (f[1] + l[1]).abs() <= 1e-6, "{x:?}");
        }
    }

    #[test]
    fn nonlocal_correction_is_constant() {
        let m = mat();
        let k = kernel(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let diffs: Vec<f64> = (0..50)
            .map(|_| {
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                rhs_nonlocal(&x, &m, &k).unwrap()[0] - rhs_local(&x, &m)[0]
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / 50.0;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
        assert!(std <= 1e-9 * mean.abs());
        assert!((mean + 18.0 * m.lambda * 0.04 / 5.0).abs() <= 1e-8 * mean.abs());
    }

    #[test]
    fn ladder_validation() {
        let cfg = StudyConfig::default();
        assert!(matches!(
            run_convergence(Coupling::DeltaEqH, &[0.25, 0.125], &cfg),
            Err(BenchError::LadderTooShort(2))
        ));
        assert!(matches!(run_convergence(Coupling::DeltaEqH, &[0.25, 0.125, 0.1], &cfg), Err(BenchError::Ladder(_))));
    }

    #[test]
    fn rates_and_slope() {
        let h = [0.25, 0.125, 0.0625];
        let e: Vec<f64> = h.iter().map(|v| 3.0 * v * v).collect();
        assert!(pairwise_rates(&e).iter().all(|r| (r - 2.0).abs() < 1e-12));
        assert!((fitted_rate(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn delta_eq_h_converges_at_second_order() {
        let cfg = StudyConfig { h_hat: vec![1.0, 1.0], ..StudyConfig::default() };
        let rec = run_convergence(Coupling::DeltaEqH, &[0.25, 0.125, 0.0625], &cfg).unwrap();
        assert!(rec.monotone());
        assert!((rec.slope - 2.0).abs() < 0.4, "{:?}", rec.rows.iter().map(|r| r.l2_error).collect::<Vec<_>>());
    }

    #[test]
    fn sinsin_nonlocal_image_matches_pointwise_operator() {
        let m = mat();
        let k = kernel(0.2);
        let img = NonlocalImage::new(TruncationField::SinSin, &m, &k).unwrap();
        let u = |x: &[f64]| TruncationField::SinSin.value(x);
        let rule = PolarRule::smooth(0.2, 2, 24, 64);
        let ball = BallQuadrature::new(Integration::Continuous(&rule), &k);
        for x in [[0.3, 0.6], [0.81, 0.12]] {
            let a = img.eval(TruncationField::SinSin, &x, &m);
            let b = apply_navier(FieldSource::Smooth(&u), &x, &ball, &m, 1.0).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9, "{a:?} {b:?}");
        }
    }

    #[test]
    fn synchronized_errors_decay_quadratically() {
        let rows = synchronized_convergence(&[0.125, 0.0625, 0.03125], &[1.0, 1.0], 40, 3).unwrap();
        for r in rows.iter().filter(|r| r.rate.is_some()) {
            assert!((r.rate.unwrap() - 2.0).abs() < 0.3, "{r:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn nonlocal_minus_local_is_the_quartic_constant(x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, delta in 0.02f64..0.3) {
            let m = mat();
            let f = rhs_nonlocal(&[x0, x1], &m, &kernel(delta)).unwrap();
            let f0 = rhs_local(&[x0, x1], &m);
            let expected = -18.0 * m.lambda * delta * delta / 5.0;
            prop_assert!((f[0] - f0[0] - expected).abs() <= 1e-8 * expected.abs());
            prop_assert!((f[1] - f0[1]).abs() <= 1e-10);
        }
    }
}
