//! Continuous and quasi-discrete nonlocal operators: bond, divergence,
//! dilatation, gradient and the state-based Navier operator.
//!
//! `L^S u = (C_a mu / m) L^B u + (C_b d (lambda - mu) / m^2) G(D u)`. For RK
//! trial fields the divergence is sampled at nodes and re-interpolated before
//! the gradient is applied.

use thiserror::Error;

use crate::grid::{GridSpec, NodeClass, Point, MAX_DIM};
use crate::kernel::RadialKernel;
use crate::quad::{PolarRule, QuadSet};
use crate::rkbasis::{interpolate_into, NodalField, RkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlopsError {
    #[error("invalid material: {0}")]
    Material(String),
    #[error("evaluation outside coverage: {0}")]
    Coverage(#[from] RkError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Isotropic material with the peridynamic scaling constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub lambda: f64,
    pub mu: f64,
    pub d: usize,
    pub c_alpha: f64,
    pub c_beta: f64,
}

impl Material {
    pub fn new(lambda: f64, mu: f64, d: usize) -> Result<Self, NlopsError> {
        let (c_alpha, c_beta) = match d {
            2 => (16.0, 2.0),
            3 => (30.0, 3.0),
            _ => return Err(NlopsError::Material(format!("dimension {d} unsupported"))),
        };
        if !(mu > 0.0) || !lambda.is_finite() {
            return Err(NlopsError::Material(format!("need mu > 0 (got mu = {mu}, lambda = {lambda})")));
        }
        Ok(Self { lambda, mu, d, c_alpha, c_beta })
    }

    /// Lame parameters from Young's modulus and Poisson ratio.
    pub fn from_young_poisson(e: f64, nu: f64, d: usize) -> Result<Self, NlopsError> {
        if !(e > 0.0) || !(nu > -1.0 && nu < 0.5) {
            return Err(NlopsError::Material(format!("need E > 0 and -1 < nu < 1/2 (got E = {e}, nu = {nu})")));
        }
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        Self::new(lambda, mu, d)
    }

    /// Stability hypothesis `lambda >= mu`.
    pub fn lambda_ge_mu(&self) -> bool {
        self.lambda >= self.mu
    }

    /// `C_a mu / m`
    pub fn bond_coefficient(&self, m: f64) -> f64 {
        self.c_alpha * self.mu / m
    }

    /// `C_b d (lambda - mu) / m^2`
    pub fn state_coefficient(&self, m: f64) -> f64 {
        self.c_beta * self.d as f64 * (self.lambda - self.mu) / (m * m)
    }
}

/// Integration over the horizon ball.
#[derive(Debug, Clone, Copy)]
pub enum Integration<'a> {
    Continuous(&'a PolarRule),
    Quasi(&'a QuadSet),
}

/// Ball nodes `s` paired with `weight * rho_delta(|s|)`.
#[derive(Debug, Clone)]
pub struct BallQuadrature {
    d: usize,
    delta: f64,
    nodes: Vec<(Point, f64)>,
}

impl BallQuadrature {
    pub fn new(integration: Integration<'_>, kernel: &RadialKernel) -> Self {
        let d = kernel.dim();
        let delta = kernel.delta();
        let raw = match integration {
            Integration::Continuous(rule) => rule.with_delta(delta).points(),
            Integration::Quasi(set) => set.scaled(delta),
        };
        let nodes = raw
            .into_iter()
            .map(|(s, w)| {
                let r = s[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                (s, w * kernel.value(r))
            })
            .filter(|(_, w)| *w != 0.0)
            .collect();
        Self { d, delta, nodes }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn nodes(&self) -> &[(Point, f64)] {
        &self.nodes
    }
}

/// Vector field evaluated pointwise.
pub type VectorFn<'a> = &'a (dyn Fn(&[f64]) -> Point + Sync);
/// Scalar field evaluated pointwise.
pub type ScalarFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Displacement field: a smooth callable or an RK trial expansion.
#[derive(Clone, Copy)]
pub enum FieldSource<'a> {
    Smooth(VectorFn<'a>),
    Trial { grid: &'a GridSpec, field: &'a NodalField },
}

/// Scalar field: a smooth callable or an RK trial expansion.
#[derive(Clone, Copy)]
pub enum ScalarSource<'a> {
    Smooth(ScalarFn<'a>),
    Trial { grid: &'a GridSpec, field: &'a NodalField },
}

impl FieldSource<'_> {
    fn eval(&self, x: &[f64]) -> Result<Point, NlopsError> {
        match self {
            FieldSource::Smooth(f) => Ok(f(x)),
            FieldSource::Trial { grid, field } => {
                let mut out = [0.0; MAX_DIM];
                let nc = field.ncomp();
                interpolate_into(grid, field, x, &[0; MAX_DIM], false, &mut out[..nc])?;
                Ok(out)
            }
        }
    }
}

impl ScalarSource<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64, NlopsError> {
        match self {
            ScalarSource::Smooth(f) => Ok(f(x)),
            ScalarSource::Trial { grid, field } => {
                let mut out = [0.0; 1];
                interpolate_into(grid, field, x, &[0; MAX_DIM], false, &mut out)?;
                Ok(out[0])
            }
        }
    }
}

/// Overwrites the coefficients of every non-Unknown node with `boundary(x_k)`.
pub fn with_boundary(grid: &GridSpec, field: &NodalField, boundary: VectorFn<'_>) -> NodalField {
    let mut out = field.clone();
    let d = grid.dim();
    for (lin, k) in grid.indices().enumerate() {
        if grid.classify_node(&k).expect("in range") != NodeClass::Unknown {
            let v = boundary(&grid.coord(&k)[..d]);
            for c in 0..field.ncomp() {
                out.set(lin, c, v[c]);
            }
        }
    }
    out
}

#[inline]
fn shifted(x: &[f64], s: &Point, d: usize) -> Point {
    let mut y = [0.0; MAX_DIM];
    for j in 0..d {
        y[j] = x[j] + s[j];
    }
    y
}

/// `sum w rho (s (x) s / |s|^2) (u(x+s) - u(x))`
pub fn apply_bond(src: FieldSource<'_>, x: &[f64], ball: &BallQuadrature) -> Result<Point, NlopsError> {
    let d = ball.d;
    let u0 = src.eval(x)?;
    let mut out = [0.0; MAX_DIM];
    for (s, w) in ball.nodes() {
        let y = shifted(x, s, d);
        let u = src.eval(&y[..d])?;
        let r2: f64 = s[..d].iter().map(|v| v * v).sum();
        let proj: f64 = (0..d).map(|c| s[c] * (u[c] - u0[c])).sum::<f64>() / r2;
        for i in 0..d {
            out[i] += w * s[i] * proj;
        }
    }
    Ok(out)
}

/// `sum w rho s . (u(x+s) - u(x))`
pub fn apply_divergence(src: FieldSource<'_>, x: &[f64], ball: &BallQuadrature) -> Result<f64, NlopsError> {
    let d = ball.d;
    let u0 = src.eval(x)?;
    let mut acc = 0.0;
    for (s, w) in ball.nodes() {
        let y = shifted(x, s, d);
        let u = src.eval(&y[..d])?;
        acc += w * (0..d).map(|c| s[c] * (u[c] - u0[c])).sum::<f64>();
    }
    Ok(acc)
}

/// `(d / m)` times the nonlocal divergence.
pub fn dilatation(src: FieldSource<'_>, x: &[f64], ball: &BallQuadrature, m: f64) -> Result<f64, NlopsError> {
    Ok(ball.d as f64 / m * apply_divergence(src, x, ball)?)
}

/// `sum w rho s (theta(x+s) - theta(x))`
pub fn apply_gradient(src: ScalarSource<'_>, x: &[f64], ball: &BallQuadrature) -> Result<Point, NlopsError> {
    let d = ball.d;
    let t0 = src.eval(x)?;
    let mut out = [0.0; MAX_DIM];
    for (s, w) in ball.nodes() {
        let y = shifted(x, s, d);
        let t = src.eval(&y[..d])?;
        for i in 0..d {
            out[i] += w * s[i] * (t - t0);
        }
    }
    Ok(out)
}

/// State-based Navier operator `L^S u (x)`.
pub fn apply_navier(
    src: FieldSource<'_>,
    x: &[f64],
    ball: &BallQuadrature,
    mat: &Material,
    m: f64,
) -> Result<Point, NlopsError> {
    let d = ball.d;
    if mat.d != d {
        return Err(NlopsError::Dimension(format!("material d = {} but ball d = {d}", mat.d)));
    }
    let bond = apply_bond(src, x, ball)?;
    let state = match src {
        FieldSource::Smooth(_) => {
            let theta = |y: &[f64]| apply_divergence(src, y, ball);
            let t0 = theta(x)?;
            let mut out = [0.0; MAX_DIM];
            for (s, w) in ball.nodes() {
                let y = shifted(x, s, d);
                let t = theta(&y[..d])?;
                for i in 0..d {
                    out[i] += w * s[i] * (t - t0);
                }
            }
            out
        }
        FieldSource::Trial { grid, .. } => {
            let mut theta = NodalField::zeros(grid, 1);
            let h = grid.spacing();
            let reach: Vec<f64> = (0..d).map(|j| ball.delta + 2.0 * h[j]).collect();
            let radius = reach.iter().map(|r| r * r).sum::<f64>().sqrt();
            for k in grid.nodes_in_ball(x, radius) {
                let xk = grid.coord(&k);
                if (0..d).any(|j| (xk[j] - x[j]).abs() >= reach[j]) {
                    continue;
                }
                let lin = grid.linear_index(&k).expect("in range");
                theta.set(lin, 0, apply_divergence(src, &xk[..d], ball)?);
            }
            apply_gradient(ScalarSource::Trial { grid, field: &theta }, x, ball)?
        }
    };
    let (cb, cs) = (mat.bond_coefficient(m), mat.state_coefficient(m));
    let mut out = [0.0; MAX_DIM];
    for i in 0..d {
        out[i] = cb * bond[i] + cs * state[i];
    }
    Ok(out)
}

/// Local Navier operator `mu Lap u + (mu + lambda) grad div u` from Hessians,
/// `hess[c][i][j] = d_i d_j u_c`.
pub fn local_navier(mat: &Material, hess: &[[[f64; 3]; 3]; 3]) -> Point {
    let d = mat.d;
    let mut out = [0.0; MAX_DIM];
    for c in 0..d {
        let lap: f64 = (0..d).map(|i| hess[c][i][i]).sum();
        let grad_div: f64 = (0..d).map(|i| hess[i][c][i]).sum();
        out[c] = mat.mu * lap + (mat.mu + mat.lambda) * grad_div;
    }
    out
}
