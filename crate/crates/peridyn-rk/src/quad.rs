//! Ball quadrature: polar Gauss rules over `B_delta` and the symmetric
//! lattice point sets with moment-matched positive weights.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gauss::{gauss_on, Compensated};
use crate::grid::{Point, MAX_DIM};
use crate::kernel::{KernelError, RadialKernel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("lattice spacing epsilon1 = {0} leaves no points in the unit ball")]
    EmptySet(f64),
    #[error("point set is not centrally symmetric")]
    NotSymmetric,
    #[error("infeasible moment constraints: residual {residual:e} exceeds 1e-10")]
    Infeasible { residual: f64 },
    #[error("nonpositive weight {weight:e} at point {point:?}; refine epsilon1")]
    NonpositiveWeight { weight: f64, point: Vec<f64> },
    #[error("unsupported dimension {0}")]
    Dimension(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Angular discretization of a polar rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngularScheme {
    /// Gauss panels starting at angle zero (panel count divisible by 4).
    GaussPanels { panels: usize, order: usize },
    /// Uniform midpoint angles; spectrally accurate for smooth periodic integrands.
    Uniform { points: usize },
}

/// Tensor polar (2D) or spherical (3D) rule over `B_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarRule {
    pub d: usize,
    pub delta: f64,
    pub radial_panels: usize,
    pub radial_order: usize,
    pub angular: AngularScheme,
    /// Gauss panels in the polar cosine (3D only).
    pub polar_panels: usize,
    pub polar_order: usize,
}

/// Rule resolving piecewise-cubic integrands on a grid with smallest spacing `h_min`.
pub fn polar_rule(delta: f64, h_min: f64, d: usize) -> PolarRule {
    let radial_panels = ((delta / (0.5 * h_min)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let angular_panels = (((8.0 * delta / h_min) * (1.0 - 1e-12)).ceil() as usize * 4).max(16);
    PolarRule {
        d,
        delta,
        radial_panels,
        radial_order: 4,
        angular: AngularScheme::GaussPanels { panels: angular_panels, order: 4 },
        polar_panels: if d == 3 { angular_panels / 2 } else { 0 },
        polar_order: 4,
    }
}

impl PolarRule {
    /// Compact rule for smooth integrands: one radial Gauss panel with
    /// `radial_points` nodes and `angular_points` uniform angles.
    pub fn smooth(delta: f64, d: usize, radial_points: usize, angular_points: usize) -> Self {
        PolarRule {
            d,
            delta,
            radial_panels: 1,
            radial_order: radial_points,
            angular: AngularScheme::Uniform { points: angular_points.div_ceil(4) * 4 },
            polar_panels: if d == 3 { 1 } else { 0 },
            polar_order: angular_points.div_ceil(2).max(2),
        }
    }

    /// Same discretization on another horizon.
    pub fn with_delta(&self, delta: f64) -> Self {
        PolarRule { delta, ..self.clone() }
    }

    fn angles(&self) -> Vec<(f64, f64)> {
        match self.angular {
            AngularScheme::GaussPanels { panels, order } => {
                let w = 2.0 * PI / panels as f64;
                (0..panels).flat_map(|p| gauss_on(p as f64 * w, (p + 1) as f64 * w, order)).collect()
            }
            AngularScheme::Uniform { points } => {
                let w = 2.0 * PI / points as f64;
                (0..points).map(|i| ((i as f64 + 0.5) * w, w)).collect()
            }
        }
    }

    /// Nodes `s` in `B_delta` with weights including the Jacobian.
    pub fn points(&self) -> Vec<(Point, f64)> {
        let dr = self.delta / self.radial_panels as f64;
        let radial: Vec<(f64, f64)> = (0..self.radial_panels)
            .flat_map(|p| gauss_on(p as f64 * dr, (p + 1) as f64 * dr, self.radial_order))
            .collect();
        let angles = self.angles();
        let mut out = Vec::new();
        match self.d {
            2 => {
                for &(r, wr) in &radial {
                    for &(t, wt) in &angles {
                        out.push(([r * t.cos(), r * t.sin(), 0.0], wr * wt * r));
                    }
                }
            }
            3 => {
                let np = self.polar_panels.max(1);
                let pw = 2.0 / np as f64;
                let polar: Vec<(f64, f64)> = (0..np)
                    .flat_map(|p| gauss_on(-1.0 + p as f64 * pw, -1.0 + (p + 1) as f64 * pw, self.polar_order))
                    .collect();
                for &(r, wr) in &radial {
                    for &(c, wp) in &polar {
                        let sp = (1.0 - c * c).sqrt();
                        for &(t, wt) in &angles {
                            out.push(([r * sp * t.cos(), r * sp * t.sin(), r * c], wr * wp * wt * r * r));
                        }
                    }
                }
            }
            _ => {}
        }
        out
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        let ang = match self.angular {
            AngularScheme::GaussPanels { panels, order } => panels * order,
            AngularScheme::Uniform { points } => points,
        };
        let polar = if self.d == 3 { self.polar_panels.max(1) * self.polar_order } else { 1 };
        self.radial_panels * self.radial_order * ang * polar
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `int_{B_delta} rho_delta(|s|) f(s) ds` with compensated, panel-major summation.
pub fn integrate_ball<const N: usize>(
    rule: &PolarRule,
    kernel: &RadialKernel,
    f: impl Fn(&[f64]) -> [f64; N],
) -> [f64; N] {
    let mut acc = [Compensated::default(); N];
    let d = rule.d;
    for (s, w) in rule.points() {
        let r = s[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        let wk = w * kernel.value(r);
        let v = f(&s[..d]);
        for i in 0..N {
            acc[i].add(wk * v[i]);
        }
    }
    acc.map(|a| a.value())
}

/// Symmetry group used to tie weights together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Symmetry {
    /// Sign flips of each coordinate.
    SignFlips,
    /// Sign flips and coordinate permutations.
    #[default]
    Hyperoctahedral,
}

/// Lattice points `epsilon1 k`, `k != 0`, inside the closed unit ball.
pub fn generate_point_set(epsilon1: f64, d: usize) -> Result<Vec<Point>, QuadError> {
    if d != 2 && d != 3 {
        return Err(QuadError::Dimension(d));
    }
    if !(epsilon1 > 0.0) || epsilon1 >= 1.0 + 1e-12 {
        return Err(QuadError::EmptySet(epsilon1));
    }
    let n = (1.0 / epsilon1 + 1e-9).floor() as i64;
    let mut out = Vec::new();
    let range = |active: bool| if active { -n..=n } else { 0..=0 };
    for a in -n..=n {
        for b in -n..=n {
            for c in range(d == 3) {
                if a == 0 && b == 0 && c == 0 {
                    continue;
                }
                let norm2 = ((a * a + b * b + c * c) as f64) * epsilon1 * epsilon1;
                if norm2 <= 1.0 + 1e-12 {
                    out.push([a as f64 * epsilon1, b as f64 * epsilon1, c as f64 * epsilon1]);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(QuadError::EmptySet(epsilon1));
    }
    Ok(out)
}

/// Adds `s` and `-s` for every extra point not already present.
pub fn augment_points(points: &[Point], extra: &[Point]) -> Vec<Point> {
    let mut out = points.to_vec();
    for p in extra {
        for q in [*p, p.map(|v| -v)] {
            if !out.iter().any(|o| (0..MAX_DIM).all(|j| (o[j] - q[j]).abs() < 1e-14)) {
                out.push(q);
            }
        }
    }
    out
}

/// Symmetric quadrature set on the unit ball with moment-matched weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSet {
    pub d: usize,
    pub epsilon1: f64,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

fn orbit_key(p: &Point, d: usize, symmetry: Symmetry) -> Vec<i64> {
    let mut key: Vec<i64> = p[..d].iter().map(|v| (v.abs() * 1e9).round() as i64).collect();
    if symmetry == Symmetry::Hyperoctahedral {
        key.sort_unstable();
    }
    key
}

fn constraint_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect()
}

#[inline]
fn fourth_moment_integrand(p: &Point, d: usize, i: usize, j: usize) -> f64 {
    let r2: f64 = p[..d].iter().map(|v| v * v).sum();
    p[i] * p[i] * p[j] * p[j] / r2
}

/// Least-squares weights around `epsilon1^d` matching the fourth moments of the unit kernel.
pub fn solve_weights(
    points: &[Point],
    epsilon1: f64,
    kernel: &RadialKernel,
    symmetry: Symmetry,
) -> Result<QuadSet, QuadError> {
    let d = kernel.dim();
    if points.is_empty() {
        return Err(QuadError::EmptySet(epsilon1));
    }
    for p in points {
        let found = points.iter().any(|q| (0..d).all(|j| (q[j] + p[j]).abs() < 1e-12));
        if !found {
            return Err(QuadError::NotSymmetric);
        }
    }
    let mut orbits: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        orbits.entry(orbit_key(p, d, symmetry)).or_default().push(i);
    }
    let orbit_list: Vec<Vec<usize>> = orbits.into_values().collect();
    let unit = kernel.with_delta(1.0)?;
    let targets = unit.compute_moments().m4;
    let pairs = constraint_pairs(d);
    let rho = |p: &Point| unit.profile().eval(p[..d].iter().map(|v| v * v).sum::<f64>().sqrt());
    let n_o = orbit_list.len();
    let w0 = epsilon1.powi(d as i32);
    let mut a = DMatrix::<f64>::zeros(pairs.len(), n_o);
    for (o, members) in orbit_list.iter().enumerate() {
        for (c, &(i, j)) in pairs.iter().enumerate() {
            let col: f64 =
                members.iter().map(|&m| rho(&points[m]) * fourth_moment_integrand(&points[m], d, i, j)).sum();
            a[(c, o)] = col;
        }
    }
    let t = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| targets[i][j]));
    let scale = DVector::from_iterator(n_o, orbit_list.iter().map(|m| 1.0 / (m.len() as f64).sqrt()));
    let a_scaled = DMatrix::from_fn(pairs.len(), n_o, |r, c| a[(r, c)] * scale[c]);
    let base = DVector::from_element(n_o, w0);
    let rhs = &t - &a * &base;
    let svd = a_scaled.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let y = svd
        .solve(&rhs, 1e-12 * smax.max(f64::MIN_POSITIVE))
        .map_err(|_| QuadError::Infeasible { residual: f64::INFINITY })?;
    let mut weights = vec![0.0; points.len()];
    for (o, members) in orbit_list.iter().enumerate() {
        let w = w0 + scale[o] * y[o];
        for &m in members {
            weights[m] = w;
        }
    }
    let set = QuadSet { d, epsilon1, points: points.to_vec(), weights };
    let residual = set.constraint_residuals(kernel).into_iter().fold(0.0, f64::max);
    if !(residual <= 1e-10) {
        return Err(QuadError::Infeasible { residual });
    }
    if let Some((i, &w)) = set.weights.iter().enumerate().find(|(_, &w)| !(w > 0.0)) {
        return Err(QuadError::NonpositiveWeight { weight: w, point: set.points[i][..d].to_vec() });
    }
    Ok(set)
}

impl QuadSet {
    /// Absolute residuals of the fourth-moment constraints, one per pair `i <= j`.
    pub fn constraint_residuals(&self, kernel: &RadialKernel) -> Vec<f64> {
        let d = self.d;
        let unit = kernel.with_delta(1.0).expect("valid kernel");
        let targets = unit.compute_moments().m4;
        constraint_pairs(d)
            .into_iter()
            .map(|(i, j)| {
                let mut acc = Compensated::default();
                for (p, w) in self.points.iter().zip(&self.weights) {
                    let r = p[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                    acc.add(w * unit.profile().eval(r) * fourth_moment_integrand(p, d, i, j));
                }
                (acc.value() - targets[i][j]).abs()
            })
            .collect()
    }

    /// Points `delta t` with weights `delta^d omega(t)`.
    pub fn scaled(&self, delta: f64) -> Vec<(Point, f64)> {
        let f = delta.powi(self.d as i32);
        self.points.iter().zip(&self.weights).map(|(p, w)| (p.map(|v| v * delta), w * f)).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Profile;
    use proptest::prelude::*;

    fn kernel(delta: f64) -> RadialKernel {
        RadialKernel::new(Profile::inverse_distance_2d(), delta, 2).unwrap()
    }

    #[test]
    fn polar_rule_panel_counts() {
        let r = polar_rule(0.25, 0.125, 2);
        assert!(r.radial_panels >= 4);
        assert!(matches!(r.angular, AngularScheme::GaussPanels { panels, .. } if panels >= 32 && panels % 4 == 0));
        assert!(polar_rule(0.125, 0.125, 2).radial_panels >= 2);
        assert_eq!(r.points().len(), r.len());
    }

    #[test]
    fn second_moment_and_odd_integrands() {
        let k = kernel(0.25);
        let rule = polar_rule(0.25, 0.125, 2);
        let [m] = integrate_ball(&rule, &k, |s| [s[0] * s[0] + s[1] * s[1]]);
        assert!((m - 1.0).abs() < 1e-12);
        let [odd] = integrate_ball(&rule, &k, |s| [s[0]]);
        assert!(odd.abs() < 1e-14);
        let fine = polar_rule(1.0, 0.125, 2);
        let [m4] = integrate_ball(&fine, &kernel(1.0), |s| [s[0].powi(4) / (s[0] * s[0] + s[1] * s[1])]);
        assert!((m4 - 0.375).abs() < 1e-10);
        let smooth = PolarRule::smooth(0.3, 2, 4, 16);
        let [m4s] = integrate_ball(&smooth, &kernel(0.3), |s| [s[0].powi(4) / (s[0] * s[0] + s[1] * s[1])]);
        assert!((m4s - 0.375).abs() < 1e-14);
    }

    #[test]
    fn three_dimensional_rule_integrates_moments() {
        let k = RadialKernel::new(Profile::Constant { c: 1.0 }, 0.5, 3).unwrap();
        let mo = k.compute_moments();
        for rule in [polar_rule(0.5, 0.25, 3), PolarRule::smooth(0.5, 3, 4, 16)] {
            let [m, m4] = integrate_ball(&rule, &k, |s| {
                let r2 = s.iter().map(|v| v * v).sum::<f64>();
                [r2, s[2].powi(4) / r2]
            });
            assert!((m - mo.m).abs() < 1e-10 * mo.m);
            assert!((m4 - mo.m4[2][2]).abs() < 1e-10 * mo.m);
        }
    }

    #[test]
    fn lattice_point_counts() {
        assert_eq!(generate_point_set(0.25, 2).unwrap().len(), 48);
        assert_eq!(generate_point_set(0.5, 2).unwrap().len(), 12);
        assert!(generate_point_set(1.5, 2).is_err());
        assert_eq!(generate_point_set(1.0, 2).unwrap().len(), 4);
    }

    #[test]
    fn weights_match_moments_and_stay_positive() {
        for eps in [0.25, 0.125] {
            let pts = generate_point_set(eps, 2).unwrap();
            for sym in [Symmetry::SignFlips, Symmetry::Hyperoctahedral] {
                let set = solve_weights(&pts, eps, &kernel(1.0), sym).unwrap();
                assert!(set.weights.iter().all(|&w| w > 0.0));
                assert!(set.constraint_residuals(&kernel(1.0)).iter().all(|&r| r <= 1e-10));
                for (i, p) in set.points.iter().enumerate() {
                    let j = set
                        .points
                        .iter()
                        .position(|q| (q[0] + p[0]).abs() < 1e-14 && (q[1] + p[1]).abs() < 1e-14)
                        .unwrap();
                    assert_eq!(set.weights[i], set.weights[j]);
                }
            }
        }
    }

    #[test]
    fn second_moment_follows_from_fourth_moments() {
        let pts = generate_point_set(0.25, 2).unwrap();
        let set = solve_weights(&pts, 0.25, &kernel(1.0), Symmetry::default()).unwrap();
        let k = kernel(0.2);
        let m: f64 = set
            .scaled(0.2)
            .iter()
            .map(|(s, w)| {
                let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
                w * k.value(r) * r * r
            })
            .sum();
        assert!((m - 1.0).abs() < 1e-10);
    }

    #[test]
    fn antipodal_pair_is_infeasible() {
        let pts = vec![[0.25, 0.0, 0.0], [-0.25, 0.0, 0.0]];
        assert!(matches!(
            solve_weights(&pts, 0.25, &kernel(1.0), Symmetry::SignFlips),
            Err(QuadError::Infeasible { .. })
        ));
        let lopsided = vec![[0.25, 0.0, 0.0]];
        assert_eq!(solve_weights(&lopsided, 0.25, &kernel(1.0), Symmetry::SignFlips), Err(QuadError::NotSymmetric));
    }

    #[test]
    fn augmentation_keeps_central_symmetry() {
        let pts = generate_point_set(0.5, 2).unwrap();
        let aug = augment_points(&pts, &[[0.3, 0.3 * 2f64.sqrt(), 0.0]]);
        assert_eq!(aug.len(), 14);
        let set = solve_weights(&aug, 0.5, &kernel(1.0), Symmetry::SignFlips);
        if let Ok(set) = set {
            assert!(set.constraint_residuals(&kernel(1.0)).iter().all(|&r| r <= 1e-10));
        }
    }

    proptest! {
        #[test]
        fn lattice_sets_are_centrally_symmetric(inv in 2u32..9) {
            let eps = 1.0 / inv as f64;
            let pts = generate_point_set(eps, 2).unwrap();
            for p in &pts {
                prop_assert!(pts.iter().any(|q| q[0] == -p[0] && q[1] == -p[1]));
                prop_assert!(p[0] * p[0] + p[1] * p[1] <= 1.0 + 1e-12);
            }
        }
    }
}
