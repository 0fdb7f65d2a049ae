//! Radial nonlocal kernels `rho_delta(r) = delta^-(d+2) rho(r / delta)` and their moments.
//!
//! Every supported profile is a finite power sum `rho(t) = sum_i c_i t^{p_i}`
//! on `[0, 1)`, so moments are available in closed form.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel dimension must be 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("horizon must be positive (got {0})")]
    Horizon(f64),
    #[error("profile is not nonnegative and nonincreasing on [0, 1)")]
    Profile,
    #[error("profile is not integrable: second moment diverges")]
    NonIntegrable,
    #[error("singular profile evaluated at r = 0")]
    Singularity,
}

/// Unit-ball radial profile `rho(t)`, `0 <= t < 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `c / t`
    InverseDistance { c: f64 },
    /// `c`
    Constant { c: f64 },
    /// `sum_i coeffs[i] t^i`
    Polynomial { coeffs: Vec<f64> },
}

impl Profile {
    /// Kernel used in the manufactured-solution experiments: `3 / (2 pi t)` in 2D.
    pub fn inverse_distance_2d() -> Self {
        Profile::InverseDistance { c: 3.0 / (2.0 * PI) }
    }

    /// Power-sum form `(coefficient, exponent)`.
    pub fn terms(&self) -> Vec<(f64, i32)> {
        match self {
            Profile::InverseDistance { c } => vec![(*c, -1)],
            Profile::Constant { c } => vec![(*c, 0)],
            Profile::Polynomial { coeffs } => {
                coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (*c, i as i32)).collect()
            }
        }
    }

    pub fn is_singular(&self) -> bool {
        self.terms().iter().any(|&(c, p)| p < 0 && c != 0.0)
    }

    /// `rho(t)` for `0 < t < 1`, zero for `t >= 1`.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        match self {
            Profile::InverseDistance { c } => c / t,
            Profile::Constant { c } => *c,
            Profile::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
        }
    }

    /// `int_0^1 rho(t) t^p dt`.
    pub fn radial_integral(&self, p: i32) -> Result<f64, KernelError> {
        let mut acc = 0.0;
        for (c, q) in self.terms() {
            if q + p < 0 {
                return Err(KernelError::NonIntegrable);
            }
            acc += c / (q + p + 1) as f64;
        }
        Ok(acc)
    }

    fn validate(&self) -> Result<(), KernelError> {
        let n = 2000;
        let mut prev = f64::INFINITY;
        for i in 1..n {
            let t = i as f64 / n as f64;
            let v = self.eval(t);
            if !(v >= 0.0) || v > prev * (1.0 + 1e-12) + 1e-300 {
                return Err(KernelError::Profile);
            }
            prev = v;
        }
        Ok(())
    }
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {d}"),
    }
}

/// Scaled kernel `rho_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialKernel {
    profile: Profile,
    delta: f64,
    d: usize,
}

/// Second, fourth and sixth kernel moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMoments {
    /// `int rho_delta |s|^2`
    pub m: f64,
    /// `int rho_delta s_i^2 s_j^2 / |s|^2`
    pub m4: [[f64; 3]; 3],
    /// `int rho_delta |s|^4`
    pub m6: f64,
}

impl RadialKernel {
    pub fn new(profile: Profile, delta: f64, d: usize) -> Result<Self, KernelError> {
        if d != 2 && d != 3 {
            return Err(KernelError::Dimension(d));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(KernelError::Horizon(delta));
        }
        profile.validate()?;
        profile.radial_integral(d as i32 + 1)?;
        Ok(Self { profile, delta, d })
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Same profile at another horizon.
    pub fn with_delta(&self, delta: f64) -> Result<Self, KernelError> {
        Self::new(self.profile.clone(), delta, self.d)
    }

    /// `rho_delta(r)`; zero for `r >= delta`.
    pub fn kernel_value(&self, r: f64) -> Result<f64, KernelError> {
        if r <= 0.0 && self.profile.is_singular() {
            return Err(KernelError::Singularity);
        }
        Ok(self.value(r))
    }

    #[inline]
    pub(crate) fn value(&self, r: f64) -> f64 {
        self.profile.eval(r / self.delta) / self.delta.powi(self.d as i32 + 2)
    }

    pub fn compute_moments(&self) -> KernelMoments {
        let d = self.d;
        let area = sphere_area(d);
        let m = area * self.profile.radial_integral(d as i32 + 1).expect("validated at construction");
        let (diag, off) = (3.0 / (d * (d + 2)) as f64, 1.0 / (d * (d + 2)) as f64);
        let mut m4 = [[0.0; 3]; 3];
        for (i, row) in m4.iter_mut().enumerate().take(d) {
            for (j, v) in row.iter_mut().enumerate().take(d) {
                *v = m * if i == j { diag } else { off };
            }
        }
        let m6 = self.delta * self.delta * area * self.profile.radial_integral(d as i32 + 3).expect("validated");
        KernelMoments { m, m4, m6 }
    }
}
