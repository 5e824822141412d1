//! Compactly supported space-time test functions with closed-form value,
//! ambient gradient, and time derivative.
//!
//! A test function is a product of a space bump (over the ambient point
//! (x, xn), or over x alone in cylindrical mode) and a time factor, both
//! expressed in the parabolically scaled frame z = (X - Y)/lambda,
//! tau = (t - s)/lambda^2. Blow-up mode adds the lambda^{-n} prefactor and a
//! unit-integral time profile.

use crate::error::{LabError, Result};
use crate::grid::SpaceTimeGrid;
use crate::vecn::{self, VecN};

/// Radial profile g(u) over u = r^2, supported in u < 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// exp(-1/(1-r^2)), infinitely smooth.
    SmoothBump,
    /// (1-r^2)^3, C^2 at the support edge.
    PolyBump,
}

impl Profile {
    pub fn g(self, u: f64) -> f64 {
        if u >= 1.0 {
            return 0.0;
        }
        match self {
            Profile::SmoothBump => (-1.0 / (1.0 - u)).exp(),
            Profile::PolyBump => (1.0 - u).powi(3),
        }
    }

    pub fn dg(self, u: f64) -> f64 {
        if u >= 1.0 {
            return 0.0;
        }
        match self {
            Profile::SmoothBump => {
                let w = 1.0 - u;
                -(-1.0 / w).exp() / (w * w)
            }
            Profile::PolyBump => -3.0 * (1.0 - u).powi(2),
        }
    }
}

/// Bump on the rescaled ambient space, centered at `center` with the given
/// radius (both in scaled units).
#[derive(Debug, Clone, Copy)]
pub struct SpaceBump {
    pub center: VecN,
    pub radius: f64,
    pub profile: Profile,
}

impl SpaceBump {
    pub fn unit(profile: Profile) -> SpaceBump {
        SpaceBump { center: vecn::ZERO, radius: 1.0, profile }
    }

    pub fn value(&self, z: VecN) -> f64 {
        let d = vecn::sub(z, self.center);
        self.profile.g(vecn::dot(d, d) / (self.radius * self.radius))
    }

    pub fn grad(&self, z: VecN) -> VecN {
        let r2 = self.radius * self.radius;
        let d = vecn::sub(z, self.center);
        let u = vecn::dot(d, d) / r2;
        vecn::scale(d, self.profile.dg(u) * 2.0 / r2)
    }
}

/// Time factor on the scaled time variable, supported in |tau| < 1.
#[derive(Debug, Clone, Copy)]
pub struct TimeProfile {
    profile: Profile,
    scale: f64,
}

impl TimeProfile {
    pub fn plain(profile: Profile) -> TimeProfile {
        TimeProfile { profile, scale: 1.0 }
    }

    /// Normalized so the scaled-time integral is 1 (blow-up mode eta).
    pub fn normalized(profile: Profile) -> TimeProfile {
        let m = 20_000;
        let h = 2.0 / m as f64;
        let mut sum = 0.0;
        for k in 0..=m {
            let tau = -1.0 + k as f64 * h;
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            sum += w * profile.g(tau * tau);
        }
        TimeProfile { profile, scale: 1.0 / (sum * h) }
    }

    pub fn value(&self, tau: f64) -> f64 {
        self.scale * self.profile.g(tau * tau)
    }

    pub fn deriv(&self, tau: f64) -> f64 {
        self.scale * self.profile.dg(tau * tau) * 2.0 * tau
    }
}

/// Product-form space-time bump centered at (y, c, s) with parabolic radii
/// (lambda in space and height, lambda^2 in time).
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub center_x: [f64; 2],
    pub center_h: f64,
    pub center_t: f64,
    pub lambda: f64,
    pub space: SpaceBump,
    pub time: TimeProfile,
    pub amplitude: f64,
    /// Ignore the height coordinate (phi(x, t) regarded as xn-independent).
    pub cylindrical: bool,
    sdim: usize,
}

impl TestFunction {
    /// Standard nonnegative ambient bump.
    pub fn bump(sdim: usize, center_x: [f64; 2], center_h: f64, center_t: f64, lambda: f64, profile: Profile) -> TestFunction {
        TestFunction {
            center_x,
            center_h,
            center_t,
            lambda,
            space: SpaceBump::unit(profile),
            time: TimeProfile::plain(profile),
            amplitude: 1.0,
            cylindrical: false,
            sdim,
        }
    }

    /// Bump in (x, t) only, constant in the height direction.
    pub fn cylindrical(sdim: usize, center_x: [f64; 2], center_t: f64, lambda: f64, profile: Profile) -> TestFunction {
        TestFunction {
            center_x,
            center_h: 0.0,
            center_t,
            lambda,
            space: SpaceBump::unit(profile),
            time: TimeProfile::plain(profile),
            amplitude: 1.0,
            cylindrical: true,
            sdim,
        }
    }

    /// Blow-up test function: lambda^{-n} prefactor, separable unit-integral
    /// time profile, and an arbitrary space bump in the scaled frame.
    pub fn blowup(
        sdim: usize,
        center_x: [f64; 2],
        center_h: f64,
        center_t: f64,
        lambda: f64,
        space: SpaceBump,
        time_profile: Profile,
    ) -> TestFunction {
        let n = sdim + 1;
        TestFunction {
            center_x,
            center_h,
            center_t,
            lambda,
            space,
            time: TimeProfile::normalized(time_profile),
            amplitude: lambda.powi(-(n as i32)),
            cylindrical: false,
            sdim,
        }
    }

    pub fn sdim(&self) -> usize {
        self.sdim
    }

    fn scaled_point(&self, x: &[f64], xn: f64) -> VecN {
        let mut z = vecn::ZERO;
        for a in 0..self.sdim {
            z[a] = (x[a] - self.center_x[a]) / self.lambda;
        }
        if self.cylindrical {
            // inert height slot: no contribution to the radius
            z[self.sdim] = self.space.center[self.sdim];
        } else {
            z[self.sdim] = (xn - self.center_h) / self.lambda;
        }
        z
    }

    pub fn value(&self, x: &[f64], xn: f64, t: f64) -> f64 {
        let tau = (t - self.center_t) / (self.lambda * self.lambda);
        self.amplitude * self.space.value(self.scaled_point(x, xn)) * self.time.value(tau)
    }

    /// Full ambient gradient; the height component is zero in cylindrical mode.
    pub fn grad(&self, x: &[f64], xn: f64, t: f64) -> VecN {
        let tau = (t - self.center_t) / (self.lambda * self.lambda);
        let mut g = vecn::scale(
            self.space.grad(self.scaled_point(x, xn)),
            self.amplitude * self.time.value(tau) / self.lambda,
        );
        if self.cylindrical {
            g[self.sdim] = 0.0;
        }
        g
    }

    pub fn dt(&self, x: &[f64], xn: f64, t: f64) -> f64 {
        let l2 = self.lambda * self.lambda;
        let tau = (t - self.center_t) / l2;
        self.amplitude * self.space.value(self.scaled_point(x, xn)) * self.time.deriv(tau) / l2
    }

    /// Support half-width per spatial axis.
    pub fn space_halfwidth(&self) -> f64 {
        self.lambda * self.space.radius
    }

    pub fn time_halfwidth(&self) -> f64 {
        self.lambda * self.lambda
    }

    /// Support box of one spatial axis.
    fn axis_support(&self, a: usize) -> (f64, f64) {
        let c = self.center_x[a] + self.lambda * self.space.center[a];
        (c - self.space_halfwidth(), c + self.space_halfwidth())
    }

    pub fn check_space_support(&self, grid: &SpaceTimeGrid) -> Result<()> {
        for a in 0..self.sdim.min(grid.sdim()) {
            let (lo, hi) = self.axis_support(a);
            if lo <= -1.0 || hi >= 1.0 {
                return Err(LabError::Support(format!(
                    "spatial support [{lo}, {hi}] on axis {} reaches the boundary of (-1, 1)",
                    a + 1
                )));
            }
        }
        Ok(())
    }

    pub fn check_time_support(&self, grid: &SpaceTimeGrid) -> Result<()> {
        let lo = self.center_t - self.time_halfwidth();
        let hi = self.center_t + self.time_halfwidth();
        if lo <= grid.t0 || hi >= grid.t1 {
            return Err(LabError::Support(format!(
                "time support [{lo}, {hi}] reaches the boundary of ({}, {})",
                grid.t0, grid.t1
            )));
        }
        Ok(())
    }

    pub fn check_support(&self, grid: &SpaceTimeGrid) -> Result<()> {
        self.check_space_support(grid)?;
        self.check_time_support(grid)
    }
}
