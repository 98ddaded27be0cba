//! Collision probabilities of the Gaussian projection families and the
//! parameter theory built on them.
//!
//! Two families share the same projection `a · o` with `a ~ N(0, I)`:
//!
//! * the *static* family quantizes, `h(o) = floor((a · o + b) / w)` with
//!   `b ~ U[0, w)`, and two points collide when their bucket indices agree;
//! * the *dynamic* family keeps the raw projection and two points collide
//!   when `|a · o1 - a · o2| <= w / 2`.
//!
//! For a pair at distance `tau` the projected difference is `tau · Z` with `Z`
//! standard normal, which gives the closed forms below.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, `Phi(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `Q(x) = 1 - Phi(x)`, accurate far into the tail.
pub fn normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `P[|a·o1 - a·o2| <= w/2]` for a pair at distance `tau`:
/// the mass of the standard normal on `[-w/(2 tau), w/(2 tau)]`.
pub fn dynamic_collision_probability(tau: f64, w: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!(
            "distance must be positive, got {tau}"
        )));
    }
    if w.is_nan() || w < 0.0 {
        return Err(Error::domain(format!(
            "width must be non-negative, got {w}"
        )));
    }
    // 2 Phi(x) - 1 == erf(x / sqrt 2)
    Ok(libm::erf(w / (2.0 * tau) * FRAC_1_SQRT_2))
}

/// Collision probability of the quantized family,
/// `2 ∫_0^w (1/tau) f(t/tau) (1 - t/w) dt`, by adaptive Simpson quadrature.
pub fn static_collision_probability(tau: f64, w: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!(
            "distance must be positive, got {tau}"
        )));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::domain(format!("width must be positive, got {w}")));
    }
    let integrand = |t: f64| 2.0 / tau * normal_pdf(t / tau) * (1.0 - t / w);
    // The density underflows to zero beyond ~38 standard deviations; cutting
    // the range there keeps the initial Simpson panels from missing the mass.
    let upper = w.min(40.0 * tau);
    Ok(adaptive_simpson(&integrand, 0.0, upper, STATIC_QUADRATURE_TOL).min(1.0))
}

pub const STATIC_QUADRATURE_TOL: f64 = 1e-9;

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50, 4)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    min_depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || (min_depth == 0 && delta.abs() <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    let next_min = min_depth.saturating_sub(1);
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, next_min)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, next_min)
}

/// `ln(1 / p(tau; w))` for the dynamic family, computed from the miss
/// probability so it stays accurate when `p` rounds to 1.
pub fn dynamic_log_inverse_probability(tau: f64, w: f64) -> Result<f64> {
    dynamic_collision_probability(tau, w)?;
    let miss = libm::erfc(w / (2.0 * tau) * FRAC_1_SQRT_2);
    Ok(-(-miss).ln_1p())
}

/// Exponent `alpha = gamma f(gamma) / Q(gamma)` bounding `rho* <= 1/c^alpha`
/// when the initial width is `w0 = 2 gamma c^2`.
pub fn derive_alpha(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::domain(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(gamma * normal_pdf(gamma) / normal_upper_tail(gamma))
}

/// Collision probabilities at distances 1 and `c` for a fixed initial width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionProfile {
    pub p1: f64,
    pub p2: f64,
    pub rho_star: f64,
    /// Set when `w0 = 2 gamma c^2` for some `gamma > 0`, which is always true;
    /// `gamma = w0 / (2 c^2)`.
    pub alpha: f64,
    pub gamma: f64,
}

impl CollisionProfile {
    pub fn new(c: f64, w0: f64) -> Result<Self> {
        if !(c > 1.0 && c.is_finite()) {
            return Err(Error::param(format!(
                "approximation ratio c must exceed 1, got {c}"
            )));
        }
        if !(w0 > 0.0 && w0.is_finite()) {
            return Err(Error::param(format!(
                "initial width w0 must be positive, got {w0}"
            )));
        }
        let p1 = dynamic_collision_probability(1.0, w0)?;
        let p2 = dynamic_collision_probability(c, w0)?;
        let log_inv_p2 = dynamic_log_inverse_probability(c, w0)?;
        if !(p2 > 0.0 && log_inv_p2 > 0.0) {
            return Err(Error::param(format!(
                "w0 = {w0} saturates the collision probabilities (p1 = {p1}, p2 = {p2})"
            )));
        }
        let gamma = w0 / (2.0 * c * c);
        Ok(CollisionProfile {
            p1,
            p2,
            rho_star: dynamic_log_inverse_probability(1.0, w0)? / log_inv_p2,
            alpha: derive_alpha(gamma)?,
            gamma,
        })
    }

    /// `1 / c^alpha`.
    pub fn rho_bound(&self, c: f64) -> f64 {
        c.powf(-self.alpha)
    }
}

/// Table shape chosen by the theory for `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub k: usize,
    pub l: usize,
    pub profile: CollisionProfile,
}

/// `K = ceil(ln(n/t) / ln(1/p2))`, `L = ceil((n/t)^rho*)`, both at least 1.
pub fn derive_params(n: usize, t: usize, c: f64, w0: f64) -> Result<DerivedParams> {
    if t == 0 {
        return Err(Error::param("t must be at least 1"));
    }
    if n <= t {
        return Err(Error::param(format!("n = {n} must exceed t = {t}")));
    }
    let profile = CollisionProfile::new(c, w0)?;
    let ratio = n as f64 / t as f64;
    let k = (ratio.ln() / dynamic_log_inverse_probability(c, w0)?).ceil();
    let l = ratio.powf(profile.rho_star).ceil();
    if !(k.is_finite() && l.is_finite()) || k > u32::MAX as f64 || l > u32::MAX as f64 {
        return Err(Error::param(format!(
            "derived table shape is unbounded (K = {k}, L = {l})"
        )));
    }
    Ok(DerivedParams {
        k: (k as usize).max(1),
        l: (l as usize).max(1),
        profile,
    })
}

/// Search radii `1, c, c^2, ...` up to and including the first that reaches `r_max`.
pub fn radius_schedule(c: f64, r_max: f64) -> Result<Vec<f64>> {
    if !(c > 1.0 && c.is_finite()) {
        return Err(Error::param(format!(
            "approximation ratio c must exceed 1, got {c}"
        )));
    }
    if !(r_max.is_finite()) {
        return Err(Error::param("maximum radius must be finite"));
    }
    let mut radii = Vec::new();
    let mut i = 0i32;
    loop {
        let r = c.powi(i);
        radii.push(r);
        if r >= r_max {
            return Ok(radii);
        }
        i += 1;
    }
}
