//! Rayleigh-Jeans spectra, their mass and energy, and the inversion
//! `(M0, E0) -> (beta, gamma)`.

use crate::collision::{Field, Grid};
use crate::error::{PhononError, Result};
use crate::linearized::RjParams;
use crate::manifold::omega;
use crate::quadrature::{ResonantRule, Rule};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

pub const RATIO_LIMIT: f64 = 2.0 / PI;
pub const TOL_MATCH: f64 = 1e-8;

/// Edge-graded Gauss-Legendre rule over `(0, 2 pi)`.
fn rule() -> &'static Rule {
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| ResonantRule::default().plain())
}

/// Sampled `1/(beta omega + gamma)`; for `gamma = 0` the value at a node is
/// capped by the positivity floor of the collision module.
pub fn rj_field(params: &RjParams, grid: Grid) -> Result<Field> {
    Field::from_fn(grid, |p| {
        let v = params.rj(p);
        if params.is_singular() {
            v.min(1.0 / crate::collision::POS_FLOOR)
        } else {
            v
        }
    })
}

/// `(M, E) = (\int f, \int omega f)` for `f = 1/(beta omega + gamma)`.
pub fn mass_energy(params: &RjParams) -> Result<(f64, f64)> {
    if params.is_singular() {
        return Err(PhononError::Invalid("mass is infinite for gamma = 0".into()));
    }
    let ell = params.gamma / params.beta;
    Ok((resolvent(ell) / params.beta, numerator(ell) / params.beta))
}

/// `\int_0^{2 pi} dp / (omega + ell)` in closed form.
pub fn resolvent(ell: f64) -> f64 {
    // 4 \int_0^{pi/2} du / (ell + sin u)
    let j = if ell < 1.0 {
        let s = ((1.0 - ell) * (1.0 + ell)).sqrt();
        if s < 1e-5 {
            let x = s / (1.0 + ell);
            2.0 / (1.0 + ell) * (1.0 + x * x / 3.0)
        } else {
            ((1.0 + s).ln() - ell.ln()) / s
        }
    } else {
        let q = ((ell - 1.0) * (ell + 1.0)).sqrt();
        if q < 1e-5 {
            let x = q / (1.0 + ell);
            2.0 / (1.0 + ell) * (1.0 - x * x / 3.0)
        } else {
            2.0 / q * (q / (ell + 1.0)).atan()
        }
    };
    4.0 * j
}

/// `\int_0^{2 pi} omega dp / (omega + ell)`.
fn numerator(ell: f64) -> f64 {
    if ell <= 1.0 {
        2.0 * PI - ell * resolvent(ell)
    } else {
        rule().apply(|p| {
            let w = omega(p);
            w / (w + ell)
        })
    }
}

/// `F(ell) = 1 / ((1/2pi) \int dp/(omega + ell)) - ell`, increasing from 0 to `2/pi`.
pub fn curve_f(ell: f64) -> Result<f64> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(PhononError::Invalid(format!("ell = {ell} must be positive")));
    }
    Ok(numerator(ell) / resolvent(ell))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: bool,
    pub params: Option<RjParams>,
    pub ratio: f64,
    pub theta: f64,
    pub r: f64,
}

const LOG_LO: f64 = -690.0;
const LOG_HI: f64 = 690.0;

/// Solves `F(ell) = target` by bisection in `ln ell`.
pub fn curve_f_inverse(target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (LOG_LO, LOG_HI);
    let flo = curve_f(lo.exp())?;
    let fhi = curve_f(hi.exp())?;
    if !(target > flo && target < fhi) {
        return Err(PhononError::Convergence(format!(
            "ratio {target} outside the bracket [{flo}, {fhi}] of ln ell in [{LOG_LO}, {LOG_HI}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if curve_f(mid.exp())? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * lo.abs().max(1.0) {
            return Ok((0.5 * (lo + hi)).exp());
        }
    }
    Err(PhononError::Convergence("bisection on ln ell stalled".into()))
}

/// Finds `(beta, gamma)` with `(M, E) = (M0, E0)` if `0 < E0/M0 < 2/pi`.
/// At the boundary ratio `2/pi` itself no regular equilibrium exists and
/// `matched = false` is returned.
pub fn match_rj(m0: f64, e0: f64) -> Result<MatchResult> {
    if !(m0 > 0.0 && e0 > 0.0) {
        return Err(PhononError::Invalid(format!("mass and energy must be positive; got ({m0}, {e0})")));
    }
    let ratio = e0 / m0;
    if ratio >= RATIO_LIMIT {
        return Ok(MatchResult { matched: false, params: None, ratio, theta: f64::NAN, r: f64::NAN });
    }
    let ell = curve_f_inverse(ratio)?;
    // cot(theta) = ell
    let theta = (1.0 / ell).atan();
    let (cos, sin) = (ell / ell.hypot(1.0), 1.0 / ell.hypot(1.0));
    let r = m0 / (cos * resolvent(ell));
    let params = RjParams::new(1.0 / (r * cos), 1.0 / (r * sin))?;
    Ok(MatchResult { matched: true, params: Some(params), ratio, theta, r })
}
