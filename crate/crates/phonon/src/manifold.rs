//! Closed-form geometry of the resonant manifold of the FPUT-beta dispersion
//! relation `omega(p) = |sin(p/2)|`.

use crate::error::{PhononError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Arguments of the arcsin in `h` within this distance above 1 are clamped.
pub const ARCSIN_CLAMP: f64 = 1e-9;
/// Inputs closer than this to the singular diagonal `|z - x| = 2 pi` are moved inward.
pub const DIAGONAL_GAP: f64 = 1e-9;

/// Canonical representative of `v` modulo 2 pi, in `[0, 2 pi)`.
pub fn canonicalize(v: f64) -> f64 {
    let r = v.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// A point of the torus, stored by its canonical representative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub fn new(v: f64) -> Self {
        Angle(canonicalize(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<f64> for Angle {
    fn from(v: f64) -> Self {
        Angle::new(v)
    }
}

pub fn omega(p: f64) -> f64 {
    (0.5 * p).sin().abs()
}

/// `F+(x, z) = (cos(x/2) + cos(z/2))^2 + 4 sin(x/2) sin(z/2)`.
///
/// The square is evaluated in product form so that the value stays accurate
/// near the corners where it vanishes.
pub fn f_plus(x: f64, z: f64) -> f64 {
    let c = 2.0 * (0.25 * (x + z)).cos() * (0.25 * (x - z)).cos();
    c * c + 4.0 * (0.5 * x).sin() * (0.5 * z).sin()
}

/// `F-(x, z) = (cos(x/2) + cos(z/2))^2 - 4 sin(x/2) sin(z/2)`.
pub fn f_minus(x: f64, z: f64) -> f64 {
    let c = 2.0 * (0.25 * (x + z)).cos() * (0.25 * (x - z)).cos();
    c * c - 4.0 * (0.5 * x).sin() * (0.5 * z).sin()
}

/// `d/dy F-(x, y)`.
pub fn f_minus_dy(x: f64, y: f64) -> f64 {
    -(0.5 * y).sin() * ((0.5 * x).cos() + (0.5 * y).cos()) - 2.0 * (0.5 * x).sin() * (0.5 * y).cos()
}

/// The quantity bounded by one on the torus: `tan((z-x)/4) cos((x+z)/4)`.
pub fn boundtan(x: f64, z: f64) -> f64 {
    (0.25 * (z - x)).tan() * (0.25 * (z + x)).cos()
}

fn inward(x: f64, z: f64) -> (f64, f64) {
    let d = (z - x).abs();
    if d > TWO_PI - DIAGONAL_GAP && d <= TWO_PI + DIAGONAL_GAP {
        let shift = 0.5 * (d - (TWO_PI - DIAGONAL_GAP));
        if z > x {
            (x + shift, z - shift)
        } else {
            (x - shift, z + shift)
        }
    } else {
        (x, z)
    }
}

/// Unwrapped value of `h`, without range checks. Uses
/// `2 arcsin(u) = 2 atan2(u, sqrt(1 - u^2))` with `1 - u^2 = F+ / (4 cos^2(|z-x|/4))`,
/// which avoids the cancellation in `1 - u^2`.
#[inline]
pub(crate) fn h_raw(x: f64, z: f64) -> f64 {
    let (x, z) = inward(x, z);
    let a = 0.25 * (z - x).abs();
    let u = a.tan() * (0.25 * (z + x)).cos();
    let den = f_plus(x, z).max(0.0).sqrt() / (2.0 * a.cos());
    0.5 * (z - x) + 2.0 * u.atan2(den)
}

/// `p1 = h(p0, p2)` and `p3 = ubar(p0, p2)`, both canonical. Inputs are
/// assumed to lie in `[0, 2 pi]`.
#[inline]
pub fn resonant_pair(x: f64, z: f64) -> (f64, f64) {
    let hr = h_raw(x, z);
    (canonicalize(hr), canonicalize(x - z + hr))
}

fn check_arg(x: f64, z: f64) -> Result<()> {
    if !x.is_finite() || !z.is_finite() {
        return Err(PhononError::Domain(format!("non-finite argument ({x}, {z})")));
    }
    let (xi, zi) = inward(x, z);
    let u = boundtan(xi, zi).abs();
    if u > 1.0 + ARCSIN_CLAMP {
        return Err(PhononError::Domain(format!(
            "arcsin argument {u} out of range at (x, z) = ({x}, {z})"
        )));
    }
    Ok(())
}

/// `h(x, z) = (z-x)/2 + 2 arcsin(tan(|z-x|/4) cos((z+x)/4))` modulo 2 pi.
pub fn h(x: f64, z: f64) -> Result<f64> {
    check_arg(x, z)?;
    Ok(canonicalize(h_raw(x, z)))
}

/// `ubar(x, z) = x - z + h(x, z)` modulo 2 pi; this is `p3` for `(p0, p2) = (x, z)`.
pub fn h_bar(x: f64, z: f64) -> Result<f64> {
    check_arg(x, z)?;
    Ok(canonicalize(x - z + h_raw(x, z)))
}

/// `Omega = omega(p0) + omega(p1) - omega(p2) - omega(p0 + p1 - p2)`.
pub fn omega_residual(p0: f64, p1: f64, p2: f64) -> f64 {
    omega(p0) + omega(p1) - omega(p2) - omega(p0 + p1 - p2)
}

/// Both sides of `|sin(ubar/2) sin(h/2)| = tan^2((z-x)/4) sin(z/2) sin(x/2)`.
pub fn triple_product_identity(x: f64, z: f64) -> (f64, f64) {
    let (p1, p3) = resonant_pair(x, z);
    let lhs = ((0.5 * p3).sin() * (0.5 * p1).sin()).abs();
    let t = (0.25 * (z - x)).tan();
    let rhs = t * t * (0.5 * z).sin() * (0.5 * x).sin();
    (lhs, rhs)
}

/// The two preimages `z` of `y` under `h(x, .)`. They are
/// exchanged by `z -> ubar(x, z)`. Returns `None` when `F-(x, y) <= 0`.
pub fn h_inverse(x: f64, y: f64) -> Option<[f64; 2]> {
    if f_minus(x, y) <= 0.0 {
        return None;
    }
    let (x, y) = if (0.25 * (x + y) - 0.5 * PI).abs() < 0.25 * DIAGONAL_GAP {
        (x - DIAGONAL_GAP, y)
    } else {
        (x, y)
    };
    let s = ((0.25 * (x + y)).tan() * (0.25 * (x - y)).cos()).clamp(-1.0, 1.0);
    let b = 2.0 * s.asin();
    let m = 0.5 * (x + y);
    Some([canonicalize(m + b), canonicalize(m - b)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FminusZeros {
    pub y_prime: f64,
    pub y_double_prime: f64,
}

const ROOT_TOL: f64 = 1e-13;

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(PhononError::Convergence(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        if hi - lo <= ROOT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn newton_polish(x: f64, y: f64, lo: f64, hi: f64) -> f64 {
    let d = f_minus_dy(x, y);
    if d == 0.0 {
        return y;
    }
    let y1 = y - f_minus(x, y) / d;
    if y1 >= lo && y1 <= hi && f_minus(x, y1).abs() <= f_minus(x, y).abs() {
        y1
    } else {
        y
    }
}

/// Zeros `y' < 2 pi - x < y''` of `y -> F-(x, y)`.
pub fn f_minus_zeros(x: f64) -> Result<FminusZeros> {
    if !(x > 1e-12 && x < TWO_PI - 1e-12) {
        return Err(PhononError::Convergence(format!("x = {x} too close to an edge")));
    }
    let mid = TWO_PI - x;
    let f = |y: f64| f_minus(x, y);
    let y1 = bisect(f, 0.0, mid)?;
    let y2 = bisect(f, mid, TWO_PI)?;
    Ok(FminusZeros {
        y_prime: newton_polish(x, y1, 0.0, mid),
        y_double_prime: newton_polish(x, y2, mid, TWO_PI),
    })
}

/// The point `z0` with `ubar(x, z0) = z0`, i.e. the argmax of `h(x, .)` on `(x, 2 pi)`.
pub fn symmetric_point(x: f64) -> Result<f64> {
    let g = |z: f64| {
        let d = canonicalize(x - z + h_raw(x, z)) - z;
        // wrap into (-pi, pi]
        d - TWO_PI * (d / TWO_PI).round()
    };
    let m = 512;
    let lo = x.max(1e-9);
    let hi = TWO_PI - 1e-9;
    let step = (hi - lo) / m as f64;
    let mut a = lo + 1e-6;
    let mut ga = g(a);
    for k in 1..=m {
        let b = (lo + k as f64 * step).min(hi);
        let gb = g(b);
        if ga.signum() != gb.signum() && (ga - gb).abs() < 1.0 {
            return bisect(g, a, b);
        }
        a = b;
        ga = gb;
    }
    Err(PhononError::Convergence(format!("no symmetric point found for x = {x}")))
}

/// One line of the identity suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, pass: value <= bound }
    }
}

/// Resonance identities: `Omega = 0` on `p1 = h` and the triple-product identity at
/// `n_random` random points, the sign pattern and ordering of the zeros of
/// `F-(x, .)` at `n_x` values of `x`, and `|tan((z-x)/4) cos((x+z)/4)| <= 1`
/// on a `grid x grid` midpoint grid of `[0, 2 pi]^2`.
pub fn identity_suite(seed: u64, n_random: usize, n_x: usize, grid: usize) -> Vec<Check> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut res, mut tri) = (0.0f64, 0.0f64);
    let mut dom = 0usize;
    for _ in 0..n_random {
        let x: f64 = rng.gen_range(0.0..TWO_PI);
        let z: f64 = rng.gen_range(0.0..TWO_PI);
        match h(x, z) {
            Ok(p1) => res = res.max(omega_residual(x, p1, z).abs()),
            Err(_) => dom += 1,
        }
        let (l, r) = triple_product_identity(x, z);
        tri = tri.max((l - r).abs() / r.abs().max(1.0));
    }
    let mut out = vec![
        Check::at_most("resonance_residual", res, 1e-10),
        Check::at_most("random_domain_errors", dom as f64, 0.0),
        Check::at_most("triple_product_identity", tri, 1e-10),
    ];

    let (mut order_bad, mut sign_bad) = (0usize, 0usize);
    for k in 0..n_x {
        let x = TWO_PI * (k as f64 + 0.5) / n_x as f64;
        let Ok(zs) = f_minus_zeros(x) else {
            order_bad += 1;
            continue;
        };
        let (a, b) = (zs.y_prime, zs.y_double_prime);
        if !(0.0 < a && a < TWO_PI - x && TWO_PI - x < b && b < TWO_PI) {
            order_bad += 1;
        }
        for j in 0..200 {
            let y = TWO_PI * (j as f64 + 0.5) / 200.0;
            if (y - a).abs() < 1e-8 || (y - b).abs() < 1e-8 {
                continue;
            }
            let v = f_minus(x, y);
            let want_neg = y > a && y < b;
            if (want_neg && v >= 0.0) || (!want_neg && v <= 0.0) {
                sign_bad += 1;
            }
        }
    }
    out.push(Check::at_most("fminus_zero_ordering", order_bad as f64, 0.0));
    out.push(Check::at_most("fminus_sign_pattern", sign_bad as f64, 0.0));

    let mut bt = 0.0f64;
    for i in 0..grid {
        let x = TWO_PI * (i as f64 + 0.5) / grid as f64;
        for j in 0..grid {
            let z = TWO_PI * (j as f64 + 0.5) / grid as f64;
            bt = bt.max(boundtan(x, z).abs());
        }
    }
    out.push(Check::at_most("boundtan_sup", bt, 1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_values() {
        assert!((omega(PI) - 1.0).abs() < 1e-15);
        assert_eq!(omega(0.0), 0.0);
        assert!(omega(TWO_PI) < 1e-15);
    }

    #[test]
    fn h_on_diagonal() {
        for &x in &[0.1, 1.0, 2.0, 4.0, 6.0] {
            assert!(h(x, x).unwrap().min(TWO_PI - h(x, x).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn canonicalize_range() {
        assert_eq!(canonicalize(-1e-300), 0.0);
        assert!(canonicalize(-0.5) > 0.0);
        assert_eq!(canonicalize(TWO_PI), 0.0);
    }

    #[test]
    fn f_plus_small_cases() {
        assert!((f_plus(0.0, 0.0) - 4.0).abs() < 1e-15);
        assert!((f_plus(PI, PI) - 4.0).abs() < 1e-14);
        assert!((f_minus(PI, PI) + 4.0).abs() < 1e-14);
    }

    #[test]
    fn domain_error_outside() {
        assert!(h(-2.0, 6.0).is_err());
        assert!(h_bar(-2.0, 6.0).is_err());
        assert!(h(f64::NAN, 1.0).is_err());
    }
}
