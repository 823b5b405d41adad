use phonon::manifold::*;
use phonon::PhononError;
use proptest::prelude::*;
use std::f64::consts::PI;

/// Nontrivial root of `y -> Omega(x, y, z)` (the branch with `y != z`), by scanning and bisection.
fn resonant_root(x: f64, z: f64) -> f64 {
    let f = |y: f64| omega_residual(x, y, z);
    let m = 20_000;
    let mut roots = Vec::new();
    for k in 0..m {
        let (a, b) = (TWO_PI * k as f64 / m as f64, TWO_PI * (k + 1) as f64 / m as f64);
        if f(a).signum() != f(b).signum() {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(mid).signum() == f(lo).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    *roots.iter().filter(|&&y| (y - z).abs() > 1e-6).min_by(|a, b| a.partial_cmp(b).unwrap()).unwrap()
}

#[test]
fn omega_examples() {
    assert_eq!(omega(PI), 1.0);
    assert_eq!(omega(0.0), 0.0);
    assert!(omega(TWO_PI).abs() < 1e-15);
}

#[test]
fn h_on_diagonal_and_special_points() {
    for &x in &[0.3, 2.0, 5.0] {
        assert!(h(x, x).unwrap().abs() < 1e-15);
    }
    let z0 = symmetric_point(2.0).unwrap();
    let p1 = h(2.0, z0).unwrap();
    // printed as 4.733..., 1.184..., 0.698...
    assert!((z0 - 4.733).abs() < 1e-3, "{z0}");
    assert!((p1 - 1.184).abs() < 1e-3, "{p1}");
    assert!((h_bar(2.0, z0).unwrap() - z0).abs() < 1e-10);
    assert!(h_bar(2.0, 2.0).unwrap().abs() < 1e-15);
    let u = h_bar(2.0, p1).unwrap();
    assert!((u - 0.698).abs() < 1e-3, "{u}");
}

#[test]
fn h_matches_resonance_root() {
    let v = h(1.0, 2.0).unwrap();
    let oracle = resonant_root(1.0, 2.0);
    assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
    assert!(omega_residual(1.0, v, 2.0).abs() < 1e-14);
}

#[test]
fn f_plus_examples() {
    assert!((f_plus(0.0, 0.0) - 4.0).abs() < 1e-15);
    assert!((f_plus(PI, PI) - 4.0).abs() < 1e-14);
    let v = f_plus(1.3, 5.1);
    assert!(v >= 4.0 * omega(1.3) * omega(5.1));
}

#[test]
fn f_minus_examples() {
    for &x in &[0.4f64, 1.7, 4.0] {
        let c = (0.5 * x).cos() + 1.0;
        assert!((f_minus(x, 0.0) - c * c).abs() < 1e-14);
        let s = (0.5 * x).sin();
        assert!((f_minus(x, TWO_PI - x) + 4.0 * s * s).abs() < 1e-13);
    }
    assert!((f_minus(PI, PI) + 4.0).abs() < 1e-14);
}

#[test]
fn f_minus_zeros_at_pi() {
    let z = f_minus_zeros(PI).unwrap();
    assert!(f_minus(PI, z.y_prime).abs() <= 1e-12);
    assert!(f_minus(PI, z.y_double_prime).abs() <= 1e-12);
}

#[test]
fn f_minus_zeros_merge_toward_two_pi() {
    // the gap 2 pi - y' closes like x^{1/3}
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&x| TWO_PI - f_minus_zeros(x).unwrap().y_prime).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[1] / gaps[2] > 1.8);
    // F-(0, y) = (1 + cos(y/2))^2 >= 0
    for k in 0..100 {
        assert!(f_minus(0.0, TWO_PI * k as f64 / 100.0) >= 0.0);
    }
}

#[test]
fn f_minus_zero_symmetry() {
    for &x in &[0.5, 1.9, 3.3, 5.5] {
        let a = f_minus_zeros(x).unwrap();
        let b = f_minus_zeros(TWO_PI - x).unwrap();
        assert!((b.y_prime - (TWO_PI - a.y_double_prime)).abs() < 1e-11);
        assert!((b.y_double_prime - (TWO_PI - a.y_prime)).abs() < 1e-11);
    }
}

#[test]
fn residual_examples() {
    assert!(omega_residual(1.3, 0.4, 1.3).abs() < 1e-15);
    let w = omega_residual(1.0, 1.0, 2.0);
    assert!((w - (2.0 * 0.5f64.sin() - 1.0f64.sin())).abs() < 1e-15);
}

#[test]
fn triple_product_identity_random() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let (l, r) = triple_product_identity(1.1, 1.1);
    assert_eq!((l, r), (0.0, 0.0));
    for _ in 0..10_000 {
        let x: f64 = rng.gen_range(0.0..TWO_PI);
        let z: f64 = rng.gen_range(0.0..TWO_PI);
        let (l, r) = triple_product_identity(x, z);
        assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()), "({x}, {z}): {l} vs {r}");
    }
    let (l, r) = triple_product_identity(0.3, 5.9);
    assert!((l - r).abs() <= 1e-12 * (1.0 + r));
}

#[test]
fn product_bound_constant() {
    // omega1 omega2 omega3 <= C omega0 on the resonant manifold; the supremum is 4 (as x -> 0)
    let m = 2000;
    let mut c = 0.0f64;
    for i in 0..m {
        let x = TWO_PI * (i as f64 + 0.5) / m as f64;
        for j in 0..m {
            let z = TWO_PI * (j as f64 + 0.5) / m as f64;
            let (p1, p3) = resonant_pair(x, z);
            c = c.max(omega(p1) * omega(z) * omega(p3) / omega(x));
        }
    }
    assert!(c > 3.5 && c <= 4.0 + 1e-9, "measured C = {c}");
}

#[test]
fn boundtan_on_grid() {
    let m = 2000;
    for i in 0..m {
        let x = TWO_PI * (i as f64 + 0.5) / m as f64;
        for j in 0..m {
            let z = TWO_PI * (j as f64 + 0.5) / m as f64;
            assert!(boundtan(x, z).abs() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn resonance_on_grid_away_from_corners() {
    let m = 400;
    for i in 0..m {
        let x = TWO_PI * (i as f64 + 0.5) / m as f64;
        for j in 0..m {
            let z = TWO_PI * (j as f64 + 0.5) / m as f64;
            let p1 = h(x, z).unwrap();
            assert!(omega_residual(x, p1, z).abs() <= 1e-10, "({x}, {z})");
        }
    }
}

#[test]
fn f_minus_sign_pattern() {
    for k in 0..100 {
        let x = TWO_PI * (k as f64 + 0.5) / 100.0;
        let z = f_minus_zeros(x).unwrap();
        assert!(0.0 < z.y_prime && z.y_prime < TWO_PI - x && TWO_PI - x < z.y_double_prime && z.y_double_prime < TWO_PI);
        for j in 1..100 {
            let y = z.y_prime + (z.y_double_prime - z.y_prime) * j as f64 / 100.0;
            assert!(f_minus(x, y) < 0.0);
            let y = z.y_prime * j as f64 / 100.0;
            assert!(f_minus(x, y) > 0.0);
        }
    }
}

#[test]
fn f_minus_vanishing_rate() {
    for &x in &[0.2, 1.0, 3.0, 5.0] {
        let z = f_minus_zeros(x).unwrap();
        let delta = 1e-6;
        let mut c = f64::INFINITY;
        for j in 0..1000 {
            let y = (z.y_prime - delta) * j as f64 / 1000.0;
            c = c.min(f_minus(x, y) / ((z.y_prime - y) * (0.5 * x).sin()));
        }
        assert!(c > 0.0, "x = {x}: c = {c}");
    }
}

#[test]
fn h_inverse_preimages() {
    for &(x, y) in &[(1.3, 0.4), (2.0, 5.9), (4.0, 1.0)] {
        if let Some(zs) = h_inverse(x, y) {
            for z in zs {
                let v = h(x, z).unwrap();
                let d = (v - y).abs();
                assert!(d.min(TWO_PI - d) < 1e-9, "({x}, {y}) -> z = {z}, h = {v}");
            }
            let ub = h_bar(x, zs[0]).unwrap();
            let d = (ub - zs[1]).abs();
            assert!(d.min(TWO_PI - d) < 1e-9);
        }
    }
}

#[test]
fn out_of_domain_is_error() {
    assert!(matches!(h(-2.0, 6.0), Err(PhononError::Domain(_))));
    assert!(matches!(h(f64::NAN, 1.0), Err(PhononError::Domain(_))));
}

#[test]
fn suite_passes() {
    assert!(identity_suite(3, 2000, 20, 200).iter().all(|c| c.pass));
}

proptest! {
    #[test]
    fn canonicalize_range(v in -1e6f64..1e6) {
        let c = canonicalize(v);
        prop_assert!((0.0..TWO_PI).contains(&c));
    }

    #[test]
    fn canonicalize_periodic(v in -1e3f64..1e3) {
        let d = (canonicalize(v + TWO_PI) - canonicalize(v)).abs();
        prop_assert!(d.min(TWO_PI - d) < 1e-12);
    }

    #[test]
    fn exchange_symmetry(x in 1e-3f64..TWO_PI - 1e-3, z in 1e-3f64..TWO_PI - 1e-3) {
        let a = h(x, h_bar(x, z).unwrap()).unwrap();
        let b = h(x, z).unwrap();
        let d = (a - b).abs();
        prop_assert!(d.min(TWO_PI - d) <= 1e-10);
    }

    #[test]
    fn f_plus_lower_bound(x in 0.0f64..TWO_PI, z in 0.0f64..TWO_PI) {
        prop_assert!(f_plus(x, z) >= 4.0 * omega(x) * omega(z) - 1e-14);
    }

    #[test]
    fn resonance_random(x in 1e-6f64..TWO_PI - 1e-6, z in 1e-6f64..TWO_PI - 1e-6) {
        let p1 = h(x, z).unwrap();
        prop_assert!(omega_residual(x, p1, z).abs() <= 1e-10);
    }
}
