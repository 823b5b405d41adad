use phonon::collision::{collision_operator_with, CollisionOptions, Field, Grid, Interp};
use phonon::dynamics::*;
use phonon::equilibria::rj_field;
use phonon::linearized::{admissible_data, assemble, kernel_vectors, random_smooth, semigroup_apply, LinOperator, RjParams};
use phonon::manifold::omega;
use phonon::PhononError;
use proptest::prelude::*;
use std::sync::OnceLock;

fn op() -> &'static LinOperator {
    static L: OnceLock<LinOperator> = OnceLock::new();
    L.get_or_init(|| assemble(&RjParams::new(1.0, 1.0).unwrap(), Grid::new(128).unwrap()).unwrap())
}

fn sys() -> &'static Perturbation<'static> {
    static S: OnceLock<Perturbation<'static>> = OnceLock::new();
    S.get_or_init(|| Perturbation::new(op()).unwrap())
}

fn op256() -> &'static LinOperator {
    static L: OnceLock<LinOperator> = OnceLock::new();
    L.get_or_init(|| assemble(&RjParams::new(1.0, 1.0).unwrap(), Grid::new(256).unwrap()).unwrap())
}

fn sys256() -> &'static Perturbation<'static> {
    static S: OnceLock<Perturbation<'static>> = OnceLock::new();
    S.get_or_init(|| Perturbation::new(op256()).unwrap())
}

/// Largest `|<F, t>|, |<omega F, t>|` relative to `<F, |t|>` over `Q` and `C` of a few random `g`.
fn moment_defect(l: &LinOperator, sys: &Perturbation) -> f64 {
    let (f, wf) = kernel_vectors(&l.params, l.grid);
    let (f, wf) = (Field::new(l.grid, f).unwrap(), Field::new(l.grid, wf).unwrap());
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let g = random_smooth(l.grid, 6, seed);
        let (_, q, c) = sys.expansion(&g.values);
        for t in [q, c] {
            let t = Field::new(l.grid, t).unwrap();
            let scale = t.map(|_, v| v.abs()).dot(&f);
            worst = worst.max(t.dot(&f).abs() / scale).max(t.dot(&wf).abs() / scale);
        }
    }
    worst
}

fn data(eps: f64, seed: u64) -> Field {
    let l = op();
    admissible_data(&l.params, &random_smooth(l.grid, 8, seed), 0.5, eps).unwrap()
}

fn cfg(dt: f64, t_final: f64) -> EvolutionConfig {
    EvolutionConfig { dt, t_final, ..EvolutionConfig::default() }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn zero_perturbation_terms_vanish() {
    let z = Field::zeros(op().grid);
    assert_eq!(quadratic_term(&z, op()).unwrap().sup_norm(), 0.0);
    assert_eq!(cubic_term(&z, op()).unwrap().sup_norm(), 0.0);
}

#[test]
fn nonlinear_terms_conserve() {
    let (coarse, fine) = (moment_defect(op(), sys()), moment_defect(op256(), sys256()));
    assert!(fine < coarse / 4.0 && fine < 2e-5, "moment defect {coarse:e} at n=128, {fine:e} at n=256");
}

#[test]
fn expansion_reproduces_collision_operator() {
    // L g + Q(g) + C(g) = C[F(1+g)]/F; the module evaluates C on interpolated values of F(1+g)
    let l = op();
    let g = random_smooth(l.grid, 6, 3).map(|_, v| 0.05 * v);
    let f = Field::from_fn(l.grid, |p| l.params.rj(p)).unwrap();
    let full = f.values.iter().zip(&g.values).map(|(a, b)| a * (1.0 + b)).collect::<Vec<_>>();
    let full = Field::new(l.grid, full).unwrap();
    let opts = CollisionOptions { interp: l.options.interp, rule: l.options.rule, ..CollisionOptions::default() };
    let c = collision_operator_with(&full, &opts).unwrap();
    let want: Vec<f64> = c.values.iter().zip(&f.values).map(|(a, b)| a / b).collect();
    let (ls, q, cu) = sys().expansion(&g.values);
    let got: Vec<f64> = (0..l.n()).map(|i| ls[i] + q[i] + cu[i]).collect();
    assert!(max_diff(&got, &want) < 1e-3 * sup(&want).max(1e-3 * sup(&ls)), "{} vs {}", max_diff(&got, &want), sup(&want));
    // the pointwise linear part agrees with the assembled matrix
    let lg = l.apply(&g);
    assert!(max_diff(&ls, &lg.values) < 1e-2 * sup(&lg.values), "{} vs {}", max_diff(&ls, &lg.values), sup(&lg.values));
}

#[test]
fn rj_stationary_nonlinear() {
    let f0 = rj_field(&RjParams::new(1.0, 1.0).unwrap(), Grid::new(128).unwrap()).unwrap();
    let resid = phonon::collision::collision_operator(&f0).unwrap().sup_norm();
    let tr = evolve_nonlinear_f(&f0, &cfg(0.5, 10.0), &CollisionOptions::default()).unwrap();
    let d = max_diff(&tr.last.values, &f0.values);
    assert!(d <= 2.0 * 10.0 * resid + 1e-14, "{d} vs residual {resid}");
}

fn perturbed_rj(n: usize, amp: f64) -> Field {
    let g = Grid::new(n).unwrap();
    let base = random_smooth(g, 6, 1);
    let s = base.sup_norm();
    let p = RjParams::new(1.0, 1.0).unwrap();
    Field::new(g, g.nodes().iter().zip(&base.values).map(|(&q, b)| p.rj(q) * (1.0 + amp * b / s)).collect()).unwrap()
}

#[test]
fn nonlinear_conservation_and_entropy() {
    // the drift is set by the discrete residual of the spectrum, second order with linear interpolation
    let lin = CollisionOptions::default();
    let drift = |n: usize| evolve_nonlinear_f(&perturbed_rj(n, 0.3), &cfg(0.5, 10.0), &lin).unwrap().conserved_drift();
    let (a, b) = (drift(64), drift(128));
    assert!(b.0 < a.0 / 3.0 && b.1 < a.1 / 3.0, "{a:?} -> {b:?}");
    let cubic = CollisionOptions { interp: Interp::Cubic, ..CollisionOptions::default() };
    let tr = evolve_nonlinear_f(&perturbed_rj(128, 0.3), &cfg(0.5, 10.0), &cubic).unwrap();
    let (dm, de) = tr.conserved_drift();
    assert!(dm <= 1e-6 && de <= 1e-6, "{dm:e} {de:e}");
    // int log f grows along the flow
    for w in tr.records.windows(2) {
        assert!(w[1].entropy >= w[0].entropy - 1e-12, "t = {}", w[1].t);
    }
    assert!(tr.records.last().unwrap().entropy > tr.records[0].entropy);
}

#[test]
fn linear_regime_matches_semigroup() {
    let l = op();
    let rel = |eps: f64| {
        let g0 = data(eps, 2);
        let tr = evolve_perturbation_with(&g0, sys(), &cfg(0.5, 20.0)).unwrap();
        let lin = semigroup_apply(l, &g0, 20.0).unwrap();
        max_diff(&tr.last.values, &lin.values) / eps
    };
    let (small, mid) = (rel(1e-6), rel(1e-2));
    assert!(small < 1e-5, "relative gap {small:e} at eps = 1e-6");
    assert!(mid > small, "{mid:e} vs {small:e}");
}

fn orthogonality(l: &LinOperator, sys: &Perturbation, t_final: f64) -> (f64, Trajectory) {
    let g0 = admissible_data(&l.params, &random_smooth(l.grid, 8, 4), 0.5, 1e-2).unwrap();
    let tr = evolve_perturbation_with(&g0, sys, &cfg(1.0, t_final)).unwrap();
    let (f, wf) = kernel_vectors(&l.params, l.grid);
    let (f, wf) = (Field::new(l.grid, f).unwrap(), Field::new(l.grid, wf).unwrap());
    let g = &tr.last;
    ((g.dot(&f).abs() + g.dot(&wf).abs()) / g.dot(g).sqrt(), tr)
}

#[test]
fn perturbation_conserves_and_stays_orthogonal() {
    let (coarse, _) = orthogonality(op(), sys(), 20.0);
    let (fine, tr) = orthogonality(op256(), sys256(), 20.0);
    assert!(fine < coarse / 4.0 && fine <= 1e-6, "kernel component {coarse:e} at n=128, {fine:e} at n=256");
    let (dm, de) = tr.conserved_drift();
    assert!(dm <= 1e-6 && de <= 1e-6, "{dm:e} {de:e}");
    assert!(tr.records.iter().all(|r| r.sup_w12.is_finite() && r.b12 >= 0.0));
}

#[test]
fn rk4_self_convergence() {
    let g0 = data(5e-2, 5);
    let at = |dt: f64| evolve_perturbation_with(&g0, sys(), &EvolutionConfig { record_every: 0, ..cfg(dt, 1.0) }).unwrap().last.values;
    let (a, b, c) = (at(0.5), at(0.25), at(0.125));
    let ratio = max_diff(&a, &b) / max_diff(&b, &c);
    assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    let e = |dt: f64| {
        evolve_perturbation_with(&g0, sys(), &EvolutionConfig { integrator: Integrator::Euler, record_every: 0, ..cfg(dt, 1.0) })
            .unwrap()
            .last
            .values
    };
    let r1 = max_diff(&e(0.25), &c) / max_diff(&e(0.125), &c);
    assert!(r1 > 1.6 && r1 < 2.5, "Euler ratio {r1}");
}

#[test]
fn positivity_and_envelope() {
    let g0 = data(1e-1, 6);
    let ts = geometric_grid(1.0, 200.0, 30);
    let c = EvolutionConfig { record_every: 0, checkpoints: ts, ..cfg(1.0, 200.0) };
    let tr = evolve_perturbation_with(&g0, sys(), &c).unwrap();
    let f = op().grid.nodes().iter().zip(&tr.last.values).map(|(&p, g)| op().params.rj(p) * (1.0 + g)).fold(f64::INFINITY, f64::min);
    assert!(f > 0.0);
    let s: Vec<f64> = tr.records.iter().map(|r| r.sup_w12).collect();
    let half = s.len() / 2;
    let early = s[..half].iter().cloned().fold(0.0, f64::max);
    let late = s[half..].iter().cloned().fold(0.0, f64::max);
    assert!(late <= early, "{late} > {early}");
}

#[test]
fn checkpoints_and_records() {
    let g0 = data(1e-2, 7);
    let c = EvolutionConfig { record_every: 0, checkpoints: vec![1.0, 2.5, 4.0], norms: vec![(0.5, NormKind::L2)], ..cfg(0.5, 4.0) };
    let tr = evolve_perturbation_with(&g0, sys(), &c).unwrap();
    let ts: Vec<f64> = tr.records.iter().map(|r| r.t).collect();
    assert_eq!(ts, vec![0.0, 1.0, 2.5, 4.0]);
    assert_eq!(tr.records[0].extra.len(), 1);
    let r = &tr.records[0];
    assert!((r.b12 - 10f64.powf(0.6 - 1e-3) * r.sup_w12).abs() < 1e-15);
    let w: Vec<f64> = g0.grid.nodes().iter().zip(&g0.values).map(|(&p, v)| omega(p).sqrt() * v).collect();
    let l2 = (w.iter().map(|v| v * v).sum::<f64>() * g0.grid.weight()).sqrt();
    assert!((r.extra[0] - l2).abs() < 1e-15);
    assert!(tr.b_norm() >= r.b12);
}

#[test]
fn config_validation() {
    assert!(cfg(0.0, 1.0).validate(0.1).is_err());
    assert!(cfg(1.0, 0.5).validate(0.1).is_err());
    assert!(cfg(1.0, 2.0).validate(0.6).is_err());
    assert!(cfg(1.0, 2.0).validate(0.5).is_ok());
    let g0 = data(1e-2, 0);
    assert!(matches!(evolve_perturbation_with(&g0, sys(), &cfg(100.0, 200.0)), Err(PhononError::Invalid(_))));
}

#[test]
fn blowup_reported() {
    let g0 = Field::constant(op().grid, -1.5);
    assert!(matches!(evolve_perturbation_with(&g0, sys(), &cfg(0.5, 1.0)), Err(PhononError::Blowup { .. })));
    let f0 = Field::constant(op().grid, -1.0);
    assert!(matches!(evolve_nonlinear_f(&f0, &cfg(0.5, 1.0), &CollisionOptions::default()), Err(PhononError::Positivity { .. })));
}

#[test]
fn fit_examples() {
    let ts = geometric_grid(10.0, 1000.0, 64);
    let wobble: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 3.0 * t.powf(-0.6) * (1.0 + 0.01 * t.ln().sin()))).collect();
    let (e, _) = fit_power_law(&wobble, (100.0, 1000.0)).unwrap();
    assert!((e + 0.6).abs() < 0.02, "{e}");
    let flat: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 2.0)).collect();
    let (e, se) = fit_power_law(&flat, (100.0, 1000.0)).unwrap();
    assert!(e.abs() < 1e-12 && se < 1e-12);
    let bad: Vec<(f64, f64)> = ts.iter().map(|&t| (t, -1.0)).collect();
    assert!(matches!(fit_power_law(&bad, (100.0, 1000.0)), Err(PhononError::Fit(_))));
    assert!(matches!(fit_power_law(&flat, (2000.0, 3000.0)), Err(PhononError::Fit(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn homogeneity(lambda in -3.0f64..3.0, seed in 0u64..50) {
        let g = random_smooth(op().grid, 6, seed);
        let (_, q1, c1) = sys().expansion(&g.values);
        let (_, q2, c2) = sys().expansion(&g.map(|_, v| lambda * v).values);
        let (sq, sc) = (sup(&q1), sup(&c1));
        for i in 0..q1.len() {
            prop_assert!((q2[i] - lambda * lambda * q1[i]).abs() <= 1e-12 * (1.0 + lambda * lambda) * sq);
            prop_assert!((c2[i] - lambda.powi(3) * c1[i]).abs() <= 1e-12 * (1.0 + lambda.abs().powi(3)) * sc);
        }
    }

    #[test]
    fn power_law_recovered(a in -2.0f64..1.0, c in 0.1f64..10.0) {
        let s: Vec<(f64, f64)> = geometric_grid(1.0, 1e3, 40).into_iter().map(|t| (t, c * t.powf(a))).collect();
        let (e, _) = fit_power_law(&s, (1.0, 1e3)).unwrap();
        prop_assert!((e - a).abs() < 1e-10);
    }
}
