//! Time evolution of `f_t = C[f]` and of the perturbation
//! `g_t = Lg + Q(g) + C(g)` with `f = F (1 + g)`, `F` a Rayleigh-Jeans spectrum.

use crate::collision::{self, collision_with_events, stencil, CollisionOptions, Field, Interp, ResonantEvents, Stencil};
use crate::error::{PhononError, Result};
use crate::linearized::{japanese, LinOperator, RjParams};
use crate::manifold::omega;
use crate::quadrature::pairwise_sum;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    Sup,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    pub integrator: Integrator,
    /// Record every this many steps (0 disables periodic recording).
    pub record_every: usize,
    /// Additional recording times; the first step reaching each one is recorded.
    pub checkpoints: Vec<f64>,
    /// Extra weighted norms `|| omega^mu g ||` to record.
    pub norms: Vec<(f64, NormKind)>,
    /// The `delta` in the time weights of the B_T norm.
    pub delta: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            dt: 0.5,
            t_final: 10.0,
            integrator: Integrator::Rk4,
            record_every: 1,
            checkpoints: Vec::new(),
            norms: Vec::new(),
            delta: 1e-3,
        }
    }
}

/// `count` points geometrically spaced on `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

impl EvolutionConfig {
    pub fn validate(&self, max_a: f64) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_final >= self.dt) {
            return Err(PhononError::Invalid(format!("need dt > 0 and t_final >= dt; got {} / {}", self.dt, self.t_final)));
        }
        if self.dt * max_a > 0.5 {
            return Err(PhononError::Invalid(format!(
                "dt * max a = {} exceeds the stability guard 0.5",
                self.dt * max_a
            )));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
    pub sup_w12: f64,
    pub sup_w16: f64,
    pub l2: f64,
    /// `<t>^{2/5 - delta} ||omega^{1/6} g||_inf`.
    pub b16: f64,
    /// `<t>^{3/5 - delta} ||omega^{1/2} g||_inf`.
    pub b12: f64,
    pub extra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub last: Field,
}

impl Trajectory {
    /// `sup` over recorded times of the B_T norm.
    pub fn b_norm(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.b16).max(r.b12))
    }

    /// Relative drift of mass and energy between the first and last record.
    pub fn conserved_drift(&self) -> (f64, f64) {
        let (a, b) = (&self.records[0], self.records.last().unwrap());
        ((b.mass - a.mass).abs() / a.mass.abs(), (b.energy - a.energy).abs() / a.energy.abs())
    }

    pub fn series<F: Fn(&Record) -> f64>(&self, f: F) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, f(r))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub exponent: f64,
    pub stderr: f64,
    pub fit_window: (f64, f64),
    pub series: Vec<(f64, f64)>,
    pub conserved_drift: (f64, f64),
}

/// Least-squares slope of `ln v` against `ln t` over the window, with its standard error.
pub fn fit_power_law(series: &[(f64, f64)], window: (f64, f64)) -> Result<(f64, f64)> {
    let eps = 1e-12 * window.1.abs().max(1.0);
    let pts: Vec<(f64, f64)> =
        series.iter().filter(|(t, _)| *t >= window.0 - eps && *t <= window.1 + eps).cloned().collect();
    if pts.len() < 8 {
        return Err(PhononError::Fit(format!("{} points in window {:?}, need 8", pts.len(), window)));
    }
    loglog_fit(&pts, 3)
}

/// Log-log least squares over all of `pts`; `(slope, stderr)`.
pub fn loglog_fit(pts: &[(f64, f64)], min_points: usize) -> Result<(f64, f64)> {
    if pts.len() < min_points.max(3) {
        return Err(PhononError::Fit(format!("{} points, need {}", pts.len(), min_points.max(3))));
    }
    if let Some((t, v)) = pts.iter().find(|(t, v)| !(*v > 0.0) || !(*t > 0.0)) {
        return Err(PhononError::Fit(format!("non-positive sample ({t}, {v})")));
    }
    let m = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(PhononError::Fit("degenerate time window".into()));
    }
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    let stderr = (ssr / (m - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}

/// Second- and third-order parts of `C[F(1+g)]/F` for the given events.
pub struct Perturbation<'a> {
    pub lin: &'a LinOperator,
    pub events: ResonantEvents,
    pub interp: Interp,
    fnode: Vec<f64>,
    // per event: stencils at p1, p2, p3 and the spectrum there
    stencils: Vec<[Stencil; 3]>,
    fvals: Vec<[f64; 3]>,
}

#[inline]
fn combos(a: [f64; 3], u: [f64; 3]) -> (f64, f64, f64) {
    // (a0+u0)(a1+u1)(a2+u2) split by degree in u
    let lin = u[0] * a[1] * a[2] + a[0] * u[1] * a[2] + a[0] * a[1] * u[2];
    let quad = a[0] * u[1] * u[2] + u[0] * a[1] * u[2] + u[0] * u[1] * a[2];
    (lin, quad, u[0] * u[1] * u[2])
}

impl<'a> Perturbation<'a> {
    pub fn new(lin: &'a LinOperator) -> Result<Self> {
        let events = ResonantEvents::build(lin.grid, lin.options.rule)?;
        let params = lin.params;
        let n = lin.grid.n();
        let interp = lin.options.interp;
        let fnode = lin.grid.nodes().iter().map(|&p| params.rj(p)).collect();
        let (stencils, fvals) = (0..events.len())
            .map(|k| {
                let p = [events.p1[k], events.p2[k], events.p3[k]];
                (p.map(|q| stencil(q, n, interp)), p.map(|q| params.rj(q)))
            })
            .unzip();
        Ok(Perturbation { lin, events, interp, fnode, stencils, fvals })
    }

    pub fn params(&self) -> RjParams {
        self.lin.params
    }

    fn parts(&self, g: &[f64], with_linear: bool) -> Vec<(f64, f64, f64)> {
        let ev = &self.events;
        (0..ev.grid.n())
            .into_par_iter()
            .map(|i| {
                let f0 = self.fnode[i];
                let u0 = f0 * g[i];
                let len = ev.row(i).len();
                let (mut t1, mut t2, mut t3) = (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
                for k in ev.row(i) {
                    let [f1, f2, f3] = self.fvals[k];
                    let [s1, s2, s3] = &self.stencils[k];
                    let (u1, u2, u3) = (f1 * s1.apply(g), f2 * s2.apply(g), f3 * s3.apply(g));
                    let a = combos([f1, f2, f3], [u1, u2, u3]);
                    let b = combos([f0, f2, f3], [u0, u2, u3]);
                    let c = combos([f0, f1, f3], [u0, u1, u3]);
                    let d = combos([f0, f1, f2], [u0, u1, u2]);
                    let w = ev.wk[k];
                    if with_linear {
                        t1.push(w * (a.0 + b.0 - c.0 - d.0));
                    }
                    t2.push(w * (a.1 + b.1 - c.1 - d.1));
                    t3.push(w * (a.2 + b.2 - c.2 - d.2));
                }
                (pairwise_sum(&t1) / f0, pairwise_sum(&t2) / f0, pairwise_sum(&t3) / f0)
            })
            .collect()
    }

    /// `(L_strong g, Q(g), C(g))`, where `L_strong` is the linear part of the same
    /// pointwise expansion (used only for cross-checks; time stepping uses the
    /// assembled matrix).
    pub fn expansion(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let parts = self.parts(g, true);
        (parts.iter().map(|p| p.0).collect(), parts.iter().map(|p| p.1).collect(), parts.iter().map(|p| p.2).collect())
    }

    pub fn rhs(&self, g: &[f64]) -> Vec<f64> {
        let parts = self.parts(g, false);
        let lg = &self.lin.matrix * DVector::from_column_slice(g);
        lg.iter().zip(&parts).map(|(a, p)| a + p.1 + p.2).collect()
    }
}

pub fn quadratic_term(g: &Field, lin: &LinOperator) -> Result<Field> {
    let p = Perturbation::new(lin)?;
    Ok(Field { grid: g.grid, values: p.expansion(&g.values).1 })
}

pub fn cubic_term(g: &Field, lin: &LinOperator) -> Result<Field> {
    let p = Perturbation::new(lin)?;
    Ok(Field { grid: g.grid, values: p.expansion(&g.values).2 })
}

fn step<F: Fn(&[f64]) -> Vec<f64>>(y: &[f64], dt: f64, integ: Integrator, rhs: &F) -> Vec<f64> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
    match integ {
        Integrator::Euler => axpy(y, dt, &rhs(y)),
        Integrator::Rk4 => {
            let k1 = rhs(y);
            let k2 = rhs(&axpy(y, 0.5 * dt, &k1));
            let k3 = rhs(&axpy(y, 0.5 * dt, &k2));
            let k4 = rhs(&axpy(y, dt, &k3));
            y.iter()
                .enumerate()
                .map(|(i, v)| v + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    }
}

fn norm_of(g: &Field, mu: f64, kind: NormKind) -> f64 {
    match kind {
        NormKind::Sup => g.weighted_sup(mu),
        NormKind::L2 => {
            let w = g.map(|p, v| omega(p).powf(mu) * v);
            w.dot(&w).sqrt()
        }
    }
}

fn record(t: f64, f: &Field, g: &Field, cfg: &EvolutionConfig) -> Record {
    let (mass, energy) = collision::conserved_quantities(f);
    let entropy = collision::entropy(f).unwrap_or(f64::NAN);
    let sup_w12 = g.weighted_sup(0.5);
    let sup_w16 = g.weighted_sup(1.0 / 6.0);
    let jt = japanese(t);
    Record {
        t,
        mass,
        energy,
        entropy,
        sup_w12,
        sup_w16,
        l2: g.dot(g).sqrt(),
        b16: jt.powf(0.4 - cfg.delta) * sup_w16,
        b12: jt.powf(0.6 - cfg.delta) * sup_w12,
        extra: cfg.norms.iter().map(|&(mu, k)| norm_of(g, mu, k)).collect(),
    }
}

fn run<R, D>(y0: Vec<f64>, cfg: &EvolutionConfig, rhs: R, diag: D) -> Result<(Vec<Record>, Vec<f64>)>
where
    R: Fn(&[f64]) -> Vec<f64>,
    D: Fn(f64, &[f64]) -> Result<Record>,
{
    let steps = cfg.steps();
    let mut cps: Vec<f64> = cfg.checkpoints.clone();
    cps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut next_cp = 0;
    let mut y = y0;
    let mut recs = vec![diag(0.0, &y)?];
    while next_cp < cps.len() && cps[next_cp] <= 0.0 {
        next_cp += 1;
    }
    for s in 1..=steps {
        let t_prev = (s - 1) as f64 * cfg.dt;
        let dt = (cfg.t_final - t_prev).min(cfg.dt);
        y = step(&y, dt, cfg.integrator, &rhs);
        let t = t_prev + dt;
        let mut take = (cfg.record_every > 0 && s % cfg.record_every == 0) || s == steps;
        while next_cp < cps.len() && cps[next_cp] <= t + 1e-12 {
            take = true;
            next_cp += 1;
        }
        if take {
            recs.push(diag(t, &y)?);
        }
    }
    Ok((recs, y))
}

fn blowup_check(t: f64, f: &Field, cap: f64) -> Result<()> {
    let m = f.min();
    if !(m > 0.0) {
        return Err(PhononError::Blowup { t, reason: format!("positivity lost, min f = {m:e}") });
    }
    let s = f.sup_norm();
    if s > cap {
        return Err(PhononError::Blowup { t, reason: format!("||f||_inf = {s:e} exceeds {cap:e}") });
    }
    Ok(())
}

/// RK4 (or Euler) trajectory of `f_t = C[f]`. The `g`-columns of the
/// records refer to `f - f0`.
pub fn evolve_nonlinear_f(f0: &Field, cfg: &EvolutionConfig, opts: &CollisionOptions) -> Result<Trajectory> {
    if !(f0.min() > 0.0) {
        return Err(PhononError::Positivity { min: f0.min(), floor: 0.0 });
    }
    let ev = ResonantEvents::build(f0.grid, opts.rule)?;
    let grid = f0.grid;
    // the stiffness of C at f0 is the multiplier of the spectrum itself
    let max_rate = linear_rate(f0, &ev, opts.interp);
    cfg.validate(max_rate)?;
    let cap = 1e3 * f0.sup_norm();
    let diag = |t: f64, y: &[f64]| -> Result<Record> {
        let f = Field { grid, values: y.to_vec() };
        blowup_check(t, &f, cap)?;
        let g = Field { grid, values: y.iter().zip(&f0.values).map(|(a, b)| a - b).collect() };
        Ok(record(t, &f, &g, cfg))
    };
    let rhs = |y: &[f64]| collision_with_events(y, &ev, opts.interp);
    let (records, y) = run(f0.values.clone(), cfg, rhs, diag)?;
    Ok(Trajectory { records, last: Field { grid, values: y } })
}

/// `max_i (1/f_i) sum_q wK f1 f2 f3`, the loss rate of the collision operator at `f`.
fn linear_rate(f: &Field, ev: &ResonantEvents, interp: Interp) -> f64 {
    let n = f.grid.n();
    (0..n)
        .map(|i| {
            let s: f64 = ev
                .row(i)
                .map(|k| {
                    ev.wk[k]
                        * stencil(ev.p1[k], n, interp).apply(&f.values)
                        * stencil(ev.p2[k], n, interp).apply(&f.values)
                        * stencil(ev.p3[k], n, interp).apply(&f.values)
                })
                .sum();
            s / f.values[i]
        })
        .fold(0.0, f64::max)
}

/// Trajectory of `g_t = Lg + Q(g) + C(g)`; mass, energy and entropy refer to `F(1+g)`.
pub fn evolve_perturbation(g0: &Field, lin: &LinOperator, cfg: &EvolutionConfig) -> Result<Trajectory> {
    let sys = Perturbation::new(lin)?;
    evolve_perturbation_with(g0, &sys, cfg)
}

pub fn evolve_perturbation_with(g0: &Field, sys: &Perturbation, cfg: &EvolutionConfig) -> Result<Trajectory> {
    let lin = sys.lin;
    cfg.validate(lin.a.sup_norm())?;
    let grid = g0.grid;
    let fnode: Vec<f64> = grid.nodes().iter().map(|&p| lin.params.rj(p)).collect();
    let to_f = |y: &[f64]| Field { grid, values: y.iter().zip(&fnode).map(|(g, f)| f * (1.0 + g)).collect() };
    let cap = 1e3 * to_f(&g0.values).sup_norm();
    let diag = |t: f64, y: &[f64]| -> Result<Record> {
        let f = to_f(y);
        blowup_check(t, &f, cap)?;
        Ok(record(t, &f, &Field { grid, values: y.to_vec() }, cfg))
    };
    let (records, y) = run(g0.values.clone(), cfg, |y: &[f64]| sys.rhs(y), diag)?;
    Ok(Trajectory { records, last: Field { grid, values: y } })
}

/// Fitted decay of `||omega^{1/2} g||_inf` over `window`, packaged with the drift.
pub fn decay_report(traj: &Trajectory, window: (f64, f64)) -> Result<DecayReport> {
    let series = traj.series(|r| r.sup_w12);
    let (exponent, stderr) = fit_power_law(&series, window)?;
    Ok(DecayReport { exponent, stderr, fit_window: window, series, conserved_drift: traj.conserved_drift() })
}
