//! The reduced collision operator on a uniform midpoint grid, field
//! diagnostics, and the three-bump family used to probe L^p bounds.

use crate::error::{PhononError, Result};
use crate::manifold::{self, omega, resonant_pair, TWO_PI};
use crate::quadrature::{pairwise_sum, ResonantRule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default floor below which a spectrum is rejected.
pub const POS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 16 {
            return Err(PhononError::Invalid(format!("grid size {n} < 16")));
        }
        Ok(Grid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self) -> f64 {
        TWO_PI / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.weight()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    /// Nodes `j` with `p_j` in the closed interval `[a, b]` (no wrap-around).
    pub fn index_range(&self, a: f64, b: f64) -> std::ops::RangeInclusive<usize> {
        let s = self.n as f64 / TWO_PI;
        let lo = (a * s - 0.5).ceil().max(0.0) as usize;
        let hi = (b * s - 0.5).floor().min(self.n as f64 - 1.0);
        if hi < lo as f64 {
            // empty range; RangeInclusive with start > end iterates nothing
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        lo..=hi as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(PhononError::Invalid(format!(
                "field has {} values for a grid of {}",
                values.len(),
                grid.n()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(PhononError::NonFinite { at: grid.node(j) });
        }
        Ok(Field { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Result<Self> {
        Field::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field { grid, values: vec![c; grid.n()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Field::constant(grid, 0.0)
    }

    pub fn map<F: Fn(f64, f64) -> f64>(&self, f: F) -> Field {
        let values = self.values.iter().enumerate().map(|(j, &v)| f(self.grid.node(j), v)).collect();
        Field { grid: self.grid, values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sup |omega^mu f|`.
    pub fn weighted_sup(&self, mu: f64) -> f64 {
        let g = self.grid;
        self.values.iter().enumerate().fold(0.0, |m, (j, v)| m.max(omega(g.node(j)).powf(mu) * v.abs()))
    }

    /// Discrete inner product `sum_j w u_j v_j`.
    pub fn dot(&self, other: &Field) -> f64 {
        let t: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        self.grid.weight() * pairwise_sum(&t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Interp {
    #[default]
    Linear,
    Cubic,
}

impl Interp {
    pub fn radius(self) -> usize {
        match self {
            Interp::Linear => 1,
            Interp::Cubic => 2,
        }
    }
}

/// Periodic Lagrange stencil on the midpoint nodes: `value = sum_k w[k] f[idx[k]]`.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
}

#[inline]
pub fn stencil(p: f64, n: usize, interp: Interp) -> Stencil {
    let mut s = p * n as f64 / TWO_PI - 0.5;
    // a node must reproduce its own value exactly
    let r = s.round();
    if (s - r).abs() <= 8.0 * f64::EPSILON * r.abs().max(1.0) {
        s = r;
    }
    let jf = s.floor();
    let t = s - jf;
    let j = jf as i64;
    let ni = n as i64;
    let at = |k: i64| (j + k).rem_euclid(ni) as usize;
    match interp {
        Interp::Linear => Stencil { idx: [at(0), at(1), at(0), at(0)], w: [1.0 - t, t, 0.0, 0.0] },
        Interp::Cubic => {
            let (tm, t1, t2) = (t + 1.0, t - 1.0, t - 2.0);
            Stencil {
                idx: [at(-1), at(0), at(1), at(2)],
                w: [-t * t1 * t2 / 6.0, tm * t1 * t2 / 2.0, -tm * t * t2 / 2.0, tm * t * t1 / 6.0],
            }
        }
    }
}

impl Stencil {
    #[inline]
    pub fn apply(&self, v: &[f64]) -> f64 {
        self.w[0] * v[self.idx[0]] + self.w[1] * v[self.idx[1]] + self.w[2] * v[self.idx[2]] + self.w[3] * v[self.idx[3]]
    }
}

/// Off-grid value of a field by periodic interpolation.
pub fn evaluate(field: &Field, p: f64, interp: Interp) -> f64 {
    stencil(manifold::canonicalize(p), field.grid.n(), interp).apply(&field.values)
}

/// Kernel `omega0 omega1 omega2 omega3 / sqrt(F+(p0, p2))` of the collision integral.
#[inline]
pub fn collision_kernel(x: f64, z: f64, p1: f64, p3: f64) -> f64 {
    let fp = manifold::f_plus(x, z);
    if fp <= 0.0 {
        return 0.0;
    }
    omega(x) * omega(p1) * omega(z) * omega(p3) / fp.sqrt()
}

/// All quadrature events `(p0 = node i, p2 = z_q)` of the resonant rule on a
/// grid, with `p1`, `p3` and the weighted kernel `w_q K(p0, p2)`.
#[derive(Debug, Clone)]
pub struct ResonantEvents {
    pub grid: Grid,
    pub rule: ResonantRule,
    /// Events of node `i` occupy `offsets[i]..offsets[i+1]`.
    pub offsets: Vec<usize>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub p3: Vec<f64>,
    pub wk: Vec<f64>,
}

impl ResonantEvents {
    pub fn build(grid: Grid, rule: ResonantRule) -> Result<Self> {
        rule.validate()?;
        let rows: Vec<[Vec<f64>; 4]> = (0..grid.n())
            .into_par_iter()
            .map(|i| {
                let x = grid.node(i);
                let r = rule.rule(x);
                let mut out = [
                    Vec::with_capacity(r.len()),
                    Vec::with_capacity(r.len()),
                    Vec::with_capacity(r.len()),
                    Vec::with_capacity(r.len()),
                ];
                for (&z, &w) in r.nodes.iter().zip(&r.weights) {
                    let (p1, p3) = resonant_pair(x, z);
                    out[0].push(p1);
                    out[1].push(z);
                    out[2].push(p3);
                    out[3].push(w * collision_kernel(x, z, p1, p3));
                }
                out
            })
            .collect();
        let mut ev = ResonantEvents {
            grid,
            rule,
            offsets: Vec::with_capacity(grid.n() + 1),
            p1: Vec::new(),
            p2: Vec::new(),
            p3: Vec::new(),
            wk: Vec::new(),
        };
        ev.offsets.push(0);
        for [a, b, c, d] in rows {
            ev.p1.extend(a);
            ev.p2.extend(b);
            ev.p3.extend(c);
            ev.wk.extend(d);
            ev.offsets.push(ev.p1.len());
        }
        Ok(ev)
    }

    pub fn len(&self) -> usize {
        self.wk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wk.is_empty()
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionOptions {
    pub interp: Interp,
    pub rule: ResonantRule,
    pub pos_floor: f64,
}

impl Default for CollisionOptions {
    fn default() -> Self {
        CollisionOptions { interp: Interp::Linear, rule: ResonantRule::default(), pos_floor: POS_FLOOR }
    }
}

#[inline]
fn bracket(f0: f64, f1: f64, f2: f64, f3: f64) -> f64 {
    // prod f_l (1/f0 + 1/f1 - 1/f2 - 1/f3), expanded so that zeros are allowed
    f1 * f2 * f3 + f0 * f2 * f3 - f0 * f1 * f3 - f0 * f1 * f2
}

/// `C[f]` at every node from precomputed events; no positivity check.
pub fn collision_with_events(values: &[f64], ev: &ResonantEvents, interp: Interp) -> Vec<f64> {
    let n = ev.grid.n();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let f0 = values[i];
            let r = ev.row(i);
            let terms: Vec<f64> = r
                .map(|k| {
                    let f1 = stencil(ev.p1[k], n, interp).apply(values);
                    let f2 = stencil(ev.p2[k], n, interp).apply(values);
                    let f3 = stencil(ev.p3[k], n, interp).apply(values);
                    ev.wk[k] * bracket(f0, f1, f2, f3)
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect()
}

fn check_positive(f: &Field, floor: f64) -> Result<()> {
    let m = f.min();
    if !(m >= floor) {
        return Err(PhononError::Positivity { min: m, floor });
    }
    Ok(())
}

/// `C[f](p0) = \int omega0 omega1 omega2 omega3 / sqrt(F+) prod f_l (1/f0 + 1/f1 - 1/f2 - 1/f3) dp2`.
pub fn collision_operator(f: &Field) -> Result<Field> {
    collision_operator_with(f, &CollisionOptions::default())
}

pub fn collision_operator_with(f: &Field, opts: &CollisionOptions) -> Result<Field> {
    check_positive(f, opts.pos_floor)?;
    let ev = ResonantEvents::build(f.grid, opts.rule)?;
    Ok(Field { grid: f.grid, values: collision_with_events(&f.values, &ev, opts.interp) })
}

/// Maximal runs `[lo, hi]` of nonzero values.
fn support_runs(values: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (j, &v) in values.iter().enumerate() {
        match (v != 0.0, start) {
            (true, None) => start = Some(j),
            (false, Some(s)) => {
                runs.push((s, j - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, values.len() - 1));
    }
    runs
}

/// Collision operator for a nonnegative field with small support.
///
/// By the `p2 <-> p3` symmetry of the measure the integrand can be written as
/// `K [f1 f2 f3 + f0 f2 f3 - 2 f0 f1 f2]`, in which every term carries `f2`,
/// so the `p2` integral runs over the support nodes only (midpoint weights,
/// exact nodal values of `f2`). Output is computed only at nodes that can be
/// reached, namely the support and `supp + supp - supp` padded by the
/// interpolation radius. All other values are exactly zero.
pub fn collision_operator_sparse(f: &Field, interp: Interp) -> Result<Field> {
    if let Some(j) = f.values.iter().position(|&v| v < 0.0) {
        return Err(PhononError::Positivity { min: f.values[j], floor: 0.0 });
    }
    let grid = f.grid;
    let n = grid.n();
    let runs = support_runs(&f.values);
    let mut out = vec![0.0; n];
    if runs.is_empty() {
        return Ok(Field { grid, values: out });
    }
    let pad = interp.radius() as i64 + 1;
    let padded: Vec<(i64, i64)> = runs.iter().map(|&(a, b)| (a as i64 - pad, b as i64 + pad)).collect();
    let mut mask = vec![false; n];
    for &(a, b) in &runs {
        mask[a..=b].iter_mut().for_each(|m| *m = true);
    }
    let ni = n as i64;
    for a in &padded {
        for b in &padded {
            for c in &padded {
                let (lo, hi) = (a.0 + b.0 - c.1, a.1 + b.1 - c.0);
                if hi - lo + 1 >= ni {
                    mask.iter_mut().for_each(|m| *m = true);
                } else {
                    for j in lo..=hi {
                        mask[j.rem_euclid(ni) as usize] = true;
                    }
                }
            }
        }
    }
    let targets: Vec<usize> = (0..n).filter(|&j| mask[j]).collect();
    let supp: Vec<usize> = runs.iter().flat_map(|&(a, b)| a..=b).collect();
    let zs: Vec<(f64, f64)> = supp.iter().map(|&j| (grid.node(j), f.values[j])).collect();
    let w = grid.weight();
    let vals = &f.values;
    let res: Vec<(usize, f64)> = targets
        .par_iter()
        .map(|&i| {
            let x = grid.node(i);
            let f0 = vals[i];
            let terms: Vec<f64> = zs
                .iter()
                .map(|&(z, f2)| {
                    let (p1, p3) = resonant_pair(x, z);
                    let f1 = stencil(p1, n, interp).apply(vals);
                    let f3 = stencil(p3, n, interp).apply(vals);
                    let b = f1 * f2 * f3 + f0 * f2 * f3 - 2.0 * f0 * f1 * f2;
                    if b == 0.0 {
                        0.0
                    } else {
                        w * collision_kernel(x, z, p1, p3) * b
                    }
                })
                .collect();
            (i, pairwise_sum(&terms))
        })
        .collect();
    for (i, v) in res {
        out[i] = v;
    }
    Ok(Field { grid, values: out })
}

/// Mass `\int f` and energy `\int omega f`.
pub fn conserved_quantities(f: &Field) -> (f64, f64) {
    let g = f.grid;
    let m: Vec<f64> = f.values.clone();
    let e: Vec<f64> = f.values.iter().enumerate().map(|(j, v)| omega(g.node(j)) * v).collect();
    (g.weight() * pairwise_sum(&m), g.weight() * pairwise_sum(&e))
}

/// `\int log f`.
pub fn entropy(f: &Field) -> Result<f64> {
    check_positive(f, f64::MIN_POSITIVE)?;
    let t: Vec<f64> = f.values.iter().map(|v| v.ln()).collect();
    Ok(f.grid.weight() * pairwise_sum(&t))
}

pub fn lp_norm(f: &Field, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(PhononError::Invalid(format!("L^p exponent {p} < 1")));
    }
    if p.is_infinite() {
        return Ok(f.sup_norm());
    }
    let t: Vec<f64> = f.values.iter().map(|v| v.abs().powf(p)).collect();
    Ok((f.grid.weight() * pairwise_sum(&t)).powf(1.0 / p))
}

/// The three points of the unboundedness construction: `p0 = 2`,
/// `p2 = z0` with `ubar(2, z0) = z0`, and `p1 = h(2, z0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoints {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

pub fn special_points() -> Result<SpecialPoints> {
    let p0 = 2.0;
    let p2 = manifold::symmetric_point(p0)?;
    let p1 = manifold::h(p0, p2)?;
    Ok(SpecialPoints { p0, p1, p2 })
}

/// Where the `p0` bump of the three-bump family sits relative to `p0 = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BumpPlacement {
    /// All three bumps start at their point: `[p, p + width]`.
    AsWritten,
    /// The `p0` bump is `[2 - eps^2, 2]`. Since `d/dx h(x, z0) < 0` at `x = 2`,
    /// only `p0 < 2` lifts `max h(p0, .)` into `[p1, p1 + eps^2]`.
    #[default]
    Reachable,
}

/// `f^eps = eps^{-2/p} 1_{I0} + eps^{-2/p} 1_{[p1, p1+eps^2]} + eps^{-1/p} 1_{[p2, p2+eps]}`,
/// realized as exact node-aligned indicator functions.
pub fn epsilon_family(eps: f64, grid: Grid, p: f64, placement: BumpPlacement) -> Result<Field> {
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(PhononError::Invalid(format!("eps = {eps} outside (0, 0.1]")));
    }
    let e2 = eps * eps;
    let need = (32.0 / e2).ceil() as usize;
    if grid.n() < need {
        return Err(PhononError::Resolution { n: grid.n(), eps2: e2, need });
    }
    let sp = special_points()?;
    let a0 = match placement {
        BumpPlacement::AsWritten => sp.p0,
        BumpPlacement::Reachable => sp.p0 - e2,
    };
    let mut v = vec![0.0; grid.n()];
    for (a, width, amp) in [(a0, e2, eps.powf(-2.0 / p)), (sp.p1, e2, eps.powf(-2.0 / p)), (sp.p2, eps, eps.powf(-1.0 / p))] {
        for j in grid.index_range(a, a + width) {
            v[j] += amp;
        }
    }
    Field::new(grid, v)
}

/// Smallest power-of-two grid with `n >= 32 / eps^2`.
pub fn grid_for_eps(eps: f64) -> Result<Grid> {
    Grid::new(((32.0 / (eps * eps)).ceil() as usize).next_power_of_two().max(16))
}
