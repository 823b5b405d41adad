//! Quadrature rules: periodic composite midpoint, inverse-square-root endpoint
//! rules, and the graded Gauss-Legendre layout used for integrals over the
//! resonant manifold.

use crate::error::{PhononError, Result};
use crate::manifold::TWO_PI;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub n_panels: usize,
    pub singularity_points: Vec<f64>,
    pub local_order: usize,
    pub tol_abs: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { n_panels: 512, singularity_points: Vec::new(), local_order: 16, tol_abs: 1e-9 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_panels < 8 {
            return Err(PhononError::Invalid(format!("n_panels = {} < 8", self.n_panels)));
        }
        if self.local_order < 4 {
            return Err(PhononError::Invalid(format!("local_order = {} < 4", self.local_order)));
        }
        let pts = &self.singularity_points;
        if pts.windows(2).any(|w| w[0] > w[1]) || pts.iter().any(|&p| !(0.0..=TWO_PI).contains(&p)) {
            return Err(PhononError::Invalid("singularity points must be sorted within [0, 2 pi]".into()));
        }
        Ok(())
    }
}

/// A set of nodes and weights.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn apply<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let terms: Vec<f64> = self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).collect();
        pairwise_sum(&terms)
    }
}

/// Pairwise (cascade) summation; the reduction order depends only on the length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let m = v.len() / 2;
    pairwise_sum(&v[..m]) + pairwise_sum(&v[m..])
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    for i in 0..(k + 1) / 2 {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for j in 2..=k {
                let pj = ((2 * j - 1) as f64 * t * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = pj;
            }
            dp = k as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -t;
        x[k - 1 - i] = t;
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        w[i] = wi;
        w[k - 1 - i] = wi;
    }
    (x, w)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(16))
}

/// Composite Gauss-Legendre rule of order `k` on consecutive break points.
pub fn composite_gauss(breaks: &[f64], k: usize) -> Rule {
    let owned;
    let (t, wt) = if k == 16 {
        gl16()
    } else {
        owned = gauss_legendre(k);
        &owned
    };
    let mut r = Rule { nodes: Vec::with_capacity(breaks.len() * k), weights: Vec::with_capacity(breaks.len() * k) };
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for (ti, wi) in t.iter().zip(wt) {
            r.nodes.push(c + h * ti);
            r.weights.push(h * wi);
        }
    }
    r
}

/// `ratio`-geometric break points accumulating at `a` (toward_a) or `b`.
pub fn graded_breaks(a: f64, b: f64, levels: usize, ratio: f64, toward_a: bool) -> Vec<f64> {
    let mut out = vec![a, b];
    let mut w = b - a;
    for _ in 0..levels {
        w *= ratio;
        out.push(if toward_a { a + w } else { b - w });
    }
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

/// Composite midpoint rule over `(0, 2 pi)` with `spec.n_panels` nodes.
pub fn integrate_periodic<F: Fn(f64) -> f64>(f: F, spec: &QuadratureSpec) -> Result<f64> {
    let n = spec.n_panels;
    let w = TWO_PI / n as f64;
    let mut terms = Vec::with_capacity(n);
    for j in 0..n {
        let p = (j as f64 + 0.5) * w;
        let v = f(p);
        if !v.is_finite() {
            return Err(PhononError::NonFinite { at: p });
        }
        terms.push(w * v);
    }
    Ok(pairwise_sum(&terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// The radicand is positive to the left of `s`; integrate over `[far, s]`.
    Left,
    /// The radicand is positive to the right of `s`; integrate over `[s, far]`.
    Right,
}

/// `\int f(y) / sqrt(radicand(y)) dy` between `far` and the zero `s` of the
/// radicand. The two panels next to `s` are mapped by `y = s -+ u^2`, which
/// removes the inverse square root; the remaining panels use composite
/// Gauss-Legendre of order `spec.local_order`.
pub fn integrate_inverse_sqrt<F, R>(f: F, s: f64, radicand: R, side: Side, far: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
    R: Fn(f64) -> f64,
{
    spec.validate()?;
    let len = match side {
        Side::Left => s - far,
        Side::Right => far - s,
    };
    if !(len > 0.0) {
        return Err(PhononError::Invalid(format!("empty interval between {far} and {s}")));
    }
    let sgn = if side == Side::Left { -1.0 } else { 1.0 };
    let probe = s + sgn * (len * 1e-6).min(1e-6);
    if !(radicand(probe) > 0.0) {
        return Err(PhononError::SingularityMismatch { at: s });
    }
    let n = spec.n_panels.max(2);
    let hpan = len / n as f64;
    let k = spec.local_order;
    // regular part: panels 2..n counted from s
    let mut breaks = Vec::with_capacity(n);
    for j in 2..=n {
        breaks.push(s + sgn * hpan * j as f64);
    }
    if side == Side::Left {
        breaks.reverse();
    }
    let reg = composite_gauss(&breaks, k);
    // singular part on |y - s| <= 2 hpan: y = s + sgn u^2, dy = 2u du
    let umax = (2.0 * hpan).sqrt();
    let sing = composite_gauss(&[0.0, 0.5 * umax, umax], k);
    let mut terms = Vec::with_capacity(reg.len() + sing.len());
    for (&y, &w) in reg.nodes.iter().zip(&reg.weights) {
        let r = radicand(y);
        let v = if r > 0.0 { f(y) / r.sqrt() } else { 0.0 };
        if !v.is_finite() {
            return Err(PhononError::NonFinite { at: y });
        }
        terms.push(w * v);
    }
    for (&u, &w) in sing.nodes.iter().zip(&sing.weights) {
        let y = s + sgn * u * u;
        let r = radicand(y);
        let v = if r > 0.0 { 2.0 * u * f(y) / r.sqrt() } else { 0.0 };
        if !v.is_finite() {
            return Err(PhononError::NonFinite { at: y });
        }
        terms.push(w * v);
    }
    Ok(pairwise_sum(&terms))
}

/// Layout of the `p2` rule used for integrals over the resonant manifold at
/// fixed `p0 = x`: uniform Gauss-Legendre panels, geometric refinement toward
/// both ends of `(0, 2 pi)` and a break point at `x`, where `p1 = p3 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonantRule {
    pub panels: usize,
    pub order: usize,
    pub levels: usize,
    pub ratio: f64,
}

impl Default for ResonantRule {
    fn default() -> Self {
        ResonantRule { panels: 64, order: 16, levels: 45, ratio: 0.5 }
    }
}

impl ResonantRule {
    pub fn validate(&self) -> Result<()> {
        if self.panels < 8 || self.order < 4 || !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(PhononError::Invalid(format!("bad resonant rule {self:?}")));
        }
        Ok(())
    }

    pub fn breaks(&self, x: f64) -> Vec<f64> {
        let h = TWO_PI / self.panels as f64;
        let mut br: Vec<f64> = (0..=self.panels).map(|j| j as f64 * h).collect();
        br.extend(graded_breaks(0.0, h, self.levels, self.ratio, true));
        br.extend(graded_breaks(TWO_PI - h, TWO_PI, self.levels, self.ratio, false));
        if x > 0.0 && x < TWO_PI {
            br.push(x);
        }
        br.sort_by(|a, b| a.partial_cmp(b).unwrap());
        br.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
        br
    }

    pub fn rule(&self, x: f64) -> Rule {
        composite_gauss(&self.breaks(x), self.order)
    }

    /// Rule without the interior break point, for `x`-independent integrals.
    pub fn plain(&self) -> Rule {
        self.rule(-1.0)
    }

    pub fn key_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend((self.panels as u64).to_le_bytes());
        v.extend((self.order as u64).to_le_bytes());
        v.extend((self.levels as u64).to_le_bytes());
        v.extend(self.ratio.to_le_bytes());
        v
    }
}
