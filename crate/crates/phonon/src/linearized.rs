//! The linearized operator `L = -A + K` around a Rayleigh-Jeans spectrum.
//!
//! `L` is assembled from its Dirichlet form
//! `<-Lg, g> = 1/4 \int\int rho (g0/f0 + g1/f1 - g2/f2 - g3/f3)^2`,
//! one rank-one term per quadrature event, with off-grid values of `g`
//! taken by periodic interpolation. The matrix is symmetric and negative
//! semidefinite by construction, and the constant vector
//! `beta omega f + gamma f = 1` is an exact null vector.

use crate::collision::{stencil, Field, Grid, Interp, ResonantEvents};
use crate::dynamics::{fit_power_law, DecayReport};
use crate::error::{PhononError, Result};
use crate::manifold::{self, omega, resonant_pair, TWO_PI};
use crate::quadrature::{integrate_inverse_sqrt, pairwise_sum, QuadratureSpec, ResonantRule, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RjParams {
    pub beta: f64,
    pub gamma: f64,
}

impl RjParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0 && gamma >= 0.0 && beta.is_finite() && gamma.is_finite()) {
            return Err(PhononError::Invalid(format!("need beta > 0, gamma >= 0; got ({beta}, {gamma})")));
        }
        Ok(RjParams { beta, gamma })
    }

    pub fn is_singular(&self) -> bool {
        self.gamma == 0.0
    }

    /// `1 / (beta omega(p) + gamma)`.
    #[inline]
    pub fn rj(&self, p: f64) -> f64 {
        1.0 / (self.beta * omega(p) + self.gamma)
    }

    fn require_regular(&self) -> Result<()> {
        if self.is_singular() {
            return Err(PhononError::Invalid("the linearized theory needs gamma > 0".into()));
        }
        Ok(())
    }
}

/// `a(p) = (omega/f) \int omega1 omega2 omega3 f1 f2 f3 dp2 / sqrt(F+(p, p2))` at a single point.
pub fn multiplier_at(p: f64, params: &RjParams, rule: &ResonantRule) -> f64 {
    let r = rule.rule(p);
    let f0 = params.rj(p);
    let terms: Vec<f64> = r
        .nodes
        .iter()
        .zip(&r.weights)
        .map(|(&z, &w)| {
            let (p1, p3) = resonant_pair(p, z);
            w * crate::collision::collision_kernel(p, z, p1, p3) * params.rj(p1) * params.rj(z) * params.rj(p3)
        })
        .collect();
    pairwise_sum(&terms) / f0
}

fn multiplier_from_events(params: &RjParams, ev: &ResonantEvents) -> Vec<f64> {
    let g = ev.grid;
    (0..g.n())
        .into_par_iter()
        .map(|i| {
            let t: Vec<f64> = ev
                .row(i)
                .map(|k| ev.wk[k] * params.rj(ev.p1[k]) * params.rj(ev.p2[k]) * params.rj(ev.p3[k]))
                .collect();
            pairwise_sum(&t) / params.rj(g.node(i))
        })
        .collect()
}

pub fn multiplier_a(params: &RjParams, grid: Grid) -> Result<Field> {
    multiplier_a_with(params, grid, &ResonantRule::default())
}

pub fn multiplier_a_with(params: &RjParams, grid: Grid, rule: &ResonantRule) -> Result<Field> {
    let ev = ResonantEvents::build(grid, *rule)?;
    Field::new(grid, multiplier_from_events(params, &ev))
}

/// `K2(p, p2) = omega omega1 omega2 omega3 f1 f3 / sqrt(F+(p, p2))`.
pub fn kernel_k2(p: f64, p2: f64, params: &RjParams) -> f64 {
    let (p1, p3) = resonant_pair(p, p2);
    crate::collision::collision_kernel(p, p2, p1, p3) * params.rj(p1) * params.rj(p3)
}

/// `K1(p, p1) = sum over both preimages p2 of omega omega1 omega2 omega3 f2 f3 / sqrt(F-(p, p1))`,
/// zero where `F-(p, p1) <= 0`.
pub fn kernel_k1(p: f64, p1: f64, params: &RjParams) -> f64 {
    let fm = manifold::f_minus(p, p1);
    if fm <= 0.0 {
        return 0.0;
    }
    k1_numerator(p, p1, params) / fm.sqrt()
}

fn k1_numerator(p: f64, p1: f64, params: &RjParams) -> f64 {
    match manifold::h_inverse(p, p1) {
        None => 0.0,
        Some(zs) => zs
            .iter()
            .map(|&z| {
                let p3 = manifold::canonicalize(p + p1 - z);
                omega(p) * omega(p1) * omega(z) * omega(p3) * params.rj(z) * params.rj(p3)
            })
            .sum(),
    }
}

/// `\int K1(p, p1) dp1` over both positivity intervals `(0, y')` and `(y'', 2 pi)`,
/// with the inverse square roots at `y'`, `y''` removed by substitution.
pub fn k1_row_integral(p: f64, params: &RjParams, spec: &QuadratureSpec) -> Result<f64> {
    let zs = manifold::f_minus_zeros(p)?;
    let num = |y: f64| k1_numerator(p, y, params);
    let rad = |y: f64| manifold::f_minus(p, y);
    let left = integrate_inverse_sqrt(num, zs.y_prime, rad, Side::Left, 0.0, spec)?;
    let right = integrate_inverse_sqrt(num, zs.y_double_prime, rad, Side::Right, TWO_PI, spec)?;
    Ok(left + right)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub interp: Interp,
    pub rule: ResonantRule,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { interp: Interp::Cubic, rule: ResonantRule::default() }
    }
}

impl AssemblyOptions {
    /// SHA-256 of the quadrature layout and interpolation order.
    pub fn hash(&self) -> [u8; 32] {
        let mut b = self.rule.key_bytes();
        b.push(match self.interp {
            Interp::Linear => 1,
            Interp::Cubic => 3,
        });
        let d = Sha256::digest(&b);
        let mut out = [0u8; 32];
        out.copy_from_slice(d.as_slice());
        out
    }
}

#[derive(Debug, Clone)]
pub struct LinOperator {
    pub grid: Grid,
    pub params: RjParams,
    pub options: AssemblyOptions,
    pub a: Field,
    /// The matrix of `L` acting on nodal values.
    pub matrix: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` belongs to `eigenvalues[k]`; unit Euclidean norm.
    pub eigenvectors: DMatrix<f64>,
    pub tol_ker: f64,
    pub spectral_tol: f64,
}

fn dirichlet_matrix(params: &RjParams, ev: &ResonantEvents, interp: Interp) -> DMatrix<f64> {
    let grid = ev.grid;
    let n = grid.n();
    let fnode: Vec<f64> = grid.nodes().iter().map(|&p| params.rj(p)).collect();
    // fixed, size-dependent chunking keeps the reduction order independent of the thread count
    let chunks = ((64usize << 20) / (n * n * 8)).clamp(1, 8);
    let per = n.div_ceil(chunks);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = vec![0.0; n * n];
            let mut idx = [0usize; 13];
            let mut val = [0.0f64; 13];
            for i in (c * per)..((c + 1) * per).min(n) {
                let f0 = fnode[i];
                for k in ev.row(i) {
                    let (p1, p2, p3) = (ev.p1[k], ev.p2[k], ev.p3[k]);
                    let (f1, f2, f3) = (params.rj(p1), params.rj(p2), params.rj(p3));
                    let rho = 0.25 * ev.wk[k] * f0 * f1 * f2 * f3;
                    if rho == 0.0 {
                        continue;
                    }
                    idx[0] = i;
                    val[0] = -1.0 / f0;
                    let mut len = 1;
                    for (p, fv, sg) in [(p1, f1, -1.0), (p2, f2, 1.0), (p3, f3, 1.0)] {
                        let s = stencil(p, n, interp);
                        for q in 0..4 {
                            if s.w[q] != 0.0 {
                                idx[len] = s.idx[q];
                                val[len] = sg * s.w[q] / fv;
                                len += 1;
                            }
                        }
                    }
                    for r in 0..len {
                        let row = idx[r] * n;
                        let vr = rho * val[r];
                        for s in 0..len {
                            m[row + idx[s]] -= vr * val[s];
                        }
                    }
                }
            }
            m
        })
        .collect();
    let mut total = vec![0.0; n * n];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    // row-major buffer of a symmetric matrix
    DMatrix::from_row_slice(n, n, &total)
}

fn rel_residual(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let x = DVector::from_column_slice(v);
    (m * &x).norm() / x.norm()
}

/// Kernel vectors `f` and `omega f` on the grid.
pub fn kernel_vectors(params: &RjParams, grid: Grid) -> (Vec<f64>, Vec<f64>) {
    let f: Vec<f64> = grid.nodes().iter().map(|&p| params.rj(p)).collect();
    let wf: Vec<f64> = grid.nodes().iter().zip(&f).map(|(&p, v)| omega(p) * v).collect();
    (f, wf)
}

pub fn assemble(params: &RjParams, grid: Grid) -> Result<LinOperator> {
    assemble_with(params, grid, &AssemblyOptions::default())
}

pub fn assemble_with(params: &RjParams, grid: Grid, opts: &AssemblyOptions) -> Result<LinOperator> {
    let op = assemble_unchecked(params, grid, opts)?;
    op.check_spectrum()?;
    Ok(op)
}

/// Assembly and eigendecomposition without the spectral checks.
pub fn assemble_unchecked(params: &RjParams, grid: Grid, opts: &AssemblyOptions) -> Result<LinOperator> {
    params.require_regular()?;
    if grid.n() < 64 {
        return Err(PhononError::Invalid(format!("assembly needs n >= 64, got {}", grid.n())));
    }
    let ev = ResonantEvents::build(grid, opts.rule)?;
    let a = Field::new(grid, multiplier_from_events(params, &ev))?;
    let matrix = dirichlet_matrix(params, &ev, opts.interp);
    drop(ev);
    let (f, wf) = kernel_vectors(params, grid);
    let tol_ker = rel_residual(&matrix, &f).max(rel_residual(&matrix, &wf));
    let spectral_tol = (10.0 * tol_ker).max(1e-8);
    let (eigenvalues, eigenvectors) = sorted_eigen(&matrix);
    Ok(LinOperator { grid, params: *params, options: *opts, a, matrix, eigenvalues, eigenvectors, tol_ker, spectral_tol })
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let se = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

impl LinOperator {
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// `K = L + diag(a)`.
    pub fn k_matrix(&self) -> DMatrix<f64> {
        let mut k = self.matrix.clone();
        for i in 0..self.n() {
            k[(i, i)] += self.a.values[i];
        }
        k
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).norm() / self.matrix.norm()
    }

    pub fn near_null_count(&self) -> usize {
        self.eigenvalues.iter().filter(|l| l.abs() <= self.spectral_tol).count()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// Largest principal angle between the top-two eigenspace and `span{f, omega f}`.
    pub fn null_space_angle(&self) -> f64 {
        let n = self.n();
        let (f, wf) = kernel_vectors(&self.params, self.grid);
        let mut q = DMatrix::zeros(n, 2);
        q.set_column(0, &DVector::from_column_slice(&f));
        q.set_column(1, &DVector::from_column_slice(&wf));
        let qr = q.qr().q();
        let v = self.eigenvectors.columns(n - 2, 2);
        let s = (qr.transpose() * v).singular_values();
        s.min().clamp(-1.0, 1.0).acos()
    }

    pub fn check_spectrum(&self) -> Result<()> {
        let top = self.max_eigenvalue();
        if top > self.spectral_tol {
            return Err(PhononError::Spectral(format!(
                "eigenvalue {top:e} exceeds spectral_tol {:e}",
                self.spectral_tol
            )));
        }
        let c = self.near_null_count();
        if c != 2 {
            return Err(PhononError::Spectral(format!(
                "{c} eigenvalues within {:e} of zero, expected 2",
                self.spectral_tol
            )));
        }
        Ok(())
    }

    pub fn apply(&self, g: &Field) -> Field {
        let v = &self.matrix * DVector::from_column_slice(&g.values);
        Field { grid: self.grid, values: v.as_slice().to_vec() }
    }

    /// `<-Lg, g>` in the grid inner product.
    pub fn dissipation(&self, g: &Field) -> f64 {
        -self.apply(g).dot(g)
    }

    /// Spectral coefficients `V^T g`.
    pub fn coefficients(&self, g: &Field) -> DVector<f64> {
        self.eigenvectors.transpose() * DVector::from_column_slice(&g.values)
    }

    pub fn from_coefficients(&self, c0: &DVector<f64>, t: f64) -> Field {
        let scaled = DVector::from_iterator(self.n(), c0.iter().zip(&self.eigenvalues).map(|(c, l)| c * (l * t).exp()));
        let v = &self.eigenvectors * scaled;
        Field { grid: self.grid, values: v.as_slice().to_vec() }
    }

    /// Cache key: `(n, beta, gamma, quadrature hash)`.
    pub fn key(&self) -> CacheKey {
        CacheKey { n: self.n() as u64, beta: self.params.beta, gamma: self.params.gamma, hash: self.options.hash() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(CACHE_MAGIC)?;
        self.key().write(&mut out)?;
        let n = self.n();
        let mut put = |v: f64| out.write_all(&v.to_le_bytes());
        for i in 0..n {
            for j in 0..n {
                put(self.matrix[(i, j)])?;
            }
        }
        for &v in &self.a.values {
            put(v)?;
        }
        for &v in &self.eigenvalues {
            put(v)?;
        }
        for j in 0..n {
            for i in 0..n {
                put(self.eigenvectors[(i, j)])?;
            }
        }
        put(self.tol_ker)?;
        out.flush()?;
        Ok(())
    }

    /// Loads a cached operator; returns `Ok(None)` if the file's key differs.
    pub fn load(path: &Path, params: &RjParams, grid: Grid, opts: &AssemblyOptions) -> Result<Option<LinOperator>> {
        let mut inp = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        inp.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Ok(None);
        }
        let key = CacheKey::read(&mut inp)?;
        let want = CacheKey { n: grid.n() as u64, beta: params.beta, gamma: params.gamma, hash: opts.hash() };
        if key != want {
            return Ok(None);
        }
        let n = grid.n();
        let mut buf = [0u8; 8];
        let mut get = || -> Result<f64> {
            inp.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        let mut matrix = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                matrix[(i, j)] = get()?;
            }
        }
        let a: Vec<f64> = (0..n).map(|_| get()).collect::<Result<_>>()?;
        let eigenvalues: Vec<f64> = (0..n).map(|_| get()).collect::<Result<_>>()?;
        let mut eigenvectors = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                eigenvectors[(i, j)] = get()?;
            }
        }
        let tol_ker = get()?;
        Ok(Some(LinOperator {
            grid,
            params: *params,
            options: *opts,
            a: Field::new(grid, a)?,
            matrix,
            eigenvalues,
            eigenvectors,
            tol_ker,
            spectral_tol: (10.0 * tol_ker).max(1e-8),
        }))
    }
}

const CACHE_MAGIC: &[u8; 8] = b"PHLINOP1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheKey {
    pub n: u64,
    pub beta: f64,
    pub gamma: f64,
    pub hash: [u8; 32],
}

impl CacheKey {
    fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&self.beta.to_le_bytes())?;
        w.write_all(&self.gamma.to_le_bytes())?;
        w.write_all(&self.hash)
    }

    fn read<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let beta = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let gamma = f64::from_le_bytes(b8);
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash)?;
        Ok(CacheKey { n, beta, gamma, hash })
    }
}

/// Loads from `path` when the key matches, otherwise assembles and writes the cache.
pub fn assemble_cached(params: &RjParams, grid: Grid, opts: &AssemblyOptions, path: &Path) -> Result<LinOperator> {
    if path.exists() {
        if let Ok(Some(op)) = LinOperator::load(path, params, grid, opts) {
            op.check_spectrum()?;
            return Ok(op);
        }
    }
    let op = assemble_with(params, grid, opts)?;
    op.save(path)?;
    Ok(op)
}

/// `e^{tL} g0` by spectral expansion.
pub fn semigroup_apply(l: &LinOperator, g0: &Field, t: f64) -> Result<Field> {
    if !(t >= 0.0) {
        return Err(PhononError::Invalid(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(g0.clone());
    }
    Ok(l.from_coefficients(&l.coefficients(g0), t))
}

/// Removes the component along `span{f, omega f}` (Gram-Schmidt in the grid inner product).
pub fn project_out_kernel(l: &LinOperator, g: &Field) -> Field {
    project_out(&l.params, g)
}

pub fn project_out(params: &RjParams, g: &Field) -> Field {
    let (f, wf) = kernel_vectors(params, g.grid);
    let grid = g.grid;
    let e1 = Field { grid, values: f };
    let n1 = e1.dot(&e1).sqrt();
    let e1 = e1.map(|_, v| v / n1);
    let wf = Field { grid, values: wf };
    let c = wf.dot(&e1);
    let e2 = Field { grid, values: wf.values.iter().zip(&e1.values).map(|(a, b)| a - c * b).collect() };
    let n2 = e2.dot(&e2).sqrt();
    let e2 = e2.map(|_, v| v / n2);
    let mut out = g.clone();
    for _ in 0..2 {
        for e in [&e1, &e2] {
            let c = out.dot(e);
            out.values.iter_mut().zip(&e.values).for_each(|(o, v)| *o -= c * v);
        }
    }
    out
}

/// Smooth random field `sum_{k=1}^{modes} (a_k cos kp + b_k sin kp) / k` with
/// coefficients uniform in `[-1, 1]`, plus a uniform random mean in `[-1, 1]`.
pub fn random_smooth(grid: Grid, modes: usize, seed: u64) -> Field {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let c0: f64 = rng.gen_range(-1.0..1.0);
    let ab: Vec<(f64, f64)> = (0..modes).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let values = grid
        .nodes()
        .iter()
        .map(|&p| {
            c0 + ab
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let kk = (k + 1) as f64;
                    (a * (kk * p).cos() + b * (kk * p).sin()) / kk
                })
                .sum::<f64>()
        })
        .collect();
    Field { grid, values }
}

/// `g0 = eps omega^nu r / ||r||_inf` with `r` the part of `base` orthogonal to
/// `omega^nu f` and `omega^{nu+1} f`, so that `g0` is orthogonal to the kernel
/// of `L` and `||omega^{-nu} g0||_inf = eps`.
pub fn admissible_data(params: &RjParams, base: &Field, nu: f64, eps: f64) -> Result<Field> {
    let grid = base.grid;
    let w: Vec<f64> = grid.nodes().iter().map(|&p| omega(p).powf(nu)).collect();
    let (f, wf) = kernel_vectors(params, grid);
    let e = [
        f.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<f64>>(),
        wf.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<f64>>(),
    ];
    let mut r = base.values.clone();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in e {
        let mut v = v;
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        basis.push(v);
    }
    for _ in 0..2 {
        for b in &basis {
            let c: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let s = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(s > 0.0) {
        return Err(PhononError::Invalid("base field lies in the kernel directions".into()));
    }
    Field::new(grid, r.iter().zip(&w).map(|(v, wi)| eps * wi * v / s).collect())
}

/// Series `||omega^mu e^{tL} g0||_inf` over `t_grid` and its log-log slope on `[T/10, T]`.
pub fn measure_linear_decay(l: &LinOperator, g0: &Field, mu: f64, nu: f64, t_grid: &[f64]) -> Result<DecayReport> {
    if !(1.0 / 6.0 - 1e-12..=0.5 + 1e-12).contains(&mu) || !(1.0 / 6.0 - 1e-12..=0.5 + 1e-12).contains(&nu) {
        return Err(PhononError::Invalid(format!("mu, nu must lie in [1/6, 1/2]; got ({mu}, {nu})")));
    }
    let inv = g0.map(|p, v| v / omega(p).powf(nu)).sup_norm();
    if !inv.is_finite() {
        return Err(PhononError::Invalid("omega^{-nu} g0 is not bounded".into()));
    }
    let c0 = l.coefficients(g0);
    let series: Vec<(f64, f64)> = t_grid.iter().map(|&t| (t, l.from_coefficients(&c0, t).weighted_sup(mu))).collect();
    let t_hi = t_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let window = (t_hi / 10.0, t_hi);
    let (exponent, stderr) = fit_power_law(&series, window)?;
    // the linearized flow conserves <g, f> and <g, omega f>
    let (f, wf) = kernel_vectors(&l.params, g0.grid);
    let (f, wf) = (Field { grid: g0.grid, values: f }, Field { grid: g0.grid, values: wf });
    let last = l.from_coefficients(&c0, t_hi);
    let scale = g0.dot(g0).sqrt();
    let drift = |k: &Field| (last.dot(k) - g0.dot(k)).abs() / (scale * k.dot(k).sqrt());
    Ok(DecayReport { exponent, stderr, fit_window: window, series, conserved_drift: (drift(&f), drift(&wf)) })
}

/// `<t> = 10 + |t|`.
pub fn japanese(t: f64) -> f64 {
    10.0 + t.abs()
}

/// `(m, n, q)`: `L^2` mass of `g` on the bulk and on the edges `p < <t>^{-alpha}`,
/// `p > 2 pi - <t>^{-alpha}`, and the sup of `|g|` on the edges.
pub fn bulk_edge_functionals(g: &Field, t: f64, alpha: f64) -> Result<(f64, f64, f64)> {
    if !(alpha > 0.0 && alpha < 0.6) {
        return Err(PhononError::Invalid(format!("alpha = {alpha} outside (0, 3/5)")));
    }
    let cut = japanese(t).powf(-alpha);
    let w = g.grid.weight();
    let (mut m, mut ne, mut q) = (Vec::new(), Vec::new(), 0.0f64);
    for (j, &v) in g.values.iter().enumerate() {
        let p = g.grid.node(j);
        if p < cut || p > TWO_PI - cut {
            ne.push(w * v * v);
            q = q.max(v.abs());
        } else {
            m.push(w * v * v);
        }
    }
    Ok((pairwise_sum(&m), pairwise_sum(&ne), q))
}

/// Row-assembled `K1` and `K2` (`(K1 g)_i = sum_q wK f2 f3 g(p1)`, `(K2 g)_i = sum_q wK f1 f3 g(p2)`).
pub fn assemble_k_parts(params: &RjParams, grid: Grid, opts: &AssemblyOptions) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    params.require_regular()?;
    let ev = ResonantEvents::build(grid, opts.rule)?;
    let n = grid.n();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r1 = vec![0.0; n];
            let mut r2 = vec![0.0; n];
            for k in ev.row(i) {
                let (p1, p2, p3) = (ev.p1[k], ev.p2[k], ev.p3[k]);
                let c1 = ev.wk[k] * params.rj(p2) * params.rj(p3);
                let c2 = ev.wk[k] * params.rj(p1) * params.rj(p3);
                let s1 = stencil(p1, n, opts.interp);
                let s2 = stencil(p2, n, opts.interp);
                for q in 0..4 {
                    r1[s1.idx[q]] += c1 * s1.w[q];
                    r2[s2.idx[q]] += c2 * s2.w[q];
                }
            }
            (r1, r2)
        })
        .collect();
    let mut k1 = DMatrix::zeros(n, n);
    let mut k2 = DMatrix::zeros(n, n);
    for (i, (r1, r2)) in rows.into_iter().enumerate() {
        for j in 0..n {
            k1[(i, j)] = r1[j];
            k2[(i, j)] = r2[j];
        }
    }
    Ok((k1, k2))
}
