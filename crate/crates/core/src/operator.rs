//! Generator matrices `L⁽ⁿ⁾`, bilinear forms, semigroups via uniformization,
//! resolvents, Green vectors, and maximum-principle diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::conductance::{check_k1, DecomposedConductance};
use crate::error::LabError;
use crate::lattice::{Ball, LatticePoint, Window};

/// A function on the points of a window. Outside the window (absorbing
/// topology) the value is 0, matching zero-extension of compactly supported
/// functions.
#[derive(Debug, Clone)]
pub struct LatticeFunction {
    pub window: Window,
    pub values: Vec<f64>,
}

impl LatticeFunction {
    pub fn from_fn(window: &Window, mut f: impl FnMut(&LatticePoint) -> f64) -> Self {
        let values = window.points().map(|p| f(&p)).collect();
        Self {
            window: window.clone(),
            values,
        }
    }

    pub fn constant(window: &Window, v: f64) -> Self {
        Self {
            window: window.clone(),
            values: vec![v; window.point_count()],
        }
    }

    /// Value at integer coordinates, resolving torus wrap; 0 outside an
    /// absorbing window.
    pub fn value(&self, coords: &[i64]) -> f64 {
        let p = LatticePoint::new(coords.to_vec(), self.window.scale);
        match self.window.resolve(&p) {
            Some(q) => self.values[self.window.index_of(&q).unwrap()],
            None => 0.0,
        }
    }

    pub fn get(&self, p: &LatticePoint) -> Option<f64> {
        self.window.index_of(p).map(|i| self.values[i])
    }

    /// `⟨u,v⟩` w.r.t. `μ⁽ⁿ⁾ = n⁻ᵈ·counting`.
    pub fn inner_mu(&self, other: &LatticeFunction) -> f64 {
        let d = self.window.dim() as i32;
        let mu = (self.window.scale as f64).powi(-d);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum::<f64>()
            * mu
    }

    pub fn norm_mu(&self) -> f64 {
        self.inner_mu(self).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Assembly mode: full generator or Dirichlet restriction to an inner set.
#[derive(Debug, Clone)]
pub enum Mode {
    Full,
    /// Mask over window indices; `true` marks the inner (non-absorbed) set.
    Killed(Vec<bool>),
}

/// Sparse generator: off-diagonal entries `2n^α C(x,y)`, diagonal
/// `−2n^α C(x)`.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub window: Window,
    pub scale: u32,
    pub alpha: f64,
    pub mode: Mode,
    pub lambda0_estimate: f64,
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

pub fn inner_mask_from_ball(window: &Window, ball: &Ball) -> Vec<bool> {
    window.points().map(|p| ball.contains(&p)).collect()
}

pub fn assemble(
    dc: &DecomposedConductance,
    window: &Window,
    mode: Mode,
) -> Result<GeneratorMatrix, LabError> {
    let n = dc.scale();
    let rate = 2.0 * (n as f64).powf(dc.alpha());
    let count = window.point_count();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
    let mut diag = vec![0.0; count];

    for (idx, x) in window.points().enumerate() {
        let row = dc.row(&x.coords);
        match &mode {
            Mode::Full => {
                let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
                for (yc, w) in &row {
                    let y = LatticePoint::new(yc.clone(), n);
                    match window.resolve(&y) {
                        Some(q) => {
                            let j = window.index_of(&q).unwrap();
                            if j == idx {
                                continue; // torus self-loop: no generator effect
                            }
                            *entries.entry(j).or_insert(0.0) += rate * w;
                        }
                        None => return Err(LabError::BoundaryLeakage),
                    }
                }
                let r: Vec<(usize, f64)> = entries.into_iter().collect();
                diag[idx] = -r.iter().map(|(_, w)| w).sum::<f64>();
                rows[idx] = r;
            }
            Mode::Killed(mask) => {
                if !mask[idx] {
                    continue; // absorbed state: zero row
                }
                let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
                let mut total = 0.0;
                for (yc, w) in &row {
                    total += w;
                    let y = LatticePoint::new(yc.clone(), n);
                    if let Some(j) = window.index_of(&y) {
                        if mask[j] && j != idx {
                            *entries.entry(j).or_insert(0.0) += rate * w;
                        }
                    }
                }
                // full diagonal: mass jumping outside the inner set is killed
                diag[idx] = -rate * total;
                rows[idx] = entries.into_iter().collect();
            }
        }
    }
    Ok(GeneratorMatrix {
        window: window.clone(),
        scale: n,
        alpha: dc.alpha(),
        mode,
        lambda0_estimate: 0.0,
        rows,
        diag,
    })
}

impl GeneratorMatrix {
    pub fn point_count(&self) -> usize {
        self.diag.len()
    }

    pub fn max_rate(&self) -> f64 {
        self.diag.iter().fold(0.0f64, |m, &d| m.max(-d))
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.rows[i].iter().map(|(_, w)| w).sum::<f64>()
    }

    /// `L v` (parallel over rows).
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..v.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = self.diag[i] * v[i];
                for &(j, w) in &self.rows[i] {
                    acc += w * v[j];
                }
                acc
            })
            .collect()
    }

    /// Coordinate text format `row col value`, one line per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.diag.len() {
            if self.diag[i] != 0.0 {
                let _ = writeln!(out, "{} {} {}", i, i, self.diag[i]);
            }
            for &(j, w) in &self.rows[i] {
                let _ = writeln!(out, "{} {} {}", i, j, w);
            }
        }
        out
    }
}

/// `(total, sym_part, asym_part)` of `ℰ⁽ⁿ⁾(u,v)`; the parts use the
/// symmetric and antisymmetric rewrites, so `total = sym + asym` by
/// construction of the decomposition.
pub fn bilinear_form(
    dc: &DecomposedConductance,
    u: &LatticeFunction,
    v: &LatticeFunction,
) -> (f64, f64, f64) {
    let w = &u.window;
    let n = dc.scale();
    let factor = (n as f64).powf(dc.alpha() - w.dim() as f64);
    let mut sym = 0.0;
    let mut asym = 0.0;
    for (idx, x) in w.points().enumerate() {
        let ux = u.values[idx];
        let vx = v.values[idx];
        for (yc, ws) in dc.sym.row(&x.coords) {
            let uy = u.value(&yc);
            let vy = v.value(&yc);
            let wa = dc.asym.weight(&x.coords, &yc);
            sym += (ux - uy) * (vx - vy) * ws;
            asym += (ux - uy) * (vx + vy) * wa;
        }
    }
    sym *= factor;
    asym *= factor;
    (sym + asym, sym, asym)
}

/// Sampled Gårding/sector constants: observed maxima are lower bounds on the
/// admissible constants; `w_sup` carries the analytic route through (K1).
#[derive(Debug, Clone, Serialize)]
pub struct GardingReport {
    pub c1_observed: f64,
    pub c2_observed: f64,
    pub w_sup: f64,
    pub skipped: usize,
    pub trials: usize,
}

pub fn garding_sector_constants(
    dc: &DecomposedConductance,
    window: &Window,
    trials: usize,
    seed: u64,
) -> GardingReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c1 = 0.0f64;
    let mut c2 = 0.0f64;
    let mut skipped = 0usize;
    for _ in 0..trials {
        let u = LatticeFunction::from_fn(window, |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let v = LatticeFunction::from_fn(window, |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let (e_uu, es_uu, _) = bilinear_form(dc, &u, &u);
        let (_, es_vv, _) = bilinear_form(dc, &v, &v);
        let (e_uv, _, _) = bilinear_form(dc, &u, &v);
        let uu = u.inner_mu(&u);
        let vv = v.inner_mu(&v);
        if es_uu <= 0.0 {
            skipped += 1;
            continue;
        }
        if uu > 0.0 {
            c1 = c1.max((0.5 * es_uu - e_uu) / uu);
        }
        let denom = es_uu * (es_vv + vv);
        if denom > 0.0 {
            c2 = c2.max(e_uv * e_uv / denom);
        }
    }
    let w_sup = check_k1(dc, f64::INFINITY, window).constants["A"];
    GardingReport {
        c1_observed: c1,
        c2_observed: c2,
        w_sup,
        skipped,
        trials,
    }
}

/// `e^{tL} f` by uniformization, substepping so the Poisson weights never
/// underflow. The truncation bound is the Poisson tail, split across
/// substeps.
pub fn semigroup_apply(
    m: &GeneratorMatrix,
    f: &LatticeFunction,
    t: f64,
    tol: f64,
) -> Result<LatticeFunction, LabError> {
    assert!(t >= 0.0, "time must be nonnegative");
    let lambda = m.max_rate();
    if t == 0.0 || lambda == 0.0 {
        return Ok(f.clone());
    }
    let steps = ((lambda * t) / 500.0).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let sub_tol = tol / steps as f64;
    let mut v = f.values.clone();
    for _ in 0..steps {
        v = uniformize_step(m, &v, lambda, dt, sub_tol)?;
    }
    Ok(LatticeFunction {
        window: f.window.clone(),
        values: v,
    })
}

fn uniformize_step(
    m: &GeneratorMatrix,
    f: &[f64],
    lambda: f64,
    t: f64,
    tol: f64,
) -> Result<Vec<f64>, LabError> {
    let mut out = vec![0.0; f.len()];
    let mut power = f.to_vec();
    let mut weight = (-lambda * t).exp();
    let mut cum = 0.0;
    const CAP: usize = 1_000_000;
    for k in 0..CAP {
        out.par_iter_mut()
            .zip(&power)
            .for_each(|(o, &p)| *o += weight * p);
        cum += weight;
        if 1.0 - cum < tol {
            return Ok(out);
        }
        // power <- (I + L/lambda) power
        let lp = m.apply(&power);
        power
            .par_iter_mut()
            .zip(&lp)
            .for_each(|(p, &l)| *p += l / lambda);
        weight *= lambda * t / (k + 1) as f64;
    }
    Err(LabError::ToleranceUnreachable {
        achieved: 1.0 - cum,
        tol,
    })
}

/// Killed semigroup: uniformization on the Dirichlet-restricted matrix.
pub fn killed_semigroup(
    m: &GeneratorMatrix,
    f: &LatticeFunction,
    t: f64,
    tol: f64,
) -> Result<LatticeFunction, LabError> {
    debug_assert!(matches!(m.mode, Mode::Killed(_)));
    semigroup_apply(m, f, t, tol)
}

fn bicgstab(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, (f64, usize)> {
    let n = b.len();
    let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut best_res = f64::INFINITY;
    for it in 0..max_iter {
        let rho_next: f64 = r0.iter().zip(&r).map(|(&a, &b)| a * b).sum();
        if rho_next.abs() < 1e-300 {
            return Err((best_res / b_norm, it));
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        v = apply(&p);
        let r0v: f64 = r0.iter().zip(&v).map(|(&a, &b)| a * b).sum();
        if r0v.abs() < 1e-300 {
            return Err((best_res / b_norm, it));
        }
        alpha = rho / r0v;
        let s: Vec<f64> = r.iter().zip(&v).map(|(&ri, &vi)| ri - alpha * vi).collect();
        let t_vec = apply(&s);
        let tt: f64 = t_vec.iter().map(|x| x * x).sum();
        omega = if tt > 0.0 {
            t_vec.iter().zip(&s).map(|(&a, &b)| a * b).sum::<f64>() / tt
        } else {
            0.0
        };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t_vec[i];
        }
        let res = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        best_res = best_res.min(res);
        if res <= tol * b_norm {
            return Ok(x);
        }
    }
    Err((best_res / b_norm, max_iter))
}

/// Dense LU with partial pivoting; used as a small-system fallback.
fn dense_solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>, LabError> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return Err(LabError::SingularSystem);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Solves a Jacobi-scaled system `A u = rhs` where `A v = shift·v − L v`
/// restricted to `active` indices; values outside `active` are 0.
fn solve_shifted(
    m: &GeneratorMatrix,
    rhs: &[f64],
    shift: f64,
    active: &[usize],
    tol: f64,
) -> Result<Vec<f64>, LabError> {
    let na = active.len();
    let mut pos = vec![usize::MAX; m.point_count()];
    for (k, &i) in active.iter().enumerate() {
        pos[i] = k;
    }
    // Jacobi row scaling keeps the system well conditioned across n
    let scale: Vec<f64> = active
        .iter()
        .map(|&i| {
            let d = shift - m.diag[i];
            if d.abs() < 1e-300 {
                1.0
            } else {
                1.0 / d
            }
        })
        .collect();
    let b: Vec<f64> = (0..na).map(|k| rhs[active[k]] * scale[k]).collect();
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..na)
            .into_par_iter()
            .map(|k| {
                let i = active[k];
                let mut acc = (shift - m.diag[i]) * v[k];
                for &(j, w) in &m.rows[i] {
                    if pos[j] != usize::MAX {
                        acc -= w * v[pos[j]];
                    }
                }
                acc * scale[k]
            })
            .collect()
    };
    let max_iter = (10 * na).max(2000);
    match bicgstab(&apply, &b, tol, max_iter) {
        Ok(x) => Ok(x),
        Err((residual, iterations)) => {
            if na <= 4000 {
                let mut dense: Vec<Vec<f64>> = vec![vec![0.0; na]; na];
                for k in 0..na {
                    let i = active[k];
                    dense[k][k] = shift - m.diag[i];
                    for &(j, w) in &m.rows[i] {
                        if pos[j] != usize::MAX {
                            dense[k][pos[j]] -= w;
                        }
                    }
                }
                let mut b: Vec<f64> = active.iter().map(|&i| rhs[i]).collect();
                dense_solve(&mut dense, &mut b)
            } else {
                Err(LabError::SolverStagnation {
                    residual,
                    iterations,
                })
            }
        }
    }
}

/// `U_λ f = (λI − L)⁻¹ f`.
pub fn resolvent(
    m: &GeneratorMatrix,
    f: &LatticeFunction,
    lambda: f64,
    tol: f64,
) -> Result<LatticeFunction, LabError> {
    assert!(
        lambda > m.lambda0_estimate,
        "lambda must exceed the Garding estimate"
    );
    let active: Vec<usize> = match &m.mode {
        Mode::Full => (0..m.point_count()).collect(),
        Mode::Killed(mask) => (0..m.point_count()).filter(|&i| mask[i]).collect(),
    };
    let x = solve_shifted(m, &f.values, lambda, &active, tol)?;
    let mut values = vec![0.0; m.point_count()];
    for (k, &i) in active.iter().enumerate() {
        values[i] = x[k];
    }
    Ok(LatticeFunction {
        window: m.window.clone(),
        values,
    })
}

/// Mean exit times: solves `−L u = 1` on the inner set of a killed matrix.
pub fn green_vector(m: &GeneratorMatrix) -> Result<LatticeFunction, LabError> {
    let mask = match &m.mode {
        Mode::Killed(mask) => mask,
        Mode::Full => panic!("green_vector requires a killed matrix"),
    };
    let active: Vec<usize> = (0..m.point_count()).filter(|&i| mask[i]).collect();
    let ones = vec![1.0; m.point_count()];
    let x = solve_shifted(m, &ones, 0.0, &active, 1e-12)?;
    if x.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(LabError::SingularSystem);
    }
    let mut values = vec![0.0; m.point_count()];
    for (k, &i) in active.iter().enumerate() {
        values[i] = x[k];
    }
    Ok(LatticeFunction {
        window: m.window.clone(),
        values,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxPrincipleReport {
    pub max_nonpositive_violation: f64,
    pub min_nonnegative_value: f64,
    pub passed: bool,
    pub trials: usize,
}

/// Nonpositive data stays nonpositive; nonnegative data stays nonnegative,
/// both under the killed evolution over a time grid.
pub fn maximum_principle_check(
    m: &GeneratorMatrix,
    trials: usize,
    seed: u64,
) -> Result<MaxPrincipleReport, LabError> {
    let mask = match &m.mode {
        Mode::Killed(mask) => mask.clone(),
        Mode::Full => vec![true; m.point_count()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_pos = f64::NEG_INFINITY;
    let mut worst_neg = f64::INFINITY;
    let t_grid = [0.01, 0.1, 0.5];
    for _ in 0..trials {
        let mut idx = 0;
        let u0 = LatticeFunction::from_fn(&m.window, |_| {
            let v: f64 = rng.gen::<f64>();
            let masked = if mask[idx] { -v } else { 0.0 };
            idx += 1;
            masked
        });
        for &t in &t_grid {
            let u = semigroup_apply(m, &u0, t, 1e-12)?;
            worst_pos = worst_pos.max(u.values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        let flipped = LatticeFunction {
            window: u0.window.clone(),
            values: u0.values.iter().map(|v| -v).collect(),
        };
        for &t in &t_grid {
            let u = semigroup_apply(m, &flipped, t, 1e-12)?;
            worst_neg = worst_neg.min(u.values.iter().copied().fold(f64::INFINITY, f64::min));
        }
    }
    Ok(MaxPrincipleReport {
        max_nonpositive_violation: worst_pos,
        min_nonnegative_value: worst_neg,
        passed: worst_pos <= 1e-10 && worst_neg >= -1e-12,
        trials,
    })
}
