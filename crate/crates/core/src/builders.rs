//! Conductance builders: the cell-averaged local construction (diffusion
//! matrix plus drift), the gradient-drift shortcut, the nonlocal
//! cell-integrated jump kernels, and convergence verification of the built
//! families against their target coefficients.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::conductance::{loglog_fit, Conductance, DecomposedConductance, Kernel};
use crate::error::LabError;
use crate::lattice::{LatticePoint, Window};
use crate::snnp::coefficient_field;

/// Floor added to every axis edge so the built family stays comparable to
/// the nearest-neighbor walk; it inflates F by `+2ε₀·δ_ij`, which the
/// convergence reports subtract.
pub const EPS0: f64 = 0.05;

pub type MatrixField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PairKernel = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Diffusion + drift target: `a` uniformly elliptic (row-major d×d), `b`
/// a drift vector field.
#[derive(Clone)]
pub struct DiffusionTarget {
    pub dim: usize,
    pub a: MatrixField,
    pub b: VectorField,
    pub theta: f64,
    pub beta_cell: f64,
    pub lambda_ell: f64,
    pub lambda_ell_upper: f64,
    pub quad_points: usize,
}

/// Jump kernel target `K(w,z)` with comparability constant `Lambda`:
/// `Λ⁻¹|w−z|^{−d−α} ≤ K ≤ Λ|w−z|^{−d−α}` (sampled, not proven).
#[derive(Clone)]
pub struct JumpTarget {
    pub dim: usize,
    pub k: PairKernel,
    pub alpha: f64,
    pub lambda_comp: f64,
    pub theta: f64,
    pub quad_points: usize,
    /// K(w,z) depends on w−z only: edges collapse to a displacement table.
    pub translation_invariant: bool,
}

/// Partition of space into cubes `Q(x₀, r_n)`, `r_n = ⌊n^{1−β}⌋/n`.
#[derive(Debug, Clone)]
pub struct CellPartition {
    pub scale: u32,
    pub beta: f64,
    /// `r_n·n = ⌊n^{1−β}⌋` (cube side in lattice steps).
    pub cube_steps: i64,
}

impl CellPartition {
    pub fn new(scale: u32, beta: f64) -> Self {
        assert!((0.0..1.0).contains(&beta) || beta < 1.0, "beta in (0,1)");
        let cube_steps = ((scale as f64).powf(1.0 - beta).floor() as i64).max(1);
        Self {
            scale,
            beta,
            cube_steps,
        }
    }

    pub fn r_n(&self) -> f64 {
        self.cube_steps as f64 / self.scale as f64
    }

    /// Cube index of a lattice point (coords in steps).
    pub fn anchor(&self, coords: &[i64]) -> Vec<i64> {
        coords.iter().map(|&c| c.div_euclid(self.cube_steps)).collect()
    }

    pub fn same_cube(&self, x: &[i64], y: &[i64]) -> bool {
        self.anchor(x) == self.anchor(y)
    }
}

/// Mean of `f` over the cube with the given anchor, by tensor midpoint
/// quadrature with `q` points per axis.
pub fn cell_average(
    f: &dyn Fn(&[f64]) -> f64,
    part: &CellPartition,
    anchor: &[i64],
    q: usize,
) -> f64 {
    let d = anchor.len();
    let r = part.r_n();
    let lo: Vec<f64> = anchor.iter().map(|&a| a as f64 * r).collect();
    let mut total = 0.0;
    let count = q.pow(d as u32);
    for flat in 0..count {
        let mut idx = flat;
        let mut x = vec![0.0; d];
        for i in 0..d {
            let k = idx % q;
            idx /= q;
            x[i] = lo[i] + (k as f64 + 0.5) * r / q as f64;
        }
        total += f(&x);
    }
    total / count as f64
}

fn averaged_matrix<'a>(
    t: &DiffusionTarget,
    part: &CellPartition,
    anchor: &[i64],
    cache: &'a mut HashMap<Vec<i64>, Vec<f64>>,
) -> &'a Vec<f64> {
    if !cache.contains_key(anchor) {
        let d = t.dim;
        let mut avg = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let a = t.a.clone();
                avg[i * d + j] =
                    cell_average(&|x: &[f64]| a(x)[i * d + j], part, anchor, t.quad_points);
            }
        }
        cache.insert(anchor.to_vec(), avg);
    }
    &cache[anchor]
}

/// Range-2 symmetric conductance whose SNNP field recovers `a + 2ε₀I`:
/// axis edges `½(ā_ii − Σ_{j≠i}|ā_ij|) + ε₀`, diagonal edges `½ā_ij^±`
/// (sign-matched), with `ā` the cell average at the pair's anchor cell.
pub fn build_local_symmetric(
    t: &DiffusionTarget,
    n: u32,
    window: &Window,
) -> Result<Conductance, LabError> {
    let d = t.dim;
    let part = CellPartition::new(n, t.beta_cell);
    let mut cache: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
    let mut c = Kernel::new_edges(n, 2.0, d);
    c.range_bound = Some(std::f64::consts::SQRT_2);

    let insert_sym = |c: &mut Kernel, x: &[i64], y: &[i64], w: f64| {
        c.insert_edge(x, y, w);
        c.insert_edge(y, x, w);
    };

    for x in window.points() {
        let xc = &x.coords;
        // axis edges, + direction only (each unordered pair visited once)
        for i in 0..d {
            let mut yc = xc.clone();
            yc[i] += 1;
            if !window.contains(&LatticePoint::new(yc.clone(), n)) {
                continue;
            }
            let corner: Vec<i64> = xc.clone(); // componentwise min of {x,y}
            let anchor = part.anchor(&corner);
            let avg = averaged_matrix(t, &part, &anchor, &mut cache).clone();
            let off: f64 = (0..d).filter(|&j| j != i).map(|j| avg[i * d + j].abs()).sum();
            let margin = avg[i * d + i] - off;
            if margin <= 0.0 {
                return Err(LabError::NotDiagonallyDominant {
                    margin,
                    location: format!("cell {anchor:?}, axis {i}"),
                });
            }
            insert_sym(&mut c, xc, &yc, 0.5 * margin + EPS0);
        }
        // diagonal edges e_i ± e_j, sign-matched to a_ij
        for i in 0..d {
            for j in (i + 1)..d {
                for sj in [1i64, -1] {
                    let mut yc = xc.clone();
                    yc[i] += 1;
                    yc[j] += sj;
                    if !window.contains(&LatticePoint::new(yc.clone(), n)) {
                        continue;
                    }
                    let corner: Vec<i64> = xc
                        .iter()
                        .zip(&yc)
                        .map(|(&a, &b)| a.min(b))
                        .collect();
                    let anchor = part.anchor(&corner);
                    let avg = averaged_matrix(t, &part, &anchor, &mut cache).clone();
                    let aij = avg[i * d + j];
                    let matched = (sj > 0 && aij > 0.0) || (sj < 0 && aij < 0.0);
                    if matched && aij != 0.0 {
                        insert_sym(&mut c, xc, &yc, 0.5 * aij.abs());
                    }
                }
            }
        }
    }
    Ok(c)
}

/// Minimal symmetric weight over nearest-neighbor edges inside the window.
pub fn nn_floor(cs: &Conductance, window: &Window) -> f64 {
    let d = cs.dim;
    let mut eps = f64::INFINITY;
    for x in window.points() {
        for i in 0..d {
            let mut yc = x.coords.clone();
            yc[i] += 1;
            if !window.contains(&LatticePoint::new(yc.clone(), cs.scale)) {
                continue;
            }
            eps = eps.min(cs.weight(&x.coords, &yc));
        }
    }
    if eps.is_finite() {
        eps
    } else {
        0.0
    }
}

/// Drift part on same-cube axis edges:
/// `C_a(z+e_i/n, z) = b̄_i/(2n)` (clipped at the NN floor), zero across cube
/// boundaries, so `C = C_s + C_a ≥ C_s/2` edgewise.
pub fn build_local_antisymmetric(
    t: &DiffusionTarget,
    cs: &Conductance,
    n: u32,
    window: &Window,
) -> DecomposedConductance {
    let d = t.dim;
    let part = CellPartition::new(n, t.beta_cell);
    let eps = nn_floor(cs, window);
    let mut cache: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
    let mut asym = Kernel::new_edges(n, 2.0, d);
    asym.range_bound = cs.range_bound;

    for z in window.points() {
        let zc = &z.coords;
        for i in 0..d {
            let mut up = zc.clone();
            up[i] += 1;
            if !window.contains(&LatticePoint::new(up.clone(), n)) {
                continue;
            }
            if !part.same_cube(zc, &up) {
                continue;
            }
            let anchor = part.anchor(zc);
            let bbar = if let Some(v) = cache.get(&anchor) {
                v.clone()
            } else {
                let b = t.b.clone();
                let v: Vec<f64> = (0..d)
                    .map(|k| cell_average(&|x: &[f64]| b(x)[k], &part, &anchor, t.quad_points))
                    .collect();
                cache.insert(anchor.clone(), v.clone());
                v
            };
            let beta = bbar[i] / n as f64;
            if beta.abs() > eps || beta == 0.0 {
                continue;
            }
            // C_a = beta·NN with NN = 1/2 on unit edges
            asym.insert_edge(&up, zc, beta / 2.0);
            asym.insert_edge(zc, &up, -beta / 2.0);
        }
    }
    DecomposedConductance {
        sym: cs.clone(),
        asym,
        aux_upper_j: None,
        aux_lower_j: None,
    }
}

/// Gradient-drift shortcut:
/// `C_a(x,y) = (V(x)−V(y))·NN(x,y)·1{|V(x)−V(y)| ≤ ε}`.
pub fn build_gradient_drift(
    v: &ScalarField,
    cs: &Conductance,
    n: u32,
    window: &Window,
) -> DecomposedConductance {
    let d = cs.dim;
    let eps = nn_floor(cs, window);
    let mut asym = Kernel::new_edges(n, 2.0, d);
    asym.range_bound = cs.range_bound;
    for x in window.points() {
        for i in 0..d {
            let mut yc = x.coords.clone();
            yc[i] += 1;
            let y = LatticePoint::new(yc.clone(), n);
            if !window.contains(&y) {
                continue;
            }
            let dv = v(&x.embed()) - v(&y.embed());
            if dv == 0.0 || dv.abs() > eps {
                continue;
            }
            asym.insert_edge(&x.coords, &yc, dv / 2.0);
            asym.insert_edge(&yc, &x.coords, -dv / 2.0);
        }
    }
    DecomposedConductance {
        sym: cs.clone(),
        asym,
        aux_upper_j: None,
        aux_lower_j: None,
    }
}

/// Gauss-Legendre nodes/weights on [-1, 1] (Newton on the Legendre
/// recurrence).
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Tensor Gauss-Legendre integral of `K` over the product of two sup-norm
/// cells of half-width `half` centered at `x` and `y`.
fn pair_cell_integral<F: Fn(&[f64], &[f64]) -> f64>(
    k: &F,
    x: &[f64],
    y: &[f64],
    half: f64,
    order: usize,
) -> f64 {
    let d = x.len();
    let (nodes, weights) = gauss_legendre(order);
    let dims = 2 * d;
    let count = order.pow(dims as u32);
    let mut total = 0.0;
    let mut w_pt = vec![0.0; d];
    let mut z_pt = vec![0.0; d];
    for flat in 0..count {
        let mut idx = flat;
        let mut wt = 1.0;
        for i in 0..dims {
            let kk = idx % order;
            idx /= order;
            let center = if i < d { x[i] } else { y[i - d] };
            let pos = center + half * nodes[kk];
            if i < d {
                w_pt[i] = pos;
            } else {
                z_pt[i - d] = pos;
            }
            wt *= weights[kk] * half;
        }
        total += wt * k(&w_pt, &z_pt);
    }
    total
}

fn adaptive_pair_integral<F: Fn(&[f64], &[f64]) -> f64>(
    k: &F,
    x: &[f64],
    y: &[f64],
    half: f64,
    start_order: usize,
) -> Result<f64, LabError> {
    let mut order = start_order.max(2);
    let mut prev = pair_cell_integral(k, x, y, half, order);
    loop {
        order *= 2;
        let next = pair_cell_integral(k, x, y, half, order);
        let change = if next != 0.0 {
            ((next - prev) / next).abs()
        } else {
            (next - prev).abs()
        };
        if change <= 0.01 {
            return Ok(next);
        }
        if order >= 32 {
            return Err(LabError::QuadratureNonconvergence {
                x: format!("{x:?}"),
                y: format!("{y:?}"),
                change,
            });
        }
        prev = next;
    }
}

#[derive(Debug)]
pub struct NonlocalBuild {
    pub conductance: Conductance,
    /// Estimated (C-Tail style) rate mass beyond the range cut:
    /// `Λ·ω_d·range_cut^{−α}/α` with `ω_d` the unit-sphere surface measure.
    pub dropped_tail: f64,
}

/// Cell-integrated jump conductance:
/// `C(x,y) = 4ᵈ n^{d−α} ∬ K(w,z) dw dz` over the 1/n-cells around x and y,
/// zero for `|x−y|_∞ < 2/n`, truncated beyond `range_cut`.
pub fn build_nonlocal(
    t: &JumpTarget,
    n: u32,
    window: &Window,
    range_cut: f64,
) -> Result<NonlocalBuild, LabError> {
    assert!(range_cut >= 2.0 / n as f64, "range_cut below 2/n");
    assert!(t.quad_points >= 2, "quadrature order must be >= 2");
    let d = t.dim;
    let nf = n as f64;
    let half = 1.0 / (2.0 * nf);
    let factor = 4.0f64.powi(d as i32) * nf.powf(d as f64 - t.alpha);
    let cut_steps = (range_cut * nf).floor() as i64;

    // Both orientations are integrated over the same quadrature geometry
    // (the reverse via the argument-swapped kernel), so a symmetric K
    // yields bit-identical forward and reverse weights.
    let weight_pair = |xc: &[i64], yc: &[i64]| -> Result<Option<(f64, f64)>, LabError> {
        let sup: i64 = xc
            .iter()
            .zip(yc)
            .map(|(&a, &b)| (a - b).abs())
            .max()
            .unwrap();
        if sup < 2 {
            return Ok(None);
        }
        let euclid: f64 = xc
            .iter()
            .zip(yc)
            .map(|(&a, &b)| ((a - b) as f64 / nf).powi(2))
            .sum::<f64>()
            .sqrt();
        if euclid > range_cut {
            return Ok(None);
        }
        let x: Vec<f64> = xc.iter().map(|&c| c as f64 / nf).collect();
        let y: Vec<f64> = yc.iter().map(|&c| c as f64 / nf).collect();
        // near-diagonal pairs need the higher starting order
        let start = if sup <= 4 { t.quad_points.max(8) } else { t.quad_points };
        let k = &t.k;
        let fwd = adaptive_pair_integral(&|w: &[f64], z: &[f64]| k(w, z), &x, &y, half, start)?;
        let bwd = adaptive_pair_integral(&|w: &[f64], z: &[f64]| k(z, w), &x, &y, half, start)?;
        Ok(Some((factor * fwd, factor * bwd)))
    };

    let mut c;
    if t.translation_invariant {
        c = Kernel::new_displacement(n, t.alpha, d);
        let origin = vec![0i64; d];
        let mut targets = vec![Vec::new()];
        for _ in 0..d {
            let mut next = Vec::new();
            for p in &targets {
                for s in -cut_steps..=cut_steps {
                    let mut q: Vec<i64> = p.clone();
                    q.push(s);
                    next.push(q);
                }
            }
            targets = next;
        }
        let weights: Vec<(Vec<i64>, Option<(f64, f64)>)> = targets
            .par_iter()
            .filter(|h| h.as_slice() > origin.as_slice())
            .map(|h| Ok((h.clone(), weight_pair(&origin, h)?)))
            .collect::<Result<_, LabError>>()?;
        for (h, w) in weights {
            if let Some((fwd, bwd)) = w {
                let neg: Vec<i64> = h.iter().map(|&v| -v).collect();
                c.insert_displacement(&h, fwd);
                c.insert_displacement(&neg, bwd);
            }
        }
    } else {
        c = Kernel::new_edges(n, t.alpha, d);
        let points: Vec<LatticePoint> = window.points().collect();
        let entries: Vec<(Vec<i64>, Vec<i64>, Option<(f64, f64)>)> = points
            .par_iter()
            .flat_map_iter(|x| points.iter().map(move |y| (x, y)))
            .filter(|(x, y)| x.coords < y.coords)
            .map(|(x, y)| {
                Ok((
                    x.coords.clone(),
                    y.coords.clone(),
                    weight_pair(&x.coords, &y.coords)?,
                ))
            })
            .collect::<Result<_, LabError>>()?;
        for (xc, yc, w) in entries {
            if let Some((fwd, bwd)) = w {
                c.insert_edge(&xc, &yc, fwd);
                c.insert_edge(&yc, &xc, bwd);
            }
        }
    }
    c.range_bound = None; // long-range by construction
    let omega_d = match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    };
    let dropped_tail = t.lambda_comp * omega_d * range_cut.powf(-t.alpha) / t.alpha;
    Ok(NonlocalBuild {
        conductance: c,
        dropped_tail,
    })
}

/// The first §5.2 example family, translation invariant:
/// `C_s(h) = M₁|h|^{−d−α}`,
/// `C_a(h) = M₂·sign(h₁)·n^{β−α}|h|^{−d−β}` for `|h| ≤ n` and
/// `M₂·sign(h₁)·n^{γ−α}|h|^{−d−γ}` beyond, with `2β < α ≤ γ`, `2γ < 2`,
/// `M₂ ≤ M₁` (so `C ≥ 0`).
pub fn build_nonsym_stable(
    dim: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    m1: f64,
    m2: f64,
    n: u32,
    cut_steps: i64,
) -> DecomposedConductance {
    assert!(2.0 * beta < alpha && alpha <= gamma && 2.0 * gamma < 2.0);
    assert!(m2 <= m1, "m2 > m1 breaks nonnegativity");
    let nf = n as f64;
    let mut sym = Kernel::new_displacement(n, alpha, dim);
    let mut asym = Kernel::new_displacement(n, alpha, dim);
    let mut targets = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::new();
        for p in &targets {
            for s in -cut_steps..=cut_steps {
                let mut q: Vec<i64> = p.clone();
                q.push(s);
                next.push(q);
            }
        }
        targets = next;
    }
    for h in targets {
        if h.iter().all(|&c| c == 0) {
            continue;
        }
        let len: f64 = h.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
        sym.insert_displacement(&h, m1 * len.powf(-(dim as f64) - alpha));
        let sgn = (h[0].signum()) as f64;
        if sgn != 0.0 {
            let mag = if len <= nf {
                nf.powf(beta - alpha) * len.powf(-(dim as f64) - beta)
            } else {
                nf.powf(gamma - alpha) * len.powf(-(dim as f64) - gamma)
            };
            asym.insert_displacement(&h, m2 * sgn * mag);
        }
    }
    DecomposedConductance {
        sym,
        asym,
        aux_upper_j: None,
        aux_lower_j: None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalConvergenceReport {
    /// (n, ‖F⁽ⁿ⁾ − a − 2ε₀I‖_{L¹(K)}, ‖B⁽ⁿ⁾ − b‖_{L¹(K)})
    pub per_n: Vec<(u32, f64, f64)>,
    pub f_rate: f64,
    pub b_rate: f64,
}

/// L¹(K) distances of the recovered fields to the target coefficients, with
/// log-log fitted decay rates against `⌊n^{1−β}⌋`.
pub fn verify_local_convergence(
    builds: &[(u32, DecomposedConductance, Window)],
    t: &DiffusionTarget,
    k_lo: &[f64],
    k_hi: &[f64],
) -> Result<LocalConvergenceReport, LabError> {
    let d = t.dim;
    let mut per_n = Vec::new();
    for (n, dc, window) in builds {
        let field = coefficient_field(dc, window)?;
        let nf = *n as f64;
        let mu = nf.powi(-(d as i32));
        let mut f_dist = 0.0;
        let mut b_dist = 0.0;
        for z in field.window.points() {
            let pos = z.embed();
            if pos.iter().zip(k_lo).any(|(&p, &l)| p < l)
                || pos.iter().zip(k_hi).any(|(&p, &h)| p > h)
            {
                continue;
            }
            let a_target = (t.a)(&pos);
            let b_target = (t.b)(&pos);
            let fm = field.f_at(&z);
            let bv = field.b_at(&z);
            for i in 0..d {
                for j in 0..d {
                    let floor = if i == j { 2.0 * EPS0 } else { 0.0 };
                    f_dist += (fm[i * d + j] - a_target[i * d + j] - floor).abs() * mu;
                }
            }
            for i in 0..d {
                b_dist += (bv[i] - b_target[i]).abs() * mu;
            }
        }
        per_n.push((*n, f_dist, b_dist));
    }
    let cells = |n: u32| CellPartition::new(n, t.beta_cell).cube_steps as f64;
    let f_pts: Vec<(f64, f64)> = per_n.iter().map(|&(n, f, _)| (cells(n), f)).collect();
    let b_pts: Vec<(f64, f64)> = per_n.iter().map(|&(n, _, b)| (cells(n), b)).collect();
    let f_rate = -loglog_fit(&f_pts).0;
    let b_rate = -loglog_fit(&b_pts).0;
    Ok(LocalConvergenceReport {
        per_n,
        f_rate,
        b_rate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NonlocalConvergenceReport {
    /// (n, discrete integral, continuum integral, relative error)
    pub per_n: Vec<(u32, f64, f64, f64)>,
}

/// Tests the rescaled-kernel convergence `n^{d+α}C⁽ⁿ⁾([x]_n,[y]_n) → K` for
/// `f ≡ 1` on a product box `K₁ × K₂` separated from the diagonal. The
/// continuum side is integrated by high-order Gauss-Legendre.
pub fn verify_nonlocal_convergence(
    builds: &[(u32, Conductance)],
    t: &JumpTarget,
    box1: (&[f64], &[f64]),
    box2: (&[f64], &[f64]),
) -> NonlocalConvergenceReport {
    let d = t.dim;
    // continuum oracle: iterated tensor quadrature over the product box
    let order = 24;
    let (nodes, weights) = gauss_legendre(order);
    let dims = 2 * d;
    let count = order.pow(dims as u32);
    let mut exact = 0.0;
    let mut w_pt = vec![0.0; d];
    let mut z_pt = vec![0.0; d];
    for flat in 0..count {
        let mut idx = flat;
        let mut wt = 1.0;
        for i in 0..dims {
            let kk = idx % order;
            idx /= order;
            let (lo, hi) = if i < d {
                (box1.0[i], box1.1[i])
            } else {
                (box2.0[i - d], box2.1[i - d])
            };
            let mid = (lo + hi) / 2.0;
            let half = (hi - lo) / 2.0;
            let pos = mid + half * nodes[kk];
            if i < d {
                w_pt[i] = pos;
            } else {
                z_pt[i - d] = pos;
            }
            wt *= weights[kk] * half;
        }
        exact += wt * (t.k)(&w_pt, &z_pt);
    }

    let mut per_n = Vec::new();
    for (n, c) in builds {
        let nf = *n as f64;
        // integral of the piecewise-constant rescaled kernel over the box:
        // each lattice cell pair contributes n^{-2d}·n^{d+alpha}·C
        let cells = |lo: &[f64], hi: &[f64]| -> Vec<Vec<i64>> {
            let mut out = vec![Vec::new()];
            for i in 0..d {
                let a = (lo[i] * nf).round() as i64;
                let b = (hi[i] * nf).round() as i64;
                let mut next = Vec::new();
                for p in &out {
                    for cidx in a..b {
                        let mut q: Vec<i64> = p.clone();
                        q.push(cidx);
                        next.push(q);
                    }
                }
                out = next;
            }
            out
        };
        let xs = cells(box1.0, box1.1);
        let ys = cells(box2.0, box2.1);
        let mut discrete = 0.0;
        for x in &xs {
            for y in &ys {
                discrete += c.weight(x, y);
            }
        }
        // the cell-averaged construction carries a 4^d normalization that
        // the rescaled comparison against K removes
        discrete *= nf.powf(t.alpha - d as f64) / 4.0f64.powi(d as i32);
        let rel = if exact != 0.0 {
            ((discrete - exact) / exact).abs()
        } else {
            discrete.abs()
        };
        per_n.push((*n, discrete, exact, rel));
    }
    NonlocalConvergenceReport { per_n }
}

/// Built-in target registry used by configs and experiments.
pub enum TargetModel {
    Local(DiffusionTarget),
    GradV(ScalarField),
    Jump(JumpTarget),
}

pub fn registry_lookup(name: &str, params: &[f64], dim: usize) -> Option<TargetModel> {
    let default_local = |a: MatrixField, b: VectorField| {
        TargetModel::Local(DiffusionTarget {
            dim,
            a,
            b,
            theta: 2.0,
            beta_cell: 0.25,
            lambda_ell: 0.5,
            lambda_ell_upper: 4.0,
            quad_points: 4,
        })
    };
    match name {
        "identity_a" => {
            let d = dim;
            Some(default_local(
                Arc::new(move |_: &[f64]| {
                    let mut m = vec![0.0; d * d];
                    for i in 0..d {
                        m[i * d + i] = 1.0;
                    }
                    m
                }),
                Arc::new(move |_: &[f64]| vec![0.0; d]),
            ))
        }
        "diag_a" => {
            let d = dim;
            let vals: Vec<f64> = params.to_vec();
            if vals.len() != d {
                return None;
            }
            Some(default_local(
                Arc::new(move |_: &[f64]| {
                    let mut m = vec![0.0; d * d];
                    for i in 0..d {
                        m[i * d + i] = vals[i];
                    }
                    m
                }),
                Arc::new(move |_: &[f64]| vec![0.0; d]),
            ))
        }
        "const_b" => {
            let d = dim;
            let vals: Vec<f64> = params.to_vec();
            if vals.len() != d {
                return None;
            }
            Some(default_local(
                Arc::new(move |_: &[f64]| {
                    let mut m = vec![0.0; d * d];
                    for i in 0..d {
                        m[i * d + i] = 1.0;
                    }
                    m
                }),
                Arc::new(move |_: &[f64]| vals.clone()),
            ))
        }
        "grad_V_sin" => Some(TargetModel::GradV(Arc::new(|x: &[f64]| {
            0.2 * (2.0 * std::f64::consts::PI * x[0]).sin()
        }))),
        "grad_V_gaussian" => Some(TargetModel::GradV(Arc::new(|x: &[f64]| {
            let sq: f64 = x.iter().map(|v| v * v).sum();
            (-sq).exp()
        }))),
        "stable_K" => {
            let (alpha, c) = (*params.first()?, *params.get(1)?);
            let d = dim;
            Some(TargetModel::Jump(JumpTarget {
                dim,
                k: Arc::new(move |w: &[f64], z: &[f64]| {
                    let dist: f64 = w
                        .iter()
                        .zip(z)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    c * dist.powf(-(d as f64) - alpha)
                }),
                alpha,
                lambda_comp: c,
                theta: 2.0,
                quad_points: 4,
                translation_invariant: true,
            }))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductance::{check_k1, check_k2, check_nnrw, decompose};
    use crate::lattice::Topology;

    fn identity_target(d: usize) -> DiffusionTarget {
        match registry_lookup("identity_a", &[], d) {
            Some(TargetModel::Local(t)) => t,
            _ => unreachable!(),
        }
    }

    fn window(n: u32, d: usize, extent: i64) -> Window {
        Window::centered(n, d, extent, Topology::Absorbing)
    }

    #[test]
    fn partition_formula() {
        let p = CellPartition::new(10, 0.5);
        assert_eq!(p.cube_steps, 3);
        assert!((p.r_n() - 0.3).abs() < 1e-15);
        // anchors covering [0,1): 0, .3, .6, .9
        let anchors: std::collections::BTreeSet<Vec<i64>> =
            (0..10).map(|c| p.anchor(&[c])).collect();
        assert_eq!(anchors.len(), 4);
    }

    #[test]
    fn cell_average_examples() {
        let p = CellPartition::new(10, 0.5);
        let c7 = cell_average(&|_: &[f64]| 7.0, &p, &[2], 4);
        assert_eq!(c7, 7.0);
        let lin = cell_average(&|x: &[f64]| x[0], &p, &[0], 6);
        assert!((lin - 0.15).abs() < 1e-12); // mean of x over [0, 0.3)
    }

    #[test]
    fn identity_a_gives_floored_nn() {
        let t = identity_target(2);
        let w = window(8, 2, 8);
        let cs = build_local_symmetric(&t, 8, &w).unwrap();
        assert_eq!(cs.weight(&[0, 0], &[1, 0]), 0.5 + EPS0);
        assert_eq!(cs.weight(&[0, 0], &[0, 1]), 0.5 + EPS0);
        assert_eq!(cs.weight(&[0, 0], &[1, 1]), 0.0);
        let dc = decompose(&cs);
        let field = coefficient_field(&dc, &w).unwrap();
        let z = LatticePoint::new(vec![0, 0], 8);
        let f = field.f_at(&z);
        let e = 1.0 + 2.0 * EPS0;
        for (idx, expect) in [(0, e), (1, 0.0), (2, 0.0), (3, e)] {
            assert!((f[idx] - expect).abs() < 1e-12, "F = {f:?}");
        }
    }

    #[test]
    fn offdiagonal_a_recovered() {
        let mut t = identity_target(2);
        t.a = Arc::new(|_: &[f64]| vec![1.0, 0.2, 0.2, 1.0]);
        let w = window(8, 2, 8);
        let cs = build_local_symmetric(&t, 8, &w).unwrap();
        // sign-matched diagonal edge carries a12/2
        assert!((cs.weight(&[0, 0], &[1, 1]) - 0.1).abs() < 1e-15);
        assert_eq!(cs.weight(&[0, 0], &[1, -1]), 0.0);
        let dc = decompose(&cs);
        let field = coefficient_field(&dc, &w).unwrap();
        let z = LatticePoint::new(vec![0, 0], 8);
        let f = field.f_at(&z);
        assert!((f[1] - 0.2).abs() < 1e-12, "F12 = {}", f[1]);
        assert!((f[2] - 0.2).abs() < 1e-12);
        assert!((f[0] - (1.0 + 2.0 * EPS0)).abs() < 1e-12);
    }

    #[test]
    fn diag_a_recovered() {
        let t = match registry_lookup("diag_a", &[2.0, 1.0], 2) {
            Some(TargetModel::Local(t)) => t,
            _ => unreachable!(),
        };
        let w = window(8, 2, 8);
        let cs = build_local_symmetric(&t, 8, &w).unwrap();
        let dc = decompose(&cs);
        let field = coefficient_field(&dc, &w).unwrap();
        let z = LatticePoint::new(vec![0, 0], 8);
        let f = field.f_at(&z);
        assert!((f[0] - (2.0 + 2.0 * EPS0)).abs() < 1e-12);
        assert!((f[3] - (1.0 + 2.0 * EPS0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_dominant_matrix() {
        let mut t = identity_target(2);
        t.a = Arc::new(|_: &[f64]| vec![1.0, 1.2, 1.2, 1.0]);
        assert!(matches!(
            build_local_symmetric(&t, 8, &window(8, 2, 4)),
            Err(LabError::NotDiagonallyDominant { .. })
        ));
    }

    #[test]
    fn zero_drift_empty_asym() {
        let t = identity_target(1);
        let w = window(8, 1, 8);
        let cs = build_local_symmetric(&t, 8, &w).unwrap();
        let dc = build_local_antisymmetric(&t, &cs, 8, &w);
        assert!(dc.asym.row(&[0]).is_empty());
    }

    #[test]
    fn constant_drift_recovered_inside_cubes() {
        let t = match registry_lookup("const_b", &[1.0, 0.0], 2) {
            Some(TargetModel::Local(t)) => t,
            _ => unreachable!(),
        };
        let n = 16u32;
        let w = window(n, 2, 16);
        let cs = build_local_symmetric(&t, n, &w).unwrap();
        let dc = build_local_antisymmetric(&t, &cs, n, &w);
        let part = CellPartition::new(n, t.beta_cell);
        let field = coefficient_field(&dc, &w).unwrap();
        for z in field.window.points() {
            let b = field.b_at(&z);
            let up = z.step(0, 1);
            let expect = if part.same_cube(&z.coords, &up.coords) {
                1.0
            } else {
                0.0
            };
            assert!((b[0] - expect).abs() < 1e-12, "z {:?} b {b:?}", z.coords);
            assert!(b[1].abs() < 1e-12);
        }
    }

    #[test]
    fn local_build_passes_checkers() {
        let t = match registry_lookup("const_b", &[1.0, 0.0], 2) {
            Some(TargetModel::Local(t)) => t,
            _ => unreachable!(),
        };
        let n = 8u32;
        let w = window(n, 2, 8);
        let cs = build_local_symmetric(&t, n, &w).unwrap();
        let dc = build_local_antisymmetric(&t, &cs, n, &w);
        let k2 = check_k2(&dc, &w).unwrap();
        assert!(k2.passed);
        assert!(k2.constants["D"] <= 0.5 + 1e-12);
        let nnrw = check_nnrw(&dc, &w);
        assert!(nnrw.passed);
        assert!((nnrw.constants["epsilon"] - (0.5 + EPS0)).abs() < 1e-12);
        let k1 = check_k1(&dc, t.theta, &w);
        assert!(k1.passed);
        assert!(k1.constants["A"].is_finite());
    }

    #[test]
    fn gradient_drift_linear_v() {
        // V(x) = x, d=1, n=8: C_a(x, x+1/8) = -1/16 and B_1 = 1
        let n = 8u32;
        let w = window(n, 1, 8);
        let cs = Kernel::nn(n, 2.0, 1, 0.5);
        // edge-stored copy so the gradient builder can attach to it
        let mut cs_edges = Kernel::new_edges(n, 2.0, 1);
        for x in w.points() {
            let y = x.step(0, 1);
            if w.contains(&y) {
                cs_edges.insert_edge(&x.coords, &y.coords, 0.5);
                cs_edges.insert_edge(&y.coords, &x.coords, 0.5);
            }
        }
        cs_edges.range_bound = cs.range_bound;
        let v: ScalarField = Arc::new(|x: &[f64]| x[0]);
        let dc = build_gradient_drift(&v, &cs_edges, n, &w);
        assert!((dc.asym.weight(&[0], &[1]) - (-1.0 / 16.0)).abs() < 1e-14);
        let field = coefficient_field(&dc, &w).unwrap();
        for z in field.window.points() {
            assert!((field.b_at(&z)[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_drift_clipping() {
        // steep V: clipped edges contribute nothing
        let n = 4u32;
        let w = window(n, 1, 4);
        let mut cs = Kernel::new_edges(n, 2.0, 1);
        for x in w.points() {
            let y = x.step(0, 1);
            if w.contains(&y) {
                cs.insert_edge(&x.coords, &y.coords, 0.5);
                cs.insert_edge(&y.coords, &x.coords, 0.5);
            }
        }
        let v: ScalarField = Arc::new(|x: &[f64]| 100.0 * x[0]);
        let dc = build_gradient_drift(&v, &cs, n, &w);
        assert!(dc.asym.row(&[0]).is_empty());

        let vc: ScalarField = Arc::new(|_: &[f64]| 5.0);
        let dc = build_gradient_drift(&vc, &cs, n, &w);
        assert!(dc.asym.row(&[0]).is_empty());
    }

    fn stable_target(alpha: f64, c: f64) -> JumpTarget {
        match registry_lookup("stable_K", &[alpha, c], 1) {
            Some(TargetModel::Jump(t)) => t,
            _ => unreachable!(),
        }
    }

    #[test]
    fn nonlocal_closed_form_cell() {
        // d=1, alpha=1, K = |w-z|^{-2}, n=4, x=0, y=3/4: C = 4 ln(9/8)
        let t = stable_target(1.0, 1.0);
        let w = window(4, 1, 8);
        let built = build_nonlocal(&t, 4, &w, 4.0).unwrap();
        let got = built.conductance.weight(&[0], &[3]);
        let expect = 4.0 * (9.0f64 / 8.0).ln();
        assert!((got - expect).abs() < 1e-6, "got {got} expect {expect}");
        // indicator: adjacent cells carry no edge
        assert_eq!(built.conductance.weight(&[0], &[1]), 0.0);
    }

    #[test]
    fn nonlocal_symmetric_kernel_decomposes_symmetric() {
        let t = stable_target(1.0, 1.0);
        let w = window(4, 1, 6);
        let built = build_nonlocal(&t, 4, &w, 2.0).unwrap();
        let dc = decompose(&built.conductance);
        assert!(dc.asym.row(&[0]).is_empty());
        assert!(built.dropped_tail > 0.0);
    }

    #[test]
    fn nonlocal_comparability_sampled() {
        // c1 |nx-ny|^{-d-alpha} <= C_s <= c2 |nx-ny|^{-d-alpha}
        let t = stable_target(1.0, 1.0);
        let n = 8u32;
        let w = window(n, 1, 8);
        let built = build_nonlocal(&t, n, &w, 4.0).unwrap();
        for h in 2i64..=(4 * n as i64) {
            let cw = built.conductance.weight(&[0], &[h]);
            if cw == 0.0 {
                continue;
            }
            // cell averaging carries a factor 4^d on top of the model
            let model = 4.0 * (h as f64).powf(-2.0);
            let ratio = cw / model;
            assert!((0.5..=2.0).contains(&ratio), "h={h} ratio={ratio}");
        }
    }

    #[test]
    fn nonsym_stable_satisfies_k1() {
        let w = window(16, 1, 16);
        let dc = build_nonsym_stable(1, 0.8, 0.3, 0.9, 1.0, 0.5, 16, 64);
        // nonnegativity of C = C_s + C_a
        for (y, wv) in dc.row(&[0]) {
            assert!(wv >= 0.0, "negative C at {y:?}");
        }
        let rep = check_k1(&dc, f64::INFINITY, &w);
        assert!(rep.passed);
        assert!(rep.constants["A"].is_finite() && rep.constants["A"] > 0.0);
    }

    #[test]
    fn local_distances_decrease() {
        let t = match registry_lookup("const_b", &[1.0, 0.0], 2) {
            Some(TargetModel::Local(t)) => t,
            _ => unreachable!(),
        };
        let mut builds = Vec::new();
        for n in [8u32, 16] {
            let w = window(n, 2, (n as i64) * 3 / 2);
            let cs = build_local_symmetric(&t, n, &w).unwrap();
            builds.push((n, build_local_antisymmetric(&t, &cs, n, &w), w));
        }
        let rep =
            verify_local_convergence(&builds, &t, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(rep.per_n[1].2 < rep.per_n[0].2, "{:?}", rep.per_n);
        assert!(rep.per_n[1].1 <= rep.per_n[0].1 + 1e-9, "{:?}", rep.per_n);
    }

    #[test]
    fn nonlocal_discrepancy_small() {
        // f = 1 on [0,1]x[2,3], K = |x-y|^{-2}: integral ln(4/3)
        let t = stable_target(1.0, 1.0);
        let mut builds = Vec::new();
        for n in [8u32, 16] {
            let w = window(n, 1, 4 * n as i64);
            let built = build_nonlocal(&t, n, &w, 8.0).unwrap();
            builds.push((n, built.conductance));
        }
        let rep = verify_nonlocal_convergence(&builds, &t, (&[0.0], &[1.0]), (&[2.0], &[3.0]));
        let exact = rep.per_n[0].2;
        assert!((exact - (4.0f64 / 3.0).ln()).abs() < 1e-6, "oracle {exact}");
        assert!(rep.per_n[1].3 <= 0.02, "{:?}", rep.per_n);
    }
}
