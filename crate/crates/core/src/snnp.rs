//! Shortest nearest-neighbor path (SNNP) combinatorics and the recovery of
//! effective coefficients F⁽ⁿ⁾_ij, B⁽ⁿ⁾_i from a decomposed conductance.
//!
//! All path ratios are exact rationals; floats enter only in the final
//! aggregation against the conductance weights.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use num_bigint::{BigInt, BigUint};
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::conductance::DecomposedConductance;
use crate::error::LabError;
use crate::lattice::{LatticePoint, Window};
use crate::operator::LatticeFunction;

type Rat = Ratio<BigInt>;

/// A directed unit edge (z, z ± e_axis/n).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedEdge {
    pub from: LatticePoint,
    pub to: LatticePoint,
    pub axis: usize,
    pub orientation: i8,
}

impl DirectedEdge {
    pub fn new(from: LatticePoint, to: LatticePoint) -> Self {
        assert_eq!(from.scale, to.scale, "edge endpoints must share a scale");
        let mut axis = None;
        for (i, (&a, &b)) in from.coords.iter().zip(&to.coords).enumerate() {
            if a != b {
                assert!(axis.is_none(), "edge must be a unit step along one axis");
                assert_eq!((b - a).abs(), 1, "edge must be a unit step");
                axis = Some((i, if b > a { 1i8 } else { -1 }));
            }
        }
        let (axis, orientation) = axis.expect("edge endpoints must differ");
        Self {
            from,
            to,
            axis,
            orientation,
        }
    }
}

fn factorial(k: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 2..=k {
        acc *= i;
    }
    acc
}

fn multinomial(parts: &[u64]) -> BigUint {
    let total: u64 = parts.iter().sum();
    let mut acc = factorial(total);
    for &p in parts {
        acc /= factorial(p);
    }
    acc
}

/// Number of shortest nearest-neighbor paths from x to y:
/// the multinomial (Σ|Δ_i|)!/∏|Δ_i|! for Δ = n(y−x).
pub fn snnp_count(x: &LatticePoint, y: &LatticePoint) -> BigUint {
    assert_eq!(x.scale, y.scale, "endpoints must share a scale");
    let parts: Vec<u64> = x
        .coords
        .iter()
        .zip(&y.coords)
        .map(|(&a, &b)| (b - a).unsigned_abs())
        .collect();
    multinomial(&parts)
}

fn in_hull(p: &[i64], x: &[i64], y: &[i64]) -> bool {
    p.iter()
        .zip(x.iter().zip(y))
        .all(|(&c, (&a, &b))| c >= a.min(b) && c <= a.max(b))
}

/// Fraction of SNNPs from x to y traversing the directed edge e:
/// `count(x, e.from)·count(e.to, y)/count(x, y)` when the edge is
/// monotone-compatible, else 0. Exact rational in [0,1].
pub fn snnp_edge_ratio(x: &LatticePoint, y: &LatticePoint, e: &DirectedEdge) -> Rat {
    let delta_axis = y.coords[e.axis] - x.coords[e.axis];
    if delta_axis.signum() != e.orientation as i64 {
        return Rat::zero();
    }
    if !in_hull(&e.from.coords, &x.coords, &y.coords) || !in_hull(&e.to.coords, &x.coords, &y.coords)
    {
        return Rat::zero();
    }
    let num = snnp_count(x, &e.from) * snnp_count(&e.to, y);
    let den = snnp_count(x, y);
    let r = Rat::new(BigInt::from(num), BigInt::from(den));
    // monotone paths traverse any edge at most once, so the product formula
    // counts paths, not traversals
    debug_assert!(r <= Rat::one());
    r
}

/// `g_i(x,y,z) = P^{x,y}(z+e_i/n, z) − P^{x,y}(z, z+e_i/n)` (exact rational).
fn g_edge(x: &LatticePoint, y: &LatticePoint, z: &LatticePoint, axis: usize) -> Rat {
    let mut up = z.clone();
    up.coords[axis] += 1;
    let fwd = DirectedEdge::new(up.clone(), z.clone());
    let bwd = DirectedEdge::new(z.clone(), up);
    snnp_edge_ratio(x, y, &fwd) - snnp_edge_ratio(x, y, &bwd)
}

/// Residual of the exact telescoping identities along SNNPs:
/// `f(x) − f(y) = (1/n) Σ_i Σ_z g_i(z)·∇_i f(z)` and, per axis,
/// `Σ_z (P(z+e_i/n, z) + P(z, z+e_i/n)) = |Δ_i|`.
pub fn gradient_identity_check(
    x: &LatticePoint,
    y: &LatticePoint,
    f: &LatticeFunction,
) -> Result<f64, LabError> {
    assert_eq!(x.scale, y.scale);
    let d = x.coords.len();
    // hull box of the pair; f must cover it
    let lo: Vec<i64> = x.coords.iter().zip(&y.coords).map(|(&a, &b)| a.min(b)).collect();
    let hi: Vec<i64> = x.coords.iter().zip(&y.coords).map(|(&a, &b)| a.max(b)).collect();
    let mut hull = vec![Vec::new()];
    for i in 0..d {
        let mut next = Vec::new();
        for p in &hull {
            for c in lo[i]..=hi[i] {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        hull = next;
    }
    for p in &hull {
        if !f.window.contains(&LatticePoint::new(p.clone(), x.scale)) {
            return Err(LabError::HullOutsideWindow);
        }
    }

    let fx = f.value(&x.coords);
    let fy = f.value(&y.coords);
    let mut rhs = 0.0;
    let mut worst_help: f64 = 0.0;
    for axis in 0..d {
        let mut traversal = Rat::zero();
        for zc in &hull {
            if zc[axis] == hi[axis] {
                continue; // upward edge leaves the hull
            }
            let z = LatticePoint::new(zc.clone(), x.scale);
            let mut up = z.clone();
            up.coords[axis] += 1;
            let fwd = DirectedEdge::new(up.clone(), z.clone());
            let bwd = DirectedEdge::new(z.clone(), up.clone());
            let p_down = snnp_edge_ratio(x, y, &fwd);
            let p_up = snnp_edge_ratio(x, y, &bwd);
            let g = rat_to_f64(&(p_down.clone() - p_up.clone()));
            rhs += g * (f.value(&up.coords) - f.value(zc));
            traversal += p_down + p_up;
        }
        let expected = (y.coords[axis] - x.coords[axis]).abs();
        let help = rat_to_f64(&(traversal - Rat::from(BigInt::from(expected)))).abs();
        worst_help = worst_help.max(help);
    }
    let residual = ((fx - fy) - rhs).abs();
    Ok(residual.max(worst_help))
}

fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().expect("rational fits f64")
}

/// Effective coefficients recovered from SNNP averaging:
/// `F_ij(z) = Σ_{x,y} C_s(x,y)·g_i(x,y,z)·n(x_j−y_j)` and
/// `B_i(z) = n·Σ_{x,y} g_i(x,y,z)·C_a(x,y)`, stored on an inner window.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub window: Window,
    pub scale: u32,
    pub dim: usize,
    /// d×d row-major per window point.
    pub f: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl CoefficientField {
    pub fn f_at(&self, z: &LatticePoint) -> &[f64] {
        &self.f[self.window.index_of(z).expect("point in field window")]
    }

    pub fn b_at(&self, z: &LatticePoint) -> &[f64] {
        &self.b[self.window.index_of(z).expect("point in field window")]
    }

    /// CSV rows `z_coords F_11 .. F_dd B_1 .. B_d`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (idx, z) in self.window.points().enumerate() {
            let coords: Vec<String> = z.coords.iter().map(|c| c.to_string()).collect();
            let vals: Vec<String> = self.f[idx]
                .iter()
                .chain(&self.b[idx])
                .map(|v| format!("{v}"))
                .collect();
            let _ = writeln!(out, "{},{}", coords.join(","), vals.join(","));
        }
        out
    }
}

/// Computes F⁽ⁿ⁾, B⁽ⁿ⁾ on the window shrunk by the conductance range plus
/// one step, by exact SNNP summation over all contributing pairs.
pub fn coefficient_field(
    dc: &DecomposedConductance,
    window: &Window,
) -> Result<CoefficientField, LabError> {
    let range = dc.range_bound().ok_or(LabError::UnboundedRange)?;
    if range > 4.0 {
        return Err(LabError::RangeTooLarge(range));
    }
    let n = dc.scale();
    let d = dc.dim();
    let reach = range.floor() as i64;
    let margin = reach + 1;
    let inner = window.shrink(margin).ok_or(LabError::WindowMargin {
        radius: margin as f64 / n as f64,
    })?;

    // displacement support of the symmetric part (covers the antisymmetric
    // part: |C_a| <= C_s edgewise)
    let mut disps: BTreeSet<Vec<i64>> = BTreeSet::new();
    match &dc.sym.storage {
        crate::conductance::Storage::Displacement(map) => {
            disps.extend(map.keys().cloned());
        }
        crate::conductance::Storage::Edges(map) => {
            for (x, row) in map {
                for y in row.keys() {
                    disps.insert(x.iter().zip(y).map(|(&a, &b)| b - a).collect());
                }
            }
        }
    }

    // g depends only on the geometry (x−z, h, i): precompute it once
    let mut rel_box = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::new();
        for p in &rel_box {
            for c in -reach..=reach {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        rel_box = next;
    }
    let mut gtab: HashMap<(Vec<i64>, Vec<i64>), Vec<f64>> = HashMap::new();
    for rel in &rel_box {
        for h in &disps {
            let x = LatticePoint::new(rel.clone(), n);
            let y = LatticePoint::new(rel.iter().zip(h).map(|(&a, &b)| a + b).collect(), n);
            let z = LatticePoint::new(vec![0; d], n);
            let g: Vec<f64> = (0..d).map(|i| rat_to_f64(&g_edge(&x, &y, &z, i))).collect();
            gtab.insert((rel.clone(), h.clone()), g);
        }
    }

    let points: Vec<LatticePoint> = inner.points().collect();
    let nf = n as f64;
    let fields: Vec<(Vec<f64>, Vec<f64>)> = points
        .par_iter()
        .map(|z| {
            let mut fm = vec![0.0; d * d];
            let mut bv = vec![0.0; d];
            for rel in &rel_box {
                let xc: Vec<i64> = z.coords.iter().zip(rel).map(|(&a, &b)| a + b).collect();
                for h in &disps {
                    let yc: Vec<i64> = xc.iter().zip(h).map(|(&a, &b)| a + b).collect();
                    let ws = dc.sym.weight(&xc, &yc);
                    let wa = dc.asym.weight(&xc, &yc);
                    if ws == 0.0 && wa == 0.0 {
                        continue;
                    }
                    let g = &gtab[&(rel.clone(), h.clone())];
                    for i in 0..d {
                        if g[i] == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            // n(x_j − y_j) = −h_j
                            fm[i * d + j] += ws * g[i] * (-(h[j] as f64));
                        }
                        bv[i] += nf * g[i] * wa;
                    }
                }
            }
            (fm, bv)
        })
        .collect();

    let (f, b): (Vec<_>, Vec<_>) = fields.into_iter().unzip();
    Ok(CoefficientField {
        window: inner,
        scale: n,
        dim: d,
        f,
        b,
    })
}
