//! Conductance families on `n⁻¹ℤᵈ`, their symmetric/antisymmetric
//! decomposition, and computable checkers for the structural assumptions
//! (K1), (K2), (C-Tail), the second-moment bound, NNRW comparability, and
//! randomized Poincaré falsification.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::LabError;
use crate::lattice::{LatticePoint, Window};

/// Sparse edge weights, either per ordered pair or as a translation-invariant
/// displacement table (`h` in lattice steps).
#[derive(Debug, Clone)]
pub enum Storage {
    Edges(BTreeMap<Vec<i64>, BTreeMap<Vec<i64>, f64>>),
    Displacement(BTreeMap<Vec<i64>, f64>),
}

/// A conductance `C⁽ⁿ⁾` (weights ≥ 0) or a signed kernel such as `C_a⁽ⁿ⁾`.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub scale: u32,
    pub alpha: f64,
    pub dim: usize,
    /// Bounded range constant `C`: weight = 0 whenever `|x−y| > C/n`.
    pub range_bound: Option<f64>,
    pub storage: Storage,
}

pub type Conductance = Kernel;

impl Kernel {
    pub fn new_edges(scale: u32, alpha: f64, dim: usize) -> Self {
        Self {
            scale,
            alpha,
            dim,
            range_bound: None,
            storage: Storage::Edges(BTreeMap::new()),
        }
    }

    pub fn new_displacement(scale: u32, alpha: f64, dim: usize) -> Self {
        Self {
            scale,
            alpha,
            dim,
            range_bound: None,
            storage: Storage::Displacement(BTreeMap::new()),
        }
    }

    /// The nearest-neighbor conductance `NN(x,y) = w·1{|x−y| = 1/n}`.
    pub fn nn(scale: u32, alpha: f64, dim: usize, w: f64) -> Self {
        let mut c = Self::new_displacement(scale, alpha, dim);
        for axis in 0..dim {
            for sign in [-1i64, 1] {
                let mut h = vec![0i64; dim];
                h[axis] = sign;
                c.insert_displacement(&h, w);
            }
        }
        c.range_bound = Some(1.0);
        c
    }

    pub fn is_translation_invariant(&self) -> bool {
        matches!(self.storage, Storage::Displacement(_))
    }

    pub fn insert_edge(&mut self, x: &[i64], y: &[i64], w: f64) {
        if w == 0.0 {
            return;
        }
        assert_ne!(x, y, "diagonal weights must vanish");
        match &mut self.storage {
            Storage::Edges(map) => {
                map.entry(x.to_vec()).or_default().insert(y.to_vec(), w);
            }
            Storage::Displacement(_) => panic!("edge insert on displacement storage"),
        }
    }

    pub fn insert_displacement(&mut self, h: &[i64], w: f64) {
        if w == 0.0 {
            return;
        }
        assert!(h.iter().any(|&c| c != 0), "diagonal weights must vanish");
        match &mut self.storage {
            Storage::Displacement(map) => {
                map.insert(h.to_vec(), w);
            }
            Storage::Edges(_) => panic!("displacement insert on edge storage"),
        }
    }

    pub fn weight(&self, x: &[i64], y: &[i64]) -> f64 {
        match &self.storage {
            Storage::Edges(map) => map
                .get(x)
                .and_then(|row| row.get(y))
                .copied()
                .unwrap_or(0.0),
            Storage::Displacement(map) => {
                let h: Vec<i64> = x.iter().zip(y).map(|(&a, &b)| b - a).collect();
                map.get(&h).copied().unwrap_or(0.0)
            }
        }
    }

    /// Finitely supported row `y ↦ C(x,y)` as (target coords, weight).
    pub fn row(&self, x: &[i64]) -> Vec<(Vec<i64>, f64)> {
        match &self.storage {
            Storage::Edges(map) => map
                .get(x)
                .map(|row| row.iter().map(|(y, &w)| (y.clone(), w)).collect())
                .unwrap_or_default(),
            Storage::Displacement(map) => map
                .iter()
                .map(|(h, &w)| (x.iter().zip(h).map(|(&a, &b)| a + b).collect(), w))
                .collect(),
        }
    }

    /// Total rate `C⁽ⁿ⁾(x) = Σ_y C(x,y)`.
    pub fn total_rate(&self, x: &LatticePoint) -> f64 {
        self.row(&x.coords).iter().map(|(_, w)| w).sum()
    }

    /// Euclidean length of a displacement in embedded units.
    fn disp_len(&self, h: &[i64]) -> f64 {
        let n = self.scale as f64;
        h.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>().sqrt()
    }

    pub fn validate_nonnegative(&self) -> Result<(), LabError> {
        let check = |w: f64, what: String| {
            if w < 0.0 {
                Err(LabError::InvariantBreach(format!("negative weight at {what}")))
            } else {
                Ok(())
            }
        };
        match &self.storage {
            Storage::Edges(map) => {
                for (x, row) in map {
                    for (y, &w) in row {
                        check(w, format!("{x:?}->{y:?}"))?;
                    }
                }
            }
            Storage::Displacement(map) => {
                for (h, &w) in map {
                    check(w, format!("h={h:?}"))?;
                }
            }
        }
        Ok(())
    }

    /// Line-oriented text serialization: header `n alpha dim kind`, then
    /// `x_coords y_coords weight` triples (or `h_coords weight` rows for
    /// the displacement variant).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kind = if self.is_translation_invariant() {
            "displacement"
        } else {
            "edges"
        };
        let _ = writeln!(out, "{} {} {} {}", self.scale, self.alpha, self.dim, kind);
        match &self.storage {
            Storage::Edges(map) => {
                for (x, row) in map {
                    for (y, w) in row {
                        let xs: Vec<String> = x.iter().map(|c| c.to_string()).collect();
                        let ys: Vec<String> = y.iter().map(|c| c.to_string()).collect();
                        let _ = writeln!(out, "{} {} {}", xs.join(" "), ys.join(" "), w);
                    }
                }
            }
            Storage::Displacement(map) => {
                for (h, w) in map {
                    let hs: Vec<String> = h.iter().map(|c| c.to_string()).collect();
                    let _ = writeln!(out, "{} {}", hs.join(" "), w);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LabError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| LabError::Parse("empty conductance text".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(LabError::Parse(format!("bad header: {header}")));
        }
        let scale: u32 = parts[0]
            .parse()
            .map_err(|_| LabError::Parse("bad scale".into()))?;
        let alpha: f64 = parts[1]
            .parse()
            .map_err(|_| LabError::Parse("bad alpha".into()))?;
        let dim: usize = parts[2]
            .parse()
            .map_err(|_| LabError::Parse("bad dim".into()))?;
        let mut kernel = match parts[3] {
            "edges" => Self::new_edges(scale, alpha, dim),
            "displacement" => Self::new_displacement(scale, alpha, dim),
            k => return Err(LabError::Parse(format!("unknown kind {k}"))),
        };
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let parse_i = |s: &str| {
                s.parse::<i64>()
                    .map_err(|_| LabError::Parse(format!("bad coord {s}")))
            };
            let parse_f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| LabError::Parse(format!("bad weight {s}")))
            };
            if kernel.is_translation_invariant() {
                if toks.len() != dim + 1 {
                    return Err(LabError::Parse(format!("bad row: {line}")));
                }
                let h: Vec<i64> = toks[..dim].iter().map(|s| parse_i(s)).collect::<Result<_, _>>()?;
                kernel.insert_displacement(&h, parse_f(toks[dim])?);
            } else {
                if toks.len() != 2 * dim + 1 {
                    return Err(LabError::Parse(format!("bad row: {line}")));
                }
                let x: Vec<i64> = toks[..dim].iter().map(|s| parse_i(s)).collect::<Result<_, _>>()?;
                let y: Vec<i64> =
                    toks[dim..2 * dim].iter().map(|s| parse_i(s)).collect::<Result<_, _>>()?;
                kernel.insert_edge(&x, &y, parse_f(toks[2 * dim])?);
            }
        }
        Ok(kernel)
    }
}

/// `C = C_s + C_a` with optional auxiliary kernels `J⁽ⁿ⁾`, `j⁽ⁿ⁾`.
#[derive(Debug, Clone)]
pub struct DecomposedConductance {
    pub sym: Kernel,
    pub asym: Kernel,
    pub aux_upper_j: Option<Kernel>,
    pub aux_lower_j: Option<Kernel>,
}

impl DecomposedConductance {
    pub fn scale(&self) -> u32 {
        self.sym.scale
    }
    pub fn alpha(&self) -> f64 {
        self.sym.alpha
    }
    pub fn dim(&self) -> usize {
        self.sym.dim
    }

    /// `C(x,y) = C_s(x,y) + C_a(x,y)`.
    pub fn weight(&self, x: &[i64], y: &[i64]) -> f64 {
        self.sym.weight(x, y) + self.asym.weight(x, y)
    }

    pub fn total_rate(&self, x: &LatticePoint) -> f64 {
        let mut total = 0.0;
        for (y, w) in self.sym.row(&x.coords) {
            total += w + self.asym.weight(&x.coords, &y);
        }
        total
    }

    /// Merged row of `C = C_s + C_a` (support of C_a is within support of C_s
    /// for every family built here; zero-weight entries are kept out).
    pub fn row(&self, x: &[i64]) -> Vec<(Vec<i64>, f64)> {
        self.sym
            .row(x)
            .into_iter()
            .map(|(y, w)| {
                let total = w + self.asym.weight(x, &y);
                (y, total)
            })
            .filter(|(_, w)| *w != 0.0)
            .collect()
    }

    pub fn upper_j(&self) -> &Kernel {
        self.aux_upper_j.as_ref().unwrap_or(&self.sym)
    }

    pub fn lower_j(&self) -> &Kernel {
        self.aux_lower_j.as_ref().unwrap_or(&self.sym)
    }

    pub fn range_bound(&self) -> Option<f64> {
        self.sym.range_bound
    }
}

/// `C_s(x,y) = (C(x,y)+C(y,x))/2`, `C_a(x,y) = (C(x,y)−C(y,x))/2`.
/// Exact reconstruction `C = C_s + C_a` on every stored edge.
pub fn decompose(c: &Conductance) -> DecomposedConductance {
    let mut sym = Kernel {
        scale: c.scale,
        alpha: c.alpha,
        dim: c.dim,
        range_bound: c.range_bound,
        storage: match c.storage {
            Storage::Edges(_) => Storage::Edges(BTreeMap::new()),
            Storage::Displacement(_) => Storage::Displacement(BTreeMap::new()),
        },
    };
    let mut asym = sym.clone();
    match &c.storage {
        Storage::Edges(map) => {
            for (x, row) in map {
                for (y, &w) in row {
                    let back = c.weight(y, x);
                    let s = (w + back) / 2.0;
                    let a = (w - back) / 2.0;
                    if s != 0.0 {
                        sym.insert_edge(x, y, s);
                        // ensure the reverse edge exists even if C(y,x) = 0
                        if c.weight(y, x) == 0.0 {
                            sym.insert_edge(y, x, s);
                            asym.insert_edge(y, x, -a);
                        }
                    }
                    if a != 0.0 {
                        asym.insert_edge(x, y, a);
                    }
                }
            }
        }
        Storage::Displacement(map) => {
            for (h, &w) in map {
                let neg: Vec<i64> = h.iter().map(|&v| -v).collect();
                let back = map.get(&neg).copied().unwrap_or(0.0);
                let s = (w + back) / 2.0;
                let a = (w - back) / 2.0;
                if s != 0.0 {
                    sym.insert_displacement(h, s);
                    if back == 0.0 {
                        sym.insert_displacement(&neg, s);
                        asym.insert_displacement(&neg, -a);
                    }
                }
                if a != 0.0 {
                    asym.insert_displacement(h, a);
                }
            }
        }
    }
    DecomposedConductance {
        sym,
        asym,
        aux_upper_j: None,
        aux_lower_j: None,
    }
}

/// Structured result of an assumption checker run.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub assumption_id: String,
    pub constants: BTreeMap<String, f64>,
    pub passed: bool,
    pub witnesses: Vec<String>,
}

impl AssumptionReport {
    fn new(id: &str) -> Self {
        Self {
            assumption_id: id.to_string(),
            constants: BTreeMap::new(),
            passed: true,
            witnesses: Vec::new(),
        }
    }

    fn fail(&mut self, witness: String) {
        self.passed = false;
        self.witnesses.push(witness);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Representative row origins for a sup over window points: a single origin
/// suffices for translation-invariant kernels.
fn sup_points(dc: &DecomposedConductance, window: &Window) -> Vec<Vec<i64>> {
    if dc.sym.is_translation_invariant() {
        vec![vec![0i64; dc.dim()]]
    } else {
        window.points().map(|p| p.coords).collect()
    }
}

/// (C-Tail0)/(C-Tail∞): tail sums `n^α Σ_{|x−y|>r} C_s` (r ≤ 1) and
/// `n^α Σ_{|x−y|>r} C` (r > 1), with fitted constants.
pub fn check_ctail(
    dc: &DecomposedConductance,
    radii: &[f64],
    window: &Window,
) -> Result<AssumptionReport, LabError> {
    let mut report = AssumptionReport::new("CTail");
    let n = dc.scale() as f64;
    let alpha = dc.alpha();
    let half_extent = (0..window.dim())
        .map(|i| (window.side(i) / 2) as f64 / n)
        .fold(f64::INFINITY, f64::min);
    let origins = sup_points(dc, window);

    let mut small: Vec<(f64, f64)> = Vec::new(); // (r, tail sup) for r <= 1
    let mut large: Vec<(f64, f64)> = Vec::new();
    for &r in radii {
        if !dc.sym.is_translation_invariant() && r > half_extent {
            return Err(LabError::WindowMargin { radius: r });
        }
        let mut sup = 0.0f64;
        for x in &origins {
            let mut tail = 0.0;
            if r <= 1.0 {
                for (y, w) in dc.sym.row(x) {
                    let h: Vec<i64> = x.iter().zip(&y).map(|(&a, &b)| b - a).collect();
                    if dc.sym.disp_len(&h) > r {
                        tail += w;
                    }
                }
            } else {
                for (y, w) in dc.row(x) {
                    let h: Vec<i64> = x.iter().zip(&y).map(|(&a, &b)| b - a).collect();
                    if dc.sym.disp_len(&h) > r {
                        tail += w;
                    }
                }
            }
            sup = sup.max(n.powf(alpha) * tail);
        }
        if r <= 1.0 {
            small.push((r, sup));
        } else {
            large.push((r, sup));
        }
    }

    // minimal c with tail <= c r^{-alpha}
    let c_small = small
        .iter()
        .map(|&(r, t)| t * r.powf(alpha))
        .fold(0.0f64, f64::max);
    report.constants.insert("c".into(), c_small);

    if !large.is_empty() {
        let positive: Vec<(f64, f64)> = large.iter().copied().filter(|&(_, t)| t > 0.0).collect();
        if positive.is_empty() {
            report.constants.insert("c_inf".into(), 0.0);
            report.constants.insert("delta".into(), f64::INFINITY);
        } else if positive.len() == 1 {
            let (r, t) = positive[0];
            report.constants.insert("c_inf".into(), t * r);
            report.constants.insert("delta".into(), 1.0);
        } else {
            // log-log least squares: log t = log c - delta log r
            let (slope, intercept) = loglog_fit(&positive);
            let delta = -slope;
            // lift c until every sample sits below c r^{-delta} with <= 5% slack
            let mut c_inf = intercept.exp();
            for &(r, t) in &positive {
                c_inf = c_inf.max(t * r.powf(delta));
            }
            report.constants.insert("c_inf".into(), c_inf);
            report.constants.insert("delta".into(), delta);
            if delta <= 0.0 || !delta.is_finite() {
                report.fail(format!("nonpositive tail exponent delta={delta}"));
            }
        }
    }
    if !c_small.is_finite() {
        report.fail("non-finite small-radius constant".into());
    }
    Ok(report)
}

/// Least-squares fit of `ln y = slope·ln x + intercept` over positive samples.
pub fn loglog_fit(samples: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = m * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (0.0, if pts.is_empty() { f64::NEG_INFINITY } else { sy / m });
    }
    let slope = (m * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / m;
    (slope, intercept)
}

/// `W(x) = n^α Σ_y |C_a(x,y)|²/J(x,y)` with 0/0 := 0; nonzero/0 is an
/// assumption breach reported with a witness edge.
fn w_field(
    dc: &DecomposedConductance,
    x: &[i64],
    radius_cap: Option<f64>,
    report: &mut AssumptionReport,
) -> f64 {
    let n = dc.scale() as f64;
    let alpha = dc.alpha();
    let j = dc.upper_j();
    let mut total = 0.0;
    for (y, a) in dc.asym.row(x) {
        if a == 0.0 {
            continue;
        }
        if let Some(r) = radius_cap {
            let h: Vec<i64> = x.iter().zip(&y).map(|(&p, &q)| q - p).collect();
            if dc.sym.disp_len(&h) >= r {
                continue;
            }
        }
        let jw = j.weight(x, &y);
        if jw == 0.0 {
            report.fail(format!("C_a supported where J = 0 at edge {x:?}->{y:?}"));
            continue;
        }
        total += a * a / jw;
    }
    n.powf(alpha) * total
}

/// `L^θ(window)` norm of a per-point field w.r.t. `μ⁽ⁿ⁾`; θ = ∞ is a sup.
fn ltheta_norm(values: &[f64], n: u32, dim: usize, theta: f64) -> f64 {
    if theta.is_infinite() {
        values.iter().copied().fold(0.0, f64::max)
    } else {
        let mu = (n as f64).powi(-(dim as i32));
        (values.iter().map(|v| v.powf(theta)).sum::<f64>() * mu).powf(1.0 / theta)
    }
}

/// (K1): `‖W‖_{L^θ} ≤ A`, plus the localized small-radius variant used by
/// the nonlocal extra assumption.
pub fn check_k1(dc: &DecomposedConductance, theta: f64, window: &Window) -> AssumptionReport {
    let mut report = AssumptionReport::new("K1");
    let d = dc.dim() as f64;
    if !(theta > d / dc.alpha()) {
        report
            .witnesses
            .push(format!("theta={theta} outside (d/alpha, inf]"));
    }
    let origins = sup_points(dc, window);
    let values: Vec<f64> = origins
        .iter()
        .map(|x| w_field(dc, x, None, &mut report))
        .collect();
    let a = ltheta_norm(&values, dc.scale(), dc.dim(), theta);
    report.constants.insert("A".into(), a);
    for r in [1.0, 0.5, 0.25, 0.125] {
        let vals: Vec<f64> = origins
            .iter()
            .map(|x| w_field(dc, x, Some(r), &mut report))
            .collect();
        let norm = ltheta_norm(&vals, dc.scale(), dc.dim(), theta);
        report.constants.insert(format!("A_local_r{r}"), norm);
    }
    if !a.is_finite() {
        report.fail("non-finite K1 norm".into());
    }
    report
}

/// (K2): minimal `D ∈ [0,1)` with `C(x,y) ≥ (1−D) j(x,y)` pointwise.
/// With `j = C_s` the form-comparison half holds identically with C = 1.
pub fn check_k2(dc: &DecomposedConductance, window: &Window) -> Result<AssumptionReport, LabError> {
    let mut report = AssumptionReport::new("K2");
    let j = dc.lower_j();
    let origins = sup_points(dc, window);
    let mut min_ratio = f64::INFINITY;
    let mut any_edge = false;
    for x in &origins {
        for (y, jw) in j.row(x) {
            if jw <= 0.0 {
                continue;
            }
            let c = dc.weight(x, &y);
            if c < 0.0 {
                return Err(LabError::InvariantBreach(format!(
                    "C(x,y) < 0 at {x:?}->{y:?}"
                )));
            }
            any_edge = true;
            min_ratio = min_ratio.min(c / jw);
        }
    }
    let d = if any_edge {
        (1.0 - min_ratio).max(0.0)
    } else {
        0.0
    };
    report.constants.insert("D".into(), d);
    report.constants.insert("C_form".into(), 1.0);
    if dc.aux_lower_j.is_some() {
        report
            .witnesses
            .push("form-domination for non-default j checked pointwise (sampled only)".into());
    }
    if any_edge && min_ratio <= 0.0 {
        report.fail("no D < 1 admissible: C vanishes on an edge with j > 0".into());
    }
    Ok(report)
}

/// NNRW comparability (direct-edge sufficient condition): `C_s ≥ ε` on every
/// nearest-neighbor edge in the window.
pub fn check_nnrw(dc: &DecomposedConductance, window: &Window) -> AssumptionReport {
    let mut report = AssumptionReport::new("NNRW");
    if (dc.alpha() - 2.0).abs() > 1e-12 {
        report
            .witnesses
            .push(format!("warning: alpha = {} (expected 2)", dc.alpha()));
    }
    let origins = sup_points(dc, window);
    let mut eps = f64::INFINITY;
    let mut witness = None;
    for x in &origins {
        for axis in 0..dc.dim() {
            for sign in [-1i64, 1] {
                let mut y = x.clone();
                y[axis] += sign;
                if !dc.sym.is_translation_invariant() {
                    let p = LatticePoint::new(y.clone(), dc.scale());
                    if !window.contains(&p) {
                        continue;
                    }
                }
                let w = dc.sym.weight(x, &y);
                if w < eps {
                    eps = w;
                    witness = Some(format!("{x:?}->{y:?}"));
                }
            }
        }
    }
    if !eps.is_finite() {
        eps = 0.0;
    }
    report.constants.insert("epsilon".into(), eps);
    if eps <= 0.0 {
        if let Some(wt) = witness {
            report.fail(format!("NN edge with zero symmetric weight: {wt}"));
        } else {
            report.fail("no NN edges in window".into());
        }
    }
    report
}

/// `sup_x n^α Σ_{y ∈ B_r(x)} |x−y|² C_s(x,y)` (second-moment/cutoff bound).
pub fn second_moment(dc: &DecomposedConductance, r: f64, window: &Window) -> f64 {
    let n = dc.scale() as f64;
    let alpha = dc.alpha();
    let mut sup = 0.0f64;
    for x in sup_points(dc, window) {
        let mut acc = 0.0;
        for (y, w) in dc.sym.row(&x) {
            let h: Vec<i64> = x.iter().zip(&y).map(|(&a, &b)| b - a).collect();
            let len = dc.sym.disp_len(&h);
            if len < r {
                acc += len * len * w;
            }
        }
        sup = sup.max(n.powf(alpha) * acc);
    }
    sup
}

/// Randomized Poincaré falsification on the ball `B_r(0)`: reports the worst
/// observed ratio `variance / (r^α ℰ_s)` as a lower bound on the constant.
/// Samples are pushed toward the extremal low-frequency modes by smoothing
/// iterations, which tightens the lower bound without claiming proof.
pub fn check_poinc_sampled(
    dc: &DecomposedConductance,
    r: f64,
    trials: usize,
    seed: u64,
) -> AssumptionReport {
    let mut report = AssumptionReport::new("Poinc_sampled");
    let n = dc.scale();
    let nf = n as f64;
    let d = dc.dim();
    let alpha = dc.alpha();
    // enumerate B_r(0) strictly
    let reach = (r * nf).ceil() as i64;
    let mut pts: Vec<Vec<i64>> = Vec::new();
    let mut stack = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == d {
            let len: f64 = prefix
                .iter()
                .map(|&c: &i64| (c as f64 / nf).powi(2))
                .sum::<f64>()
                .sqrt();
            if len < r {
                pts.push(prefix);
            }
            continue;
        }
        for c in -reach..=reach {
            let mut p = prefix.clone();
            p.push(c);
            stack.push(p);
        }
    }
    pts.sort();
    let index: BTreeMap<Vec<i64>, usize> = pts.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let m = pts.len();
    if m == 0 {
        report.constants.insert("c_lower".into(), 0.0);
        return report;
    }
    // edges of C_s restricted to the ball
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (i, x) in pts.iter().enumerate() {
        for (y, w) in dc.sym.row(x) {
            if let Some(&j) = index.get(&y) {
                edges.push((i, j, w));
            }
        }
    }
    let form = |v: &[f64]| -> f64 {
        let mut e = 0.0;
        for &(i, j, w) in &edges {
            let diff = v[i] - v[j];
            e += diff * diff * w;
        }
        nf.powf(alpha - d as f64) * e
    };
    let variance = |v: &[f64]| -> f64 {
        let mean = v.iter().sum::<f64>() / m as f64;
        nf.powi(-(d as i32)) * v.iter().map(|&x| (x - mean).powi(2)).sum::<f64>()
    };
    let max_rate: f64 = pts
        .iter()
        .map(|x| {
            dc.sym
                .row(x)
                .iter()
                .filter(|(y, _)| index.contains_key(y))
                .map(|(_, w)| w)
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let tau = if max_rate > 0.0 { 0.5 / max_rate } else { 0.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..trials.max(1) {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        for _ in 0..(4 * m) {
            let e = form(&v);
            let var = variance(&v);
            if var > 1e-14 && e <= 1e-14 {
                report.fail("disconnected ball: E_s(v,v) = 0 with nonconstant v".into());
                return report;
            }
            if e > 0.0 {
                best = best.max(var / (r.powf(alpha) * e));
            }
            if tau == 0.0 {
                break;
            }
            // one Jacobi smoothing step toward the slow modes
            let mut next = v.clone();
            for &(i, j, w) in &edges {
                next[i] -= tau * w * (v[i] - v[j]);
            }
            let mean = next.iter().sum::<f64>() / m as f64;
            for x in next.iter_mut() {
                *x -= mean;
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-200 {
                break;
            }
            for x in next.iter_mut() {
                *x /= norm;
            }
            v = next;
        }
    }
    report.constants.insert("c_lower".into(), best);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Topology;

    fn window(n: u32, d: usize, extent: i64) -> Window {
        Window::centered(n, d, extent, Topology::Absorbing)
    }

    #[test]
    fn decompose_symmetric_input() {
        let c = Kernel::nn(4, 2.0, 1, 0.5);
        let dc = decompose(&c);
        assert_eq!(dc.asym.row(&[0]).len(), 0);
        assert_eq!(dc.sym.weight(&[0], &[1]), 0.5);
    }

    #[test]
    fn decompose_arithmetic() {
        let mut c = Kernel::new_edges(4, 2.0, 1);
        c.insert_edge(&[0], &[1], 0.7);
        c.insert_edge(&[1], &[0], 0.3);
        let dc = decompose(&c);
        assert_eq!(dc.sym.weight(&[0], &[1]), 0.5);
        assert!((dc.asym.weight(&[0], &[1]) - 0.2).abs() < 1e-15);
        assert!((dc.asym.weight(&[1], &[0]) + 0.2).abs() < 1e-15);
        assert!((dc.weight(&[0], &[1]) - 0.7).abs() < 1e-15);
        assert!((dc.weight(&[1], &[0]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn decompose_one_sided_edge() {
        let mut c = Kernel::new_edges(2, 2.0, 1);
        c.insert_edge(&[0], &[1], 1.0);
        let dc = decompose(&c);
        assert_eq!(dc.sym.weight(&[1], &[0]), 0.5);
        assert_eq!(dc.asym.weight(&[1], &[0]), -0.5);
        assert_eq!(dc.weight(&[1], &[0]), 0.0);
        assert_eq!(dc.weight(&[0], &[1]), 1.0);
    }

    #[test]
    fn total_rate_examples() {
        let c = Kernel::nn(8, 2.0, 2, 0.5);
        assert_eq!(c.total_rate(&LatticePoint::new(vec![0, 0], 8)), 2.0);
        let empty = Kernel::new_edges(8, 2.0, 2);
        assert_eq!(empty.total_rate(&LatticePoint::new(vec![0, 0], 8)), 0.0);
        let mut lr = Kernel::new_displacement(8, 2.0, 1);
        lr.insert_displacement(&[1], 0.4);
        lr.insert_displacement(&[-1], 0.4);
        lr.insert_displacement(&[3], 0.1);
        lr.insert_displacement(&[-3], 0.1);
        assert!((lr.total_rate(&LatticePoint::new(vec![5], 8)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ctail_bounded_range_vanishes() {
        let c = Kernel::nn(4, 2.0, 1, 0.5);
        let dc = decompose(&c);
        let rep = check_ctail(&dc, &[0.5], &window(4, 1, 8)).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.constants["c"], 0.0);
    }

    #[test]
    fn ctail_power_kernel_fit() {
        // d=1, alpha=1, C_s(x,y) = |nx-ny|^{-2}: n * sum_{|h|>r n} |h|^{-2}
        let n = 16u32;
        let mut c = Kernel::new_displacement(n, 1.0, 1);
        for k in 1..=4096i64 {
            let w = (k as f64).powi(-2);
            c.insert_displacement(&[k], w);
            c.insert_displacement(&[-k], w);
        }
        let dc = decompose(&c);
        let rep = check_ctail(&dc, &[0.5], &window(n, 1, 16)).unwrap();
        // oracle: 16 * 2 * sum_{k>8} k^{-2} ~ 32/8.5 ~ 3.8; c = tail * r
        let oracle: f64 = 16.0 * 2.0 * (9..=4096).map(|k: i64| (k as f64).powi(-2)).sum::<f64>();
        let c_fit = rep.constants["c"];
        assert!((c_fit - oracle * 0.5).abs() < 1e-9, "fit {c_fit} oracle {oracle}");
        assert!((c_fit - 2.0).abs() < 0.25, "c should be near 2, got {c_fit}");
    }

    #[test]
    fn ctail_zero_conductance() {
        let c = Kernel::new_displacement(4, 1.0, 1);
        let dc = decompose(&c);
        let rep = check_ctail(&dc, &[0.5, 2.0], &window(4, 1, 16)).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.constants["c"], 0.0);
    }

    #[test]
    fn ctail_window_margin_error() {
        let mut c = Kernel::new_edges(4, 2.0, 1);
        c.insert_edge(&[0], &[1], 1.0);
        let dc = decompose(&c);
        assert!(matches!(
            check_ctail(&dc, &[3.0], &window(4, 1, 4)),
            Err(LabError::WindowMargin { .. })
        ));
    }

    #[test]
    fn k1_symmetric_is_zero() {
        let dc = decompose(&Kernel::nn(8, 2.0, 1, 0.5));
        for theta in [f64::INFINITY, 4.0] {
            let rep = check_k1(&dc, theta, &window(8, 1, 8));
            assert!(rep.passed);
            assert_eq!(rep.constants["A"], 0.0);
        }
    }

    #[test]
    fn k1_nn_drift_value() {
        // C_s = 1/2 NN, C_a(x, x+1/n) = 0.1: W = n^2 * 2 * (0.01/0.5)
        let n = 8u32;
        let mut sym = Kernel::nn(n, 2.0, 1, 0.5);
        sym.range_bound = Some(1.0);
        let mut asym = Kernel::new_displacement(n, 2.0, 1);
        asym.insert_displacement(&[1], 0.1);
        asym.insert_displacement(&[-1], -0.1);
        let dc = DecomposedConductance {
            sym,
            asym,
            aux_upper_j: None,
            aux_lower_j: None,
        };
        let rep = check_k1(&dc, f64::INFINITY, &window(n, 1, 8));
        assert!((rep.constants["A"] - 2.56).abs() < 1e-12);
    }

    #[test]
    fn k1_breach_witness() {
        let sym = Kernel::nn(4, 2.0, 1, 0.5);
        let mut asym = Kernel::new_displacement(4, 2.0, 1);
        asym.insert_displacement(&[2], 0.1);
        asym.insert_displacement(&[-2], -0.1);
        let dc = DecomposedConductance {
            sym,
            asym,
            aux_upper_j: None,
            aux_lower_j: None,
        };
        let rep = check_k1(&dc, f64::INFINITY, &window(4, 1, 8));
        assert!(!rep.passed);
        assert!(!rep.witnesses.is_empty());
    }

    #[test]
    fn k2_examples() {
        let dc = decompose(&Kernel::nn(4, 2.0, 1, 0.5));
        let rep = check_k2(&dc, &window(4, 1, 8)).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.constants["D"], 0.0);

        // |C_a| <= C_s/2 edgewise -> D <= 1/2
        let mut c = Kernel::new_displacement(4, 2.0, 1);
        c.insert_displacement(&[1], 0.75);
        c.insert_displacement(&[-1], 0.25);
        let dc = decompose(&c);
        let rep = check_k2(&dc, &window(4, 1, 8)).unwrap();
        assert!(rep.passed);
        assert!((rep.constants["D"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nnrw_examples() {
        let dc = decompose(&Kernel::nn(4, 2.0, 2, 0.5));
        let rep = check_nnrw(&dc, &window(4, 2, 4));
        assert!(rep.passed);
        assert_eq!(rep.constants["epsilon"], 0.5);

        // one NN edge zeroed -> failed with witness
        let mut c = Kernel::new_edges(4, 2.0, 1);
        for x in -4i64..4 {
            if x != 0 {
                c.insert_edge(&[x], &[x + 1], 0.5);
                c.insert_edge(&[x + 1], &[x], 0.5);
            }
        }
        let dc = decompose(&c);
        let rep = check_nnrw(&dc, &window(4, 1, 4));
        assert!(!rep.passed);
        assert!(!rep.witnesses.is_empty());
    }

    #[test]
    fn second_moment_nn() {
        // NN(1/2), d=1, alpha=2: n^2 * 2 * (1/n^2) * 1/2 = 1 for any r > 1/n
        for n in [4u32, 16] {
            let dc = decompose(&Kernel::nn(n, 2.0, 1, 0.5));
            let v = second_moment(&dc, 0.5, &window(n, 1, 8));
            assert!((v - 1.0).abs() < 1e-12, "n={n} v={v}");
        }
        let empty = decompose(&Kernel::new_displacement(4, 2.0, 1));
        assert_eq!(second_moment(&empty, 0.5, &window(4, 1, 8)), 0.0);
    }

    #[test]
    fn second_moment_power_kernel() {
        // d=1, alpha=1, C_s = |nx-ny|^{-2}, r=1:
        // n * sum_{0<|h|<=n-1... strictly |h/n| < 1} (h/n)^2 (h)^{-2} = n * (2(n-1)/n^2)
        let n = 64u32;
        let mut c = Kernel::new_displacement(n, 1.0, 1);
        for k in 1..=256i64 {
            let w = (k as f64).powi(-2);
            c.insert_displacement(&[k], w);
            c.insert_displacement(&[-k], w);
        }
        let dc = decompose(&c);
        let v = second_moment(&dc, 1.0, &window(n, 1, 8));
        let oracle = 2.0 * (n as f64 - 1.0) / n as f64;
        assert!((v - oracle).abs() < 1e-10, "v={v} oracle={oracle}");
        assert!(v <= 2.0);
    }

    #[test]
    fn poinc_disconnected_fails() {
        let sym = Kernel::new_displacement(4, 2.0, 1);
        let dc = DecomposedConductance {
            sym,
            asym: Kernel::new_displacement(4, 2.0, 1),
            aux_upper_j: None,
            aux_lower_j: None,
        };
        let rep = check_poinc_sampled(&dc, 1.0, 3, 7);
        assert!(!rep.passed);
    }

    #[test]
    fn serialization_roundtrip() {
        let mut c = Kernel::new_edges(4, 1.5, 2);
        c.insert_edge(&[0, 0], &[1, 2], 0.25);
        c.insert_edge(&[1, 2], &[0, 0], 0.5);
        let text = c.to_text();
        let back = Kernel::from_text(&text).unwrap();
        assert_eq!(back.weight(&[0, 0], &[1, 2]), 0.25);
        assert_eq!(back.weight(&[1, 2], &[0, 0]), 0.5);
        assert_eq!(back.scale, 4);
        assert_eq!(back.dim, 2);

        let d = Kernel::nn(8, 2.0, 1, 0.5);
        let back = Kernel::from_text(&d.to_text()).unwrap();
        assert!(back.is_translation_invariant());
        assert_eq!(back.weight(&[3], &[4]), 0.5);
    }
}
