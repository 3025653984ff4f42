//! Experiment harness across the scale grid: restriction/extension between
//! the continuum and the lattice, resolvent Cauchy tests, drift and stable
//! benchmarks with known limits, and the uniform-in-n regularity
//! diagnostics (Hölder modulus, weak Harnack ratio).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chain::{
    fdd_sample, ks_statistic_two_sample, mean_stderr, CompiledChain, McConfig,
};
use crate::conductance::{loglog_fit, DecomposedConductance};
use crate::error::LabError;
use crate::lattice::{round_to_lattice, Ball, LatticePoint, Norm, Window};
use crate::operator::{
    assemble, inner_mask_from_ball, killed_semigroup, resolvent, semigroup_apply, LatticeFunction,
    Mode,
};

/// `R⁽ⁿ⁾f(x) = f(x)` at lattice points.
pub fn restrict(f: &dyn Fn(&[f64]) -> f64, window: &Window) -> LatticeFunction {
    LatticeFunction::from_fn(window, |p| f(&p.embed()))
}

/// `E⁽ⁿ⁾g(x) = g([x]_n)`, cell-constant.
pub fn extend<'a>(g: &'a LatticeFunction) -> impl Fn(&[f64]) -> f64 + 'a {
    let n = g.window.scale;
    move |x: &[f64]| g.value(&round_to_lattice(x, n).coords)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub n_grid: Vec<u32>,
    /// sup-distance on the evaluation set between consecutive grid scales.
    pub distances: Vec<f64>,
    pub rate: f64,
    pub cauchy: bool,
    pub benchmark_distance: Option<f64>,
}

/// Builds a conductance and its window at scale `n` with the given
/// half-extent in lattice steps.
pub type Factory<'a> =
    &'a dyn Fn(u32, i64) -> Result<(DecomposedConductance, Window), LabError>;

/// `E⁽ⁿ⁾ U_λ⁽ⁿ⁾ R⁽ⁿ⁾ f` evaluated at the given continuum points.
pub fn resolvent_values(
    dc: &DecomposedConductance,
    window: &Window,
    f: &dyn Fn(&[f64]) -> f64,
    lambda: f64,
    pts: &[Vec<f64>],
) -> Result<Vec<f64>, LabError> {
    let gen = assemble(dc, window, Mode::Full)?;
    let rf = restrict(f, window);
    let u = resolvent(&gen, &rf, lambda, 1e-10)?;
    let ext = extend(&u);
    Ok(pts.iter().map(|p| ext(p)).collect())
}

/// Cauchy test of the extended resolvents along the scale grid. Every
/// window computation is repeated on the doubled window; a sup-difference
/// above 1% of the sup level rejects the window as too small.
pub fn resolvent_cauchy(
    n_grid: &[u32],
    extent_steps: &dyn Fn(u32) -> i64,
    factory: Factory,
    f: &dyn Fn(&[f64]) -> f64,
    lambda: f64,
    pts: &[Vec<f64>],
    benchmark: Option<&[f64]>,
) -> Result<ConvergenceReport, LabError> {
    assert!(n_grid.windows(2).all(|w| w[0] < w[1]), "grid must increase");
    let mut per_n = Vec::new();
    for &n in n_grid {
        let ext = extent_steps(n);
        let (dc, w) = factory(n, ext)?;
        let vals = resolvent_values(&dc, &w, f, lambda, pts)?;
        let (dc2, w2) = factory(n, 2 * ext)?;
        let vals2 = resolvent_values(&dc2, &w2, f, lambda, pts)?;
        let level = vals2.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let drift = vals
            .iter()
            .zip(&vals2)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if drift > 0.01 * level {
            return Err(LabError::BoundaryInfluence);
        }
        per_n.push(vals);
    }
    let mut distances = Vec::new();
    for pair in per_n.windows(2) {
        let d = pair[0]
            .iter()
            .zip(&pair[1])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        distances.push(d);
    }
    let samples: Vec<(f64, f64)> = n_grid
        .windows(2)
        .zip(&distances)
        .filter(|(_, &d)| d > 0.0)
        .map(|(w, &d)| (w[0] as f64, d))
        .collect();
    let rate = if samples.len() >= 2 {
        -loglog_fit(&samples).0
    } else {
        f64::INFINITY
    };
    let cauchy = distances.windows(2).all(|w| w[1] <= w[0]) && rate > 0.0;
    let benchmark_distance = benchmark.map(|oracle| {
        per_n
            .last()
            .unwrap()
            .iter()
            .zip(oracle)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    });
    Ok(ConvergenceReport {
        n_grid: n_grid.to_vec(),
        distances,
        rate,
        cauchy,
        benchmark_distance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftRow {
    pub n: u32,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// row-major d×d sample covariance of the displacement
    pub cov: Vec<f64>,
    pub cov_se: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub t: f64,
    pub per_n: Vec<DriftRow>,
    pub expected_mean: Vec<f64>,
    pub expected_cov_diag: f64,
    pub pass: bool,
    pub seed: u64,
}

/// Monte Carlo first and second moments of `X_t − x` against the limit
/// diffusion with generator `F:∇² − 2b·∇`: mean `−2bt`, covariance
/// `2t·diag(F)` (the coefficient floor inflates the diagonal).
pub fn drift_benchmark(
    entries: &[(u32, DecomposedConductance, Option<Window>)],
    b: &[f64],
    cov_diag_factor: f64,
    t: f64,
    cfg: &McConfig,
) -> DriftReport {
    let d = b.len();
    let expected_mean: Vec<f64> = b.iter().map(|&bi| -2.0 * bi * t).collect();
    let expected_cov_diag = 2.0 * t * cov_diag_factor;
    let mut per_n = Vec::new();
    for (n, dc, window) in entries {
        let chain = CompiledChain::compile(dc, window.as_ref());
        let start = LatticePoint::new(vec![0; d], *n);
        let samples = fdd_sample(&chain, &start, &[t], cfg);
        let disp: Vec<Vec<f64>> = samples.into_iter().map(|mut r| r.remove(0)).collect();
        let mut mean = vec![0.0; d];
        let mut mean_se = vec![0.0; d];
        for i in 0..d {
            let xs: Vec<f64> = disp.iter().map(|v| v[i]).collect();
            let (m, se) = mean_stderr(&xs);
            mean[i] = m;
            mean_se[i] = se;
        }
        let mut cov = vec![0.0; d * d];
        let mut cov_se = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let prods: Vec<f64> = disp
                    .iter()
                    .map(|v| (v[i] - mean[i]) * (v[j] - mean[j]))
                    .collect();
                let (m, se) = mean_stderr(&prods);
                cov[i * d + j] = m;
                cov_se[i * d + j] = se;
            }
        }
        per_n.push(DriftRow {
            n: *n,
            mean,
            mean_se,
            cov,
            cov_se,
        });
    }
    let pass = per_n.last().map_or(false, |row| {
        let mean_ok = (0..d)
            .all(|i| (row.mean[i] - expected_mean[i]).abs() <= 3.0 * row.mean_se[i]);
        let cov_ok = (0..d).all(|i| {
            (0..d).all(|j| {
                let target = if i == j { expected_cov_diag } else { 0.0 };
                (row.cov[i * d + j] - target).abs() <= 3.0 * row.cov_se[i * d + j]
            })
        });
        mean_ok && cov_ok
    });
    DriftReport {
        t,
        per_n,
        expected_mean,
        expected_cov_diag,
        pass,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StableReport {
    pub t_small: f64,
    pub threshold: f64,
    /// jump intensity beyond the threshold, from the displacement table
    pub tail_rate: f64,
    pub exceedance: f64,
    pub exceedance_se: f64,
    /// exceedance / (t · tail_rate), → 1 for small t
    pub tail_ratio: f64,
    /// two-sample KS distance between `|X_t|/t^{1/α}` at the two test times
    pub ks_collapse: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub pass_tail: bool,
    pub pass_collapse: bool,
    pub seed: u64,
}

/// Heavy-tail benchmark for a translation-invariant jump chain: first-jump
/// tail expansion and the `t^{1/α}` self-similar collapse.
pub fn stable_benchmark(
    dc: &DecomposedConductance,
    t_small: f64,
    threshold: f64,
    t_pair: (f64, f64),
    cfg: &McConfig,
) -> StableReport {
    let n = dc.scale();
    let alpha = dc.alpha();
    let d = dc.dim();
    let nf = n as f64;
    let origin = vec![0i64; d];
    let tail: f64 = dc
        .row(&origin)
        .iter()
        .filter(|(h, _)| {
            h.iter().map(|&c| (c as f64 / nf).powi(2)).sum::<f64>().sqrt() > threshold
        })
        .map(|(_, w)| w)
        .sum();
    let tail_rate = 2.0 * nf.powf(alpha) * tail;

    let chain = CompiledChain::compile(dc, None);
    let start = LatticePoint::new(origin.clone(), n);
    let samples = fdd_sample(&chain, &start, &[t_small], cfg);
    let hits: Vec<f64> = samples
        .iter()
        .map(|r| {
            let dist: f64 = r[0].iter().map(|v| v * v).sum::<f64>().sqrt();
            (dist > threshold) as u8 as f64
        })
        .collect();
    let (exceedance, exceedance_se) = mean_stderr(&hits);
    let tail_ratio = exceedance / (t_small * tail_rate);

    let (t1, t2) = t_pair;
    let collapse_cfg = McConfig {
        seed: cfg.seed ^ 0x5eed,
        ..cfg.clone()
    };
    let joint = fdd_sample(&chain, &start, &[t1, t2], &collapse_cfg);
    let scaled = |row: &Vec<f64>, t: f64| -> f64 {
        row.iter().map(|v| v * v).sum::<f64>().sqrt() / t.powf(1.0 / alpha)
    };
    let s1: Vec<f64> = joint.iter().map(|r| scaled(&r[0], t1)).collect();
    let s2: Vec<f64> = joint.iter().map(|r| scaled(&r[1], t2)).collect();
    let ks_collapse = ks_statistic_two_sample(&s1, &s2);

    let firsts: Vec<f64> = samples.iter().map(|r| r[0][0]).collect();
    let (mean, mean_se) = mean_stderr(&firsts);

    StableReport {
        t_small,
        threshold,
        tail_rate,
        exceedance,
        exceedance_se,
        tail_ratio,
        ks_collapse,
        mean,
        mean_se,
        pass_tail: (tail_ratio - 1.0).abs() <= 0.10,
        pass_collapse: ks_collapse < 0.05,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderRow {
    pub n: u32,
    /// (h, ω(h)) with ω the sup of |P_t f(x) − P_t f(y)| over axis pairs
    /// at distance h inside the evaluation box
    pub omegas: Vec<(f64, f64)>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub t: f64,
    pub per_n: Vec<HolderRow>,
    pub stable: bool,
    pub flat: bool,
}

/// Modulus-of-continuity fit for the semigroup at time `t`; the claim under
/// test is stability of the fitted exponent across n.
pub fn holder_modulus(
    entries: &[(u32, DecomposedConductance, Window)],
    f: &dyn Fn(&[f64]) -> f64,
    t: f64,
    h_grid: &[f64],
    k_extent: f64,
) -> Result<HolderReport, LabError> {
    let mut per_n = Vec::new();
    let mut flat = true;
    for (n, dc, window) in entries {
        let nf = *n as f64;
        let gen = assemble(dc, window, Mode::Full)?;
        let rf = restrict(f, window);
        let ptf = semigroup_apply(&gen, &rf, t, 1e-10)?;
        let d = window.dim();
        let mut omegas = Vec::new();
        for &h in h_grid {
            let steps = (h * nf).round() as i64;
            assert!(
                steps > 0 && ((steps as f64 / nf) - h).abs() < 1e-9,
                "h must be a lattice distance at every n"
            );
            let mut omega = 0.0f64;
            for p in window.points() {
                if p.embed().iter().any(|&v| v.abs() > k_extent) {
                    continue;
                }
                for axis in 0..d {
                    let q = p.step(axis, steps);
                    if !window.contains(&q) || q.embed()[axis].abs() > k_extent {
                        continue;
                    }
                    let diff = (ptf.value(&p.coords) - ptf.value(&q.coords)).abs();
                    omega = omega.max(diff);
                }
            }
            omegas.push((h, omega));
        }
        let fit: Vec<(f64, f64)> = omegas.iter().filter(|&&(_, o)| o > 0.0).copied().collect();
        let gamma = if fit.len() >= 2 {
            flat = false;
            loglog_fit(&fit).0
        } else {
            f64::NAN
        };
        per_n.push(HolderRow {
            n: *n,
            omegas,
            gamma,
        });
    }
    let gammas: Vec<f64> = per_n.iter().map(|r| r.gamma).filter(|g| g.is_finite()).collect();
    let stable = if gammas.len() == per_n.len() && !gammas.is_empty() {
        let lo = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = gammas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lo > 0.0 && (hi - lo) <= 0.3 * lo.abs().max(1e-12)
    } else {
        false
    };
    Ok(HolderReport {
        t,
        per_n,
        stable,
        flat,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackRow {
    pub n: u32,
    pub max_ratio: f64,
    pub excluded: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub radius: f64,
    pub per_n: Vec<HarnackRow>,
    /// fitted log-log slope of max_ratio against n
    pub growth_slope: f64,
    pub uniform: bool,
    pub seed: u64,
}

/// Weak-Harnack ratio experiment: nonnegative caloric functions on the
/// killed ball `B_2R`, early-window time-averaged mean over `B_{R/2}`
/// against the late-window infimum over `B_{R/2}`. Uniform boundedness of
/// the observed max ratio across n is the claim under test.
pub fn harnack_ratio(
    entries: &[(u32, DecomposedConductance, Window)],
    r: f64,
    trials: usize,
    seed: u64,
) -> Result<HarnackReport, LabError> {
    assert!(r <= 1.0 && r > 0.0);
    let mut per_n = Vec::new();
    for (n, dc, window) in entries {
        let alpha = dc.alpha();
        let d = window.dim();
        let center = LatticePoint::new(vec![0; d], *n);
        let big = Ball::new(center.clone(), 2.0 * r, Norm::Euclidean);
        let small = Ball::new(center.clone(), r / 2.0, Norm::Euclidean);
        let mask = inner_mask_from_ball(window, &big);
        let gen = assemble(dc, window, Mode::Killed(mask.clone()))?;
        let small_idx: Vec<usize> = window
            .points()
            .filter(|p| small.contains(p))
            .map(|p| window.index_of(&p).unwrap())
            .collect();
        assert!(!small_idx.is_empty(), "R/2 ball holds no lattice points");
        // full time interval has length 2R^alpha; sample both end windows
        let span = 2.0 * r.powf(alpha);
        let sub = (r / 2.0).powf(alpha);
        let grid = 4usize;
        let early: Vec<f64> = (0..grid)
            .map(|k| sub * (k as f64 + 0.5) / grid as f64)
            .collect();
        let late: Vec<f64> = (0..grid)
            .map(|k| span - sub + sub * (k as f64 + 0.5) / grid as f64)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (*n as u64));
        let mut max_ratio = 0.0f64;
        let mut excluded = 0usize;
        for trial in 0..trials {
            let u0 = if trial == 0 {
                LatticeFunction::constant(window, 1.0)
            } else {
                LatticeFunction::from_fn(window, |_| rng.gen::<f64>())
            };
            let mut lhs = 0.0;
            for &t in &early {
                let ut = killed_semigroup(&gen, &u0, t, 1e-10)?;
                let mean: f64 = small_idx.iter().map(|&i| ut.values[i]).sum::<f64>()
                    / small_idx.len() as f64;
                lhs += mean / early.len() as f64;
            }
            let mut inf = f64::INFINITY;
            for &t in &late {
                let ut = killed_semigroup(&gen, &u0, t, 1e-10)?;
                for &i in &small_idx {
                    inf = inf.min(ut.values[i]);
                }
            }
            if inf <= 0.0 {
                excluded += 1;
                continue;
            }
            max_ratio = max_ratio.max(lhs / inf);
        }
        per_n.push(HarnackRow {
            n: *n,
            max_ratio,
            excluded,
            trials,
        });
    }
    let samples: Vec<(f64, f64)> = per_n
        .iter()
        .filter(|r| r.max_ratio > 0.0)
        .map(|r| (r.n as f64, r.max_ratio))
        .collect();
    let growth_slope = if samples.len() >= 2 {
        loglog_fit(&samples).0
    } else {
        0.0
    };
    let uniform = per_n.iter().all(|r| r.max_ratio.is_finite() && r.max_ratio > 0.0)
        && growth_slope <= 0.15;
    Ok(HarnackReport {
        radius: r,
        per_n,
        growth_slope,
        uniform,
        seed,
    })
}
