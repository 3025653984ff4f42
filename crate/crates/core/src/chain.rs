//! Exact simulation of the variable speed random walk attached to a
//! conductance, plus the stochastic verifications: exit times against the
//! Green vector, survival/exceedance probabilities, the jump-compensator
//! identity, and finite-dimensional samples for distributional comparisons.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::conductance::DecomposedConductance;
use crate::lattice::{Ball, LatticePoint, Window};

/// One sampled path: strictly increasing jump times with landing states.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub start: LatticePoint,
    pub events: Vec<(f64, LatticePoint)>,
    pub horizon: f64,
}

impl Trajectory {
    /// State at time `t` (càdlàg).
    pub fn state_at(&self, t: f64) -> &LatticePoint {
        let mut current = &self.start;
        for (s, p) in &self.events {
            if *s > t {
                break;
            }
            current = p;
        }
        current
    }

    /// CSV rows `t c_1 .. c_d` (embedded coordinates), starting state first.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut push = |t: f64, p: &LatticePoint| {
            let _ = write!(out, "{t}");
            for v in p.embed() {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        };
        push(0.0, &self.start);
        for (t, p) in &self.events {
            push(*t, p);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    pub seed: u64,
    pub paths: usize,
    pub horizon: f64,
}

impl McConfig {
    pub fn new(seed: u64, paths: usize, horizon: f64) -> Self {
        assert!(paths >= 1);
        assert!(horizon > 0.0);
        Self {
            seed,
            paths,
            horizon,
        }
    }
}

/// Walker alias table for O(1) categorical sampling.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Self {
        let k = weights.len();
        assert!(k > 0);
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0 && weights.iter().all(|&w| w >= 0.0));
        let mut prob: Vec<f64> = weights.iter().map(|&w| w * k as f64 / total).collect();
        let mut alias = vec![0usize; k];
        let mut small: Vec<usize> = (0..k).filter(|&i| prob[i] < 1.0).collect();
        let mut large: Vec<usize> = (0..k).filter(|&i| prob[i] >= 1.0).collect();
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l;
            prob[l] -= 1.0 - prob[s];
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for &i in small.iter().chain(large.iter()) {
            prob[i] = 1.0;
        }
        Self { prob, alias }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let k = self.prob.len();
        let i = rng.gen_range(0..k);
        if rng.gen::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

enum ChainKind {
    /// Translation invariant: one shared displacement table, constant rate.
    Free {
        rate: f64,
        disps: Vec<Vec<i64>>,
        table: AliasTable,
    },
    /// Edge-stored kernel on a window; rows deduplicated by their relative
    /// displacement pattern so homogeneous interiors share one table.
    Windowed {
        window: Window,
        rates: Vec<f64>,
        row_of: Vec<Option<usize>>,
        tables: Vec<(Vec<Vec<i64>>, AliasTable)>,
    },
}

/// Indexed, alias-sampled form of a decomposed conductance. Holding rate at
/// `x` is `2 n^α C(x)`, jump law `C(x,·)/C(x)`.
pub struct CompiledChain {
    pub scale: u32,
    pub alpha: f64,
    pub dim: usize,
    kind: ChainKind,
}

impl CompiledChain {
    /// `window = None` requires a translation-invariant kernel.
    pub fn compile(dc: &DecomposedConductance, window: Option<&Window>) -> Self {
        let scale = dc.scale();
        let alpha = dc.alpha();
        let dim = dc.dim();
        let rate_factor = 2.0 * (scale as f64).powf(alpha);
        let kind = match window {
            None => {
                assert!(
                    dc.sym.is_translation_invariant() && dc.asym.is_translation_invariant(),
                    "free chains need displacement-stored kernels"
                );
                let origin = vec![0i64; dim];
                let row = dc.row(&origin);
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                assert!(total > 0.0, "empty kernel");
                let disps: Vec<Vec<i64>> = row.iter().map(|(y, _)| y.clone()).collect();
                let weights: Vec<f64> = row.iter().map(|(_, w)| *w).collect();
                ChainKind::Free {
                    rate: rate_factor * total,
                    disps,
                    table: AliasTable::new(&weights),
                }
            }
            Some(w) => {
                let count = w.point_count();
                let mut rates = vec![0.0; count];
                let mut row_of = vec![None; count];
                let mut dedupe: HashMap<Vec<(Vec<i64>, u64)>, usize> = HashMap::new();
                let mut tables = Vec::new();
                for p in w.points() {
                    let idx = w.index_of(&p).unwrap();
                    let row = dc.row(&p.coords);
                    let total: f64 = row.iter().map(|(_, wv)| wv).sum();
                    rates[idx] = rate_factor * total;
                    if total <= 0.0 {
                        continue;
                    }
                    let rel: Vec<(Vec<i64>, f64)> = row
                        .iter()
                        .map(|(y, wv)| {
                            (
                                y.iter().zip(&p.coords).map(|(&a, &b)| a - b).collect(),
                                *wv,
                            )
                        })
                        .collect();
                    let key: Vec<(Vec<i64>, u64)> =
                        rel.iter().map(|(h, wv)| (h.clone(), wv.to_bits())).collect();
                    let tid = *dedupe.entry(key).or_insert_with(|| {
                        let disps: Vec<Vec<i64>> = rel.iter().map(|(h, _)| h.clone()).collect();
                        let weights: Vec<f64> = rel.iter().map(|(_, wv)| *wv).collect();
                        tables.push((disps, AliasTable::new(&weights)));
                        tables.len() - 1
                    });
                    row_of[idx] = Some(tid);
                }
                ChainKind::Windowed {
                    window: w.clone(),
                    rates,
                    row_of,
                    tables,
                }
            }
        };
        Self {
            scale,
            alpha,
            dim,
            kind,
        }
    }

    /// Total holding rate `2 n^α C(x)`; 0 on absorbing states.
    pub fn rate_at(&self, p: &LatticePoint) -> f64 {
        match &self.kind {
            ChainKind::Free { rate, .. } => *rate,
            ChainKind::Windowed { window, rates, .. } => window
                .resolve(p)
                .and_then(|q| window.index_of(&q))
                .map(|i| rates[i])
                .unwrap_or(0.0),
        }
    }

    /// One jump from `p`, or `None` when `p` is absorbing.
    fn jump<R: Rng>(&self, p: &LatticePoint, rng: &mut R) -> Option<LatticePoint> {
        match &self.kind {
            ChainKind::Free { disps, table, .. } => {
                Some(p.shifted(&disps[table.sample(rng)]))
            }
            ChainKind::Windowed {
                window,
                row_of,
                tables,
                ..
            } => {
                let q = window.resolve(p)?;
                let idx = window.index_of(&q)?;
                let tid = row_of[idx]?;
                let (disps, table) = &tables[tid];
                Some(q.shifted(&disps[table.sample(rng)]))
            }
        }
    }

    pub fn rng_for(&self, cfg: &McConfig, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path);
        rng
    }
}

/// Samples one full path up to the horizon; bitwise reproducible for a
/// given `(seed, path)`.
pub fn simulate(
    chain: &CompiledChain,
    start: &LatticePoint,
    cfg: &McConfig,
    path: u64,
) -> Trajectory {
    let mut rng = chain.rng_for(cfg, path);
    let mut t = 0.0;
    let mut state = start.clone();
    let mut events = Vec::new();
    loop {
        let rate = chain.rate_at(&state);
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = Exp1.sample(&mut rng);
        t += hold / rate;
        if t > cfg.horizon {
            break;
        }
        match chain.jump(&state, &mut rng) {
            Some(next) => {
                state = next;
                events.push((t, state.clone()));
            }
            None => break,
        }
    }
    Trajectory {
        start: start.clone(),
        events,
        horizon: cfg.horizon,
    }
}

/// Pairwise (cascade) summation: order-independent up to association depth,
/// stable for the long Monte Carlo reductions.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        len => {
            let mid = len / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Sample mean with its standard error.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let count = v.len() as f64;
    let mean = pairwise_sum(v) / count;
    if v.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let sq: Vec<f64> = v.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (count - 1.0);
    (mean, (var / count).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitTimeReport {
    pub mean: f64,
    pub stderr: f64,
    pub truncated_fraction: f64,
    /// Set when more than 1% of paths ran into the horizon: the mean is
    /// biased low and the interval should be read as a lower bound.
    pub widened_ci_warning: bool,
    pub paths: usize,
    pub seed: u64,
}

/// Monte Carlo mean of the first time the walk lands outside the ball.
pub fn exit_time_mc(
    chain: &CompiledChain,
    ball: &Ball,
    start: &LatticePoint,
    cfg: &McConfig,
) -> ExitTimeReport {
    assert!(ball.contains(start), "start outside the ball");
    let results: Vec<(f64, bool)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = chain.rng_for(cfg, path);
            let mut t = 0.0;
            let mut state = start.clone();
            loop {
                let rate = chain.rate_at(&state);
                if rate <= 0.0 {
                    return (cfg.horizon, true);
                }
                let hold: f64 = Exp1.sample(&mut rng);
                t += hold / rate;
                if t > cfg.horizon {
                    return (cfg.horizon, true);
                }
                match chain.jump(&state, &mut rng) {
                    Some(next) => {
                        if !ball.contains(&next) {
                            return (t, false);
                        }
                        state = next;
                    }
                    None => return (cfg.horizon, true),
                }
            }
        })
        .collect();
    let times: Vec<f64> = results.iter().map(|&(t, _)| t).collect();
    let truncated = results.iter().filter(|&&(_, tr)| tr).count();
    let (mean, stderr) = mean_stderr(&times);
    let truncated_fraction = truncated as f64 / cfg.paths as f64;
    ExitTimeReport {
        mean,
        stderr,
        truncated_fraction,
        widened_ci_warning: truncated_fraction > 0.01,
        paths: cfg.paths,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SurvivalReport {
    /// (t0, horizon (t0·R)^α, exceedance probability, standard error)
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub radius: f64,
    pub threshold: f64,
    pub seed: u64,
}

/// Empirical `P(sup_{t ≤ (t0 R)^α} |X_t − x| > A·R)` over a grid of `t0`,
/// one simulation per path reused across the nested horizons.
pub fn survival_mc(
    chain: &CompiledChain,
    start: &LatticePoint,
    r: f64,
    a: f64,
    t0_grid: &[f64],
    cfg: &McConfig,
) -> SurvivalReport {
    assert!(r > 0.0 && a > 0.0);
    let horizons: Vec<f64> = t0_grid.iter().map(|&t0| (t0 * r).powf(chain.alpha)).collect();
    let max_h = horizons.iter().cloned().fold(0.0f64, f64::max);
    let threshold = a * r;
    let exceed: Vec<Vec<bool>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = chain.rng_for(cfg, path);
            let mut t = 0.0;
            let mut state = start.clone();
            // first time the running sup of |X_t - x| passes the threshold
            let mut cross_time = f64::INFINITY;
            loop {
                let rate = chain.rate_at(&state);
                if rate <= 0.0 {
                    break;
                }
                let hold: f64 = Exp1.sample(&mut rng);
                t += hold / rate;
                if t > max_h {
                    break;
                }
                match chain.jump(&state, &mut rng) {
                    Some(next) => {
                        state = next;
                        if start.dist(&state) > threshold {
                            cross_time = t;
                            break;
                        }
                    }
                    None => break,
                }
            }
            horizons.iter().map(|&h| cross_time <= h).collect()
        })
        .collect();
    let mut rows = Vec::new();
    for (k, (&t0, &h)) in t0_grid.iter().zip(&horizons).enumerate() {
        let hits: Vec<f64> = exceed.iter().map(|e| e[k] as u8 as f64).collect();
        let (p, se) = mean_stderr(&hits);
        rows.push((t0, h, p, se));
    }
    SurvivalReport {
        rows,
        radius: r,
        threshold,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevySystemReport {
    pub empirical_mean: f64,
    pub empirical_stderr: f64,
    pub compensator_mean: f64,
    pub compensator_stderr: f64,
    pub within_3ci: bool,
    pub seed: u64,
}

/// Compares the path sum `Σ_{t ≤ T} f(X_{t−}, X_t)` with its compensator
/// `∫_0^T 2n^α Σ_y f(X_t, y) C(X_t, y) dt` along the same paths.
pub fn levy_system_check<F>(
    chain: &CompiledChain,
    dc: &DecomposedConductance,
    f: F,
    start: &LatticePoint,
    cfg: &McConfig,
) -> LevySystemReport
where
    F: Fn(&LatticePoint, &LatticePoint) -> f64 + Sync,
{
    let rate_factor = 2.0 * (chain.scale as f64).powf(chain.alpha);
    // per-state compensator integrand, cached by coordinates
    let integrand = |x: &LatticePoint| -> f64 {
        rate_factor
            * dc.row(&x.coords)
                .iter()
                .map(|(y, w)| f(x, &LatticePoint::new(y.clone(), chain.scale)) * w)
                .sum::<f64>()
    };
    let pairs: Vec<(f64, f64)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|path| {
            let traj = simulate(chain, start, cfg, path);
            let mut empirical = 0.0;
            let mut compensator = 0.0;
            let mut prev_t = 0.0;
            let mut prev_state = traj.start.clone();
            for (t, state) in &traj.events {
                empirical += f(&prev_state, state);
                compensator += (t - prev_t) * integrand(&prev_state);
                prev_t = *t;
                prev_state = state.clone();
            }
            compensator += (cfg.horizon - prev_t) * integrand(&prev_state);
            (empirical, compensator)
        })
        .collect();
    let emp: Vec<f64> = pairs.iter().map(|&(e, _)| e).collect();
    let comp: Vec<f64> = pairs.iter().map(|&(_, c)| c).collect();
    let (em, es) = mean_stderr(&emp);
    let (cm, cs) = mean_stderr(&comp);
    let gap = (em - cm).abs();
    let scale = (es * es + cs * cs).sqrt();
    LevySystemReport {
        empirical_mean: em,
        empirical_stderr: es,
        compensator_mean: cm,
        compensator_stderr: cs,
        within_3ci: gap <= 3.0 * scale.max(1e-12),
        seed: cfg.seed,
    }
}

/// Path states at the given times: `paths × times` matrix of embedded
/// coordinates.
pub fn fdd_sample(
    chain: &CompiledChain,
    start: &LatticePoint,
    times: &[f64],
    cfg: &McConfig,
) -> Vec<Vec<Vec<f64>>> {
    assert!(times.windows(2).all(|w| w[0] <= w[1]), "times must increase");
    let horizon = times.last().copied().unwrap_or(0.0).max(1e-12);
    let cfg = McConfig {
        horizon,
        ..cfg.clone()
    };
    (0..cfg.paths as u64)
        .into_par_iter()
        .map(|path| {
            let traj = simulate(chain, start, &cfg, path);
            times
                .iter()
                .map(|&t| traj.state_at(t).embed())
                .collect()
        })
        .collect()
}

/// One-sided Kolmogorov-Smirnov test of `samples` against Exp(rate);
/// returns the asymptotic p-value.
pub fn ks_test_exp(samples: &[f64], rate: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let count = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-rate * x).exp();
        let lo = i as f64 / count;
        let hi = (i + 1) as f64 / count;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    ks_pvalue(d, sorted.len())
}

/// Two-sample Kolmogorov-Smirnov p-value.
pub fn ks_test_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len(), sb.len());
    let mut d = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < na && j < nb {
        let (fa, fb) = (i as f64 / na as f64, j as f64 / nb as f64);
        d = d.max((fa - fb).abs());
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    kolmogorov_q(lambda)
}

pub fn ks_statistic_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len(), sb.len());
    let mut d = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < na && j < nb {
        let (fa, fb) = (i as f64 / na as f64, j as f64 / nb as f64);
        d = d.max((fa - fb).abs());
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    d
}

fn ks_pvalue(d: f64, count: usize) -> f64 {
    let sqrt_n = (count as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    kolmogorov_q(lambda)
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Chi-square goodness-of-fit p-value: observed counts against expected
/// (same totals), dof = cells − 1.
pub fn chi_square_test(observed: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e <= 0.0 {
            continue;
        }
        stat += (o - e) * (o - e) / e;
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    gamma_q((cells - 1) as f64 / 2.0, stat / 2.0)
}

/// Regularized upper incomplete gamma Q(a, x) by series / continued
/// fraction split at x = a + 1.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x < 0.0 || a <= 0.0 {
        return 1.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        // P by series, Q = 1 - P
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..500 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-14 {
                break;
            }
        }
        1.0 - sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // Lentz continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1e300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = b + an / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-14 {
                break;
            }
        }
        (-x + a * x.ln() - ln_gamma(a)).exp() * h
    }
}

/// Lanczos log-gamma.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for g in G {
        y += 1.0;
        ser += g / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Standard normal draw helper kept for the smoothing-based tests.
pub fn normal_draw<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductance::{decompose, Kernel};
    use crate::lattice::{Norm, Topology};
    use crate::operator::{assemble, green_vector, inner_mask_from_ball, Mode};

    fn nn_chain(n: u32, d: usize, extent: i64) -> (CompiledChain, DecomposedConductance, Window) {
        let w = Window::centered(n, d, extent, Topology::Absorbing);
        let mut c = Kernel::new_edges(n, 2.0, d);
        for x in w.points() {
            for i in 0..d {
                let y = x.step(i, 1);
                if w.contains(&y) {
                    c.insert_edge(&x.coords, &y.coords, 0.5);
                    c.insert_edge(&y.coords, &x.coords, 0.5);
                }
            }
        }
        c.range_bound = Some(1.0);
        let dc = decompose(&c);
        let chain = CompiledChain::compile(&dc, Some(&w));
        (chain, dc, w)
    }

    fn free_nn_chain(n: u32, d: usize) -> (CompiledChain, DecomposedConductance) {
        let c = Kernel::nn(n, 2.0, d, 0.5);
        let dc = decompose(&c);
        let chain = CompiledChain::compile(&dc, None);
        (chain, dc)
    }

    #[test]
    fn alias_table_frequencies() {
        let table = AliasTable::new(&[1.0, 2.0, 7.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let total = 100_000;
        for _ in 0..total {
            counts[table.sample(&mut rng)] += 1;
        }
        let expect = [0.1, 0.2, 0.7];
        for i in 0..3 {
            let p = counts[i] as f64 / total as f64;
            assert!((p - expect[i]).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn zero_conductance_no_events() {
        let n = 4;
        let w = Window::centered(n, 1, 4, Topology::Absorbing);
        let c = Kernel::new_edges(n, 2.0, 1);
        let dc = decompose(&c);
        let chain = CompiledChain::compile(&dc, Some(&w));
        let cfg = McConfig::new(1, 1, 10.0);
        let traj = simulate(&chain, &LatticePoint::new(vec![0], n), &cfg, 0);
        assert!(traj.events.is_empty());
    }

    #[test]
    fn seeds_reproduce_paths() {
        let (chain, _) = free_nn_chain(4, 2);
        let cfg = McConfig::new(99, 1, 2.0);
        let start = LatticePoint::new(vec![0, 0], 4);
        let a = simulate(&chain, &start, &cfg, 7);
        let b = simulate(&chain, &start, &cfg, 7);
        assert_eq!(a.events.len(), b.events.len());
        for ((ta, pa), (tb, pb)) in a.events.iter().zip(&b.events) {
            assert_eq!(ta, tb);
            assert_eq!(pa.coords, pb.coords);
        }
        let c = simulate(&chain, &start, &cfg, 8);
        assert!(a.events.len() != c.events.len() || a.events != {
            c.events.clone()
        });
    }

    #[test]
    fn poisson_jump_count() {
        // d=1 NN(1/2), n=1, alpha=2: total rate 2, mean jumps in [0,T] = 2T
        let (chain, _) = free_nn_chain(1, 1);
        assert!((chain.rate_at(&LatticePoint::new(vec![0], 1)) - 2.0).abs() < 1e-12);
        let t = 3.0;
        let cfg = McConfig::new(12, 100_000, t);
        let counts: Vec<f64> = (0..cfg.paths as u64)
            .into_par_iter()
            .map(|p| simulate(&chain, &LatticePoint::new(vec![0], 1), &cfg, p).events.len() as f64)
            .collect();
        let (mean, se) = mean_stderr(&counts);
        assert!((mean - 2.0 * t).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn holding_times_exponential() {
        let (chain, _) = free_nn_chain(4, 1);
        let rate = chain.rate_at(&LatticePoint::new(vec![0], 4));
        let cfg = McConfig::new(5, 1, 1.0);
        let mut rng = chain.rng_for(&cfg, 0);
        let samples: Vec<f64> = (0..10_000).map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            e / rate
        }).collect();
        assert!(ks_test_exp(&samples, rate) > 0.01);
        // wrong rate rejected
        assert!(ks_test_exp(&samples, rate * 1.2) < 0.01);
    }

    #[test]
    fn jump_frequencies_chi_square() {
        // biased 1D kernel: p(right) = 3/4
        let n = 2u32;
        let mut c = Kernel::new_displacement(n, 2.0, 1);
        c.insert_displacement(&[1], 0.75);
        c.insert_displacement(&[-1], 0.25);
        let dc = decompose(&c);
        let chain = CompiledChain::compile(&dc, None);
        let cfg = McConfig::new(21, 1, 1.0);
        let mut rng = chain.rng_for(&cfg, 0);
        let start = LatticePoint::new(vec![0], n);
        let total = 20_000;
        let mut right = 0.0;
        for _ in 0..total {
            let next = chain.jump(&start, &mut rng).unwrap();
            if next.coords[0] == 1 {
                right += 1.0;
            }
        }
        let p = chi_square_test(&[right, total as f64 - right], &[15_000.0, 5_000.0]);
        assert!(p > 0.01, "p = {p}, right = {right}");
    }

    #[test]
    fn exit_time_matches_green_vector() {
        let n = 32u32;
        let (chain, dc, w) = nn_chain(n, 1, 40);
        let ball = Ball::new(LatticePoint::new(vec![0], n), 0.5, Norm::Euclidean);
        let cfg = McConfig::new(7, 100_000, 50.0);
        let start = LatticePoint::new(vec![0], n);
        let rep = exit_time_mc(&chain, &ball, &start, &cfg);
        assert!(!rep.widened_ci_warning, "truncated {}", rep.truncated_fraction);
        // continuum limit R^2/2 = 0.125 within 5%
        assert!((rep.mean - 0.125).abs() < 0.05 * 0.125, "mean {}", rep.mean);
        // oracle: Green vector on the same ball
        let mask = inner_mask_from_ball(&w, &ball);
        let gen = assemble(&dc, &w, Mode::Killed(mask.clone())).unwrap();
        let g = green_vector(&gen).unwrap();
        let idx = w.index_of(&start).unwrap();
        assert!((rep.mean - g.values[idx]).abs() < 3.0 * rep.stderr);
    }

    #[test]
    fn exit_time_scaling_and_monotonicity() {
        let n = 32u32;
        let (_, dc, w) = nn_chain(n, 1, 40);
        let mut means = Vec::new();
        for r in [0.5, 0.25] {
            let ball = Ball::new(LatticePoint::new(vec![0], n), r, Norm::Euclidean);
            let mask = inner_mask_from_ball(&w, &ball);
            let gen = assemble(&dc, &w, Mode::Killed(mask)).unwrap();
            let g = green_vector(&gen).unwrap();
            means.push(g.values[w.index_of(&LatticePoint::new(vec![0], n)).unwrap()]);
            // center dominates off-center starts
            let off = w.index_of(&LatticePoint::new(vec![(r * n as f64) as i64 - 1], n)).unwrap();
            assert!(g.values[off] <= g.values[w.index_of(&LatticePoint::new(vec![0], n)).unwrap()]);
        }
        let ratio = means[0] / means[1];
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn survival_monotone_and_vanishing() {
        let n = 16u32;
        let (chain, _, _) = nn_chain(n, 1, 20);
        let start = LatticePoint::new(vec![0], n);
        let cfg = McConfig::new(3, 4_000, 10.0);
        let rep = survival_mc(&chain, &start, 0.5, 1.0, &[0.05, 0.5, 1.0, 2.0], &cfg);
        // tiny t0: no time to move
        assert!(rep.rows[0].2 < 0.01, "{:?}", rep.rows[0]);
        // exceedance nondecreasing in t0 (nested events)
        for win in rep.rows.windows(2) {
            assert!(win[0].2 <= win[1].2 + 1e-12);
        }
        // larger A, smaller exceedance at fixed t0
        let tight = survival_mc(&chain, &start, 0.5, 2.0, &[1.0], &cfg);
        let loose = survival_mc(&chain, &start, 0.5, 1.0, &[1.0], &cfg);
        assert!(tight.rows[0].2 <= loose.rows[0].2 + 1e-12);
    }

    #[test]
    fn survival_matches_killed_semigroup() {
        use crate::operator::{killed_semigroup, LatticeFunction};
        let n = 16u32;
        let (chain, dc, w) = nn_chain(n, 1, 20);
        let start = LatticePoint::new(vec![0], n);
        let r = 0.5;
        let a = 1.0;
        let cfg = McConfig::new(11, 20_000, 10.0);
        let rep = survival_mc(&chain, &start, r, a, &[1.0], &cfg);
        let (_, horizon, p_mc, se) = rep.rows[0];
        // survival means sup |X - x| <= A*R: the matching killed region is
        // the closed lattice ball, hence the half-step enlargement
        let ball = Ball::new(start.clone(), a * r + 0.5 / n as f64, Norm::Euclidean);
        let mask = inner_mask_from_ball(&w, &ball);
        let gen = assemble(&dc, &w, Mode::Killed(mask)).unwrap();
        let one = LatticeFunction::constant(&w, 1.0);
        let alive = killed_semigroup(&gen, &one, horizon, 1e-10).unwrap();
        let p_exact = 1.0 - alive.values[w.index_of(&start).unwrap()];
        assert!(
            (p_mc - p_exact).abs() < 3.0 * se.max(1e-4),
            "mc {p_mc} exact {p_exact} se {se}"
        );
    }

    #[test]
    fn levy_system_zero_and_counting() {
        let (chain, dc) = free_nn_chain(2, 1);
        let start = LatticePoint::new(vec![0], 2);
        let cfg = McConfig::new(17, 5_000, 1.0);
        let zero = levy_system_check(&chain, &dc, |_, _| 0.0, &start, &cfg);
        assert_eq!(zero.empirical_mean, 0.0);
        assert_eq!(zero.compensator_mean, 0.0);
        assert!(zero.within_3ci);
        // f = 1{jump}: both sides rate*T = 2 n^alpha * C * T = 8
        let count = levy_system_check(&chain, &dc, |_, _| 1.0, &start, &cfg);
        let rate = chain.rate_at(&start);
        assert!((count.compensator_mean - rate * cfg.horizon).abs() < 1e-9);
        assert!(count.within_3ci, "{count:?}");
    }

    #[test]
    fn levy_system_tail_statistic() {
        // alpha-stable-like displacement table, f = 1{|jump| > s}
        let n = 8u32;
        let mut c = Kernel::new_displacement(n, 1.0, 1);
        for h in 1i64..=32 {
            let w = (h as f64).powf(-2.0);
            c.insert_displacement(&[h], w);
            c.insert_displacement(&[-h], w);
        }
        let dc = decompose(&c);
        let chain = CompiledChain::compile(&dc, None);
        let start = LatticePoint::new(vec![0], n);
        let cfg = McConfig::new(23, 20_000, 0.5);
        let s = 1.0; // embedded units: |h| > 8 steps
        let rep = levy_system_check(
            &chain,
            &dc,
            |x: &LatticePoint, y: &LatticePoint| if x.dist(y) > s { 1.0 } else { 0.0 },
            &start,
            &cfg,
        );
        assert!(rep.within_3ci, "{rep:?}");
        // analytic tail of the table
        let tail: f64 = (9i64..=32)
            .map(|h| 2.0 * (h as f64).powf(-2.0))
            .sum();
        let expect = 2.0 * (n as f64).powf(1.0) * tail * cfg.horizon;
        assert!(
            (rep.compensator_mean - expect).abs() < 1e-9,
            "comp {} expect {expect}",
            rep.compensator_mean
        );
    }

    #[test]
    fn fdd_at_time_zero_and_variance() {
        let n = 64u32;
        let (chain, _) = free_nn_chain(n, 1);
        let start = LatticePoint::new(vec![0], n);
        let cfg = McConfig::new(31, 20_000, 1.0);
        let t = 0.5;
        let samples = fdd_sample(&chain, &start, &[0.0, t], &cfg);
        let mut displaced = Vec::new();
        for row in &samples {
            assert_eq!(row[0][0], 0.0);
            displaced.push(row[1][0]);
        }
        let (mean, se) = mean_stderr(&displaced);
        assert!(mean.abs() < 3.0 * se);
        let sq: Vec<f64> = displaced.iter().map(|&x| x * x).collect();
        let (var, vse) = mean_stderr(&sq);
        assert!((var - 2.0 * t).abs() < 3.0 * vse, "var {var} vse {vse}");
    }

    #[test]
    fn fdd_drift_chain_mean() {
        // C_a = beta*NN on every edge: drift -2*b with b = 1
        let n = 64u32;
        let b = 1.0;
        let nf = n as f64;
        let mut sym = Kernel::new_displacement(n, 2.0, 1);
        sym.insert_displacement(&[1], 0.5);
        sym.insert_displacement(&[-1], 0.5);
        let mut asym = Kernel::new_displacement(n, 2.0, 1);
        asym.insert_displacement(&[1], -b / (2.0 * nf));
        asym.insert_displacement(&[-1], b / (2.0 * nf));
        let dc = DecomposedConductance {
            sym,
            asym,
            aux_upper_j: None,
            aux_lower_j: None,
        };
        let chain = CompiledChain::compile(&dc, None);
        let start = LatticePoint::new(vec![0], n);
        let cfg = McConfig::new(41, 40_000, 1.0);
        let t = 0.5;
        let samples = fdd_sample(&chain, &start, &[t], &cfg);
        let xs: Vec<f64> = samples.iter().map(|r| r[0][0]).collect();
        let (mean, se) = mean_stderr(&xs);
        assert!(
            (mean - (-2.0 * b * t)).abs() < 3.0 * se,
            "mean {mean} se {se}"
        );
    }

    #[test]
    fn stats_helpers_sane() {
        assert!((pairwise_sum(&[1.0; 1000]) - 1000.0).abs() < 1e-9);
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        // gamma_q(1/2, x) = erfc(sqrt(x)); at x = 1.92075/2... spot values
        assert!((gamma_q(0.5, 0.5) - 0.317_310_5).abs() < 1e-5);
        assert!((gamma_q(1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-10);
        // chi-square with perfect fit: p = 1
        assert!((chi_square_test(&[10.0, 10.0], &[10.0, 10.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_shape() {
        let (chain, _) = free_nn_chain(4, 2);
        let cfg = McConfig::new(2, 1, 1.0);
        let traj = simulate(&chain, &LatticePoint::new(vec![0, 0], 4), &cfg, 0);
        let csv = traj.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), traj.events.len() + 1);
        assert!(lines[0].starts_with("0 "));
        for line in &lines {
            assert_eq!(line.split_whitespace().count(), 3);
        }
    }
}
