//! Geometry and indexing of the scaled lattice `n⁻¹ℤᵈ`.
//!
//! Points are stored as integer coordinate tuples plus a scale, never as
//! floats, so equality and hashing are exact. The embedded position of a
//! point is `coords / n`.

use std::fmt;

use crate::error::LabError;

/// A point of the scaled lattice: position `coords / scale`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticePoint {
    pub coords: Vec<i64>,
    pub scale: u32,
}

impl LatticePoint {
    pub fn new(coords: Vec<i64>, scale: u32) -> Self {
        assert!(scale >= 1, "scale must be >= 1");
        Self { coords, scale }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Embedded position in ℝᵈ. Exact in binary when `scale` is a power
    /// of two; rounded to nearest f64 otherwise.
    pub fn embed(&self) -> Vec<f64> {
        let n = self.scale as f64;
        self.coords.iter().map(|&c| c as f64 / n).collect()
    }

    /// Euclidean distance between two points of the same scale.
    pub fn dist(&self, other: &LatticePoint) -> f64 {
        debug_assert_eq!(self.scale, other.scale);
        let n = self.scale as f64;
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| {
                let d = (a - b) as f64 / n;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Sup-norm distance between two points of the same scale.
    pub fn dist_sup(&self, other: &LatticePoint) -> f64 {
        debug_assert_eq!(self.scale, other.scale);
        let n = self.scale as f64;
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| ((a - b).abs() as f64) / n)
            .fold(0.0, f64::max)
    }

    /// The point shifted by an integer displacement (in lattice steps).
    pub fn shifted(&self, h: &[i64]) -> LatticePoint {
        LatticePoint {
            coords: self.coords.iter().zip(h).map(|(&c, &s)| c + s).collect(),
            scale: self.scale,
        }
    }

    /// Neighbor one step along `axis` in direction `sign`.
    pub fn step(&self, axis: usize, sign: i64) -> LatticePoint {
        let mut coords = self.coords.clone();
        coords[axis] += sign;
        LatticePoint {
            coords,
            scale: self.scale,
        }
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.embed().iter().map(|v| format!("{v}")).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Boundary handling for finite windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Mass leaving the window is absorbed (killed-process computations).
    Absorbing,
    /// Periodic wrap; generator row sums are exactly zero.
    Torus,
}

/// Axis-aligned box of lattice points, inclusive on both ends.
#[derive(Debug, Clone)]
pub struct Window {
    pub scale: u32,
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    pub topology: Topology,
}

impl Window {
    pub fn new(scale: u32, lo: Vec<i64>, hi: Vec<i64>, topology: Topology) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(
            lo.iter().zip(&hi).all(|(l, h)| l <= h),
            "window bounds must satisfy lo <= hi"
        );
        Self {
            scale,
            lo,
            hi,
            topology,
        }
    }

    /// Symmetric window `[-extent, extent]^d` in lattice units.
    pub fn centered(scale: u32, dim: usize, extent: i64, topology: Topology) -> Self {
        Self::new(scale, vec![-extent; dim], vec![extent; dim], topology)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, axis: usize) -> i64 {
        self.hi[axis] - self.lo[axis] + 1
    }

    pub fn point_count(&self) -> usize {
        (0..self.dim()).map(|i| self.side(i) as usize).product()
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        p.scale == self.scale
            && p.coords
                .iter()
                .enumerate()
                .all(|(i, &c)| self.lo[i] <= c && c <= self.hi[i])
    }

    /// Wraps a point into the window (torus topology); returns `None` for
    /// out-of-window points under absorbing topology.
    pub fn resolve(&self, p: &LatticePoint) -> Option<LatticePoint> {
        match self.topology {
            Topology::Absorbing => {
                if self.contains(p) {
                    Some(p.clone())
                } else {
                    None
                }
            }
            Topology::Torus => {
                let coords = p
                    .coords
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let side = self.side(i);
                        self.lo[i] + (c - self.lo[i]).rem_euclid(side)
                    })
                    .collect();
                Some(LatticePoint {
                    coords,
                    scale: self.scale,
                })
            }
        }
    }

    /// Lexicographic (row-major) index of a window point.
    pub fn index_of(&self, p: &LatticePoint) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = 0usize;
        for i in 0..self.dim() {
            idx = idx * self.side(i) as usize + (p.coords[i] - self.lo[i]) as usize;
        }
        Some(idx)
    }

    pub fn point_at(&self, mut idx: usize) -> LatticePoint {
        let d = self.dim();
        let mut coords = vec![0i64; d];
        for i in (0..d).rev() {
            let side = self.side(i) as usize;
            coords[i] = self.lo[i] + (idx % side) as i64;
            idx /= side;
        }
        LatticePoint {
            coords,
            scale: self.scale,
        }
    }

    /// All points of the window in lexicographic order.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.point_count()).map(|i| self.point_at(i))
    }

    /// The window shrunk by `margin` lattice steps on every side, or `None`
    /// if nothing is left.
    pub fn shrink(&self, margin: i64) -> Option<Window> {
        let lo: Vec<i64> = self.lo.iter().map(|&l| l + margin).collect();
        let hi: Vec<i64> = self.hi.iter().map(|&h| h - margin).collect();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return None;
        }
        Some(Window::new(self.scale, lo, hi, self.topology))
    }

    /// Minimal torus displacement from `a` to `b` in lattice steps.
    pub fn displacement(&self, a: &LatticePoint, b: &LatticePoint) -> Vec<i64> {
        match self.topology {
            Topology::Absorbing => a
                .coords
                .iter()
                .zip(&b.coords)
                .map(|(&x, &y)| y - x)
                .collect(),
            Topology::Torus => (0..self.dim())
                .map(|i| {
                    let side = self.side(i);
                    let mut d = (b.coords[i] - a.coords[i]).rem_euclid(side);
                    if 2 * d > side {
                        d -= side;
                    }
                    d
                })
                .collect(),
        }
    }
}

/// Norm used for ball membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Euclidean,
    Sup,
}

/// Open ball `{x : |x - center| < radius}` on the lattice.
#[derive(Debug, Clone)]
pub struct Ball {
    pub center: LatticePoint,
    pub radius: f64,
    pub norm: Norm,
}

impl Ball {
    pub fn new(center: LatticePoint, radius: f64, norm: Norm) -> Self {
        assert!(radius > 0.0, "ball radius must be positive");
        Self {
            center,
            radius,
            norm,
        }
    }

    /// Strict membership test.
    pub fn contains(&self, p: &LatticePoint) -> bool {
        let d = match self.norm {
            Norm::Euclidean => self.center.dist(p),
            Norm::Sup => self.center.dist_sup(p),
        };
        d < self.radius
    }
}

/// `[x]_n`: componentwise `⌊n·x_i⌋ / n`. Total and idempotent on lattice points.
pub fn round_to_lattice(x: &[f64], n: u32) -> LatticePoint {
    let nf = n as f64;
    LatticePoint {
        coords: x.iter().map(|&xi| (nf * xi).floor() as i64).collect(),
        scale: n,
    }
}

/// Window points strictly inside the ball, in lexicographic order.
pub fn ball_points(b: &Ball, w: &Window) -> Vec<LatticePoint> {
    w.points().filter(|p| b.contains(p)).collect()
}

/// `μ⁽ⁿ⁾` mass of a point set: `count · n⁻ᵈ`.
pub fn measure(points: &[LatticePoint], n: u32) -> Result<f64, LabError> {
    if let Some(p) = points.iter().find(|p| p.scale != n) {
        return Err(LabError::ScaleMismatch {
            expected: n,
            found: p.scale,
        });
    }
    let d = points.first().map(|p| p.dim()).unwrap_or(0);
    Ok(points.len() as f64 * (n as f64).powi(-(d as i32)))
}
