use thiserror::Error;

/// Errors shared across the laboratory modules.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("scale mismatch: expected n={expected}, found n={found}")]
    ScaleMismatch { expected: u32, found: u32 },

    #[error("window margin insufficient for radius {radius}")]
    WindowMargin { radius: f64 },

    #[error("conductance invariant breached: {0}")]
    InvariantBreach(String),

    #[error("SNNP recovery requires bounded range")]
    UnboundedRange,

    #[error("SNNP range bound {0} exceeds supported maximum 4")]
    RangeTooLarge(f64),

    #[error("window does not contain the SNNP hull of the pair")]
    HullOutsideWindow,

    #[error("boundary leakage unmodeled: window smaller than conductance range in absorbing full mode")]
    BoundaryLeakage,

    #[error("scheme requires diagonally dominant a: ellipticity margin {margin} <= 0 at {location}")]
    NotDiagonallyDominant { margin: f64, location: String },

    #[error("quadrature nonconvergence for pair ({x}, {y}): relative change {change}")]
    QuadratureNonconvergence { x: String, y: String, change: f64 },

    #[error("solver stagnation: residual {residual} after {iterations} iterations")]
    SolverStagnation { residual: f64, iterations: usize },

    #[error("uniformization tolerance unreachable: achieved bound {achieved} > tol {tol}")]
    ToleranceUnreachable { achieved: f64, tol: f64 },

    #[error("singular system: absorbing set unreachable from some state")]
    SingularSystem,

    #[error("boundary influence exceeds 1%: window too small for resolvent decay")]
    BoundaryInfluence,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
