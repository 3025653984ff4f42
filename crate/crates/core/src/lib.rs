//! Numerical laboratory for nonsymmetric Markov chains on the scaled
//! lattice `n⁻¹ℤᵈ`: kernel construction, assumption checking, generator
//! assembly, exact simulation, and convergence experiments.

pub mod builders;
pub mod chain;
pub mod conductance;
pub mod convergence;
pub mod error;
pub mod lattice;
pub mod operator;
pub mod snnp;

pub use conductance::{
    check_ctail, check_k1, check_k2, check_nnrw, check_poinc_sampled, decompose, second_moment,
    AssumptionReport, Conductance, DecomposedConductance, Kernel,
};
pub use error::LabError;
pub use lattice::{
    ball_points, measure, round_to_lattice, Ball, LatticePoint, Norm, Topology, Window,
};
