//! Structured H2 synthesis and coherence scaling analysis for
//! one-dimensional vehicle platoons with nearest-neighbor feedback.
//!
//! The crate designs optimal localized feedback gains for single- and
//! double-integrator formations (convex symmetric design and a
//! homotopy-based Newton method for non-symmetric gains), evaluates the
//! formation-size-normalized performance measures through dense Lyapunov
//! solves, and sweeps formation size to recover the coherence scaling laws.

pub mod error;
pub mod homotopy;
pub mod lyapunov;
pub mod model;
pub mod parallel;
pub mod scaling;
pub mod simulate;
pub mod symmetric;

pub use error::{Error, Result};
pub use lyapunov::{
    gramians, objective_j, performance, solve_lyapunov, GramianPair, PerformanceReport,
};
pub use model::{
    assemble, build_cf, build_t, check_structural_stability, ClosedLoopSystem, FormationSpec,
    ModelKind, StabilityVerdict, StateWeight, StructuredGain, WeightKind,
};
