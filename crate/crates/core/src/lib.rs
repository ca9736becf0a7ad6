//! Numerical laboratory for the radial equivariant wave map equation
//!
//! ```text
//! u_tt − u_rr − u_r / r = −f(u) / r²,   f = g g'
//! ```
//!
//! covering the 2D corotational sphere target and radial 4D Yang-Mills.
//! The crate computes the harmonic map threshold, evolves data below and at
//! that threshold in the regularized variable `v = u / r^k`, and measures the
//! functionals that separate scattering from stationary solutions.

pub mod diagnostics;
pub mod evolution;
pub mod experiments;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod harmonic_map;
pub mod quad;

pub use evolution::{
    evolve, linear_evolve, step, Boundary, Classification, EvolutionConfig, RunRecord,
};
pub use fields::{FieldState, RadialGrid};
pub use geometry::{check_assumptions, GeometrySpec, TargetGeometry};
pub use harmonic_map::{solve_q, HarmonicMapProfile};

/// Shortest round-trip decimal rendering used for every CSV cell.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
