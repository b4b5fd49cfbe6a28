//! Certification and refutation of first- and second-order KKT necessary
//! conditions for continuous-time programs
//!
//! ```text
//! maximize   P(z) = ∫₀ᵀ φ(z(t), t) dt
//! subject to h(z(t), t) = 0,  g(z(t), t) ≥ 0   for a.e. t ∈ [0, T]
//! ```
//!
//! over bounded trajectories `z : [0, T] → ℝⁿ`. Constraints act pointwise in
//! time, so every condition is checked node by node on a time grid and the
//! objective is integrated with the trapezoid rule.

pub mod certify;
pub mod expr;
pub mod improve;
pub mod linalg;
pub mod model;
pub mod selftest;
pub mod soc;
pub mod solver;
