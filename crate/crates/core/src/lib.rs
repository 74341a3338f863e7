//! Defect accumulation, Lyapunov profiles and defect shapes for binary
//! cellular automata.
//!
//! Module map: [`rules`] (local rules and lattices), [`dynamics`] (defect,
//! percolation and damage dynamics plus the run driver), [`profiles`]
//! (empirical and additive profiles, shapes, maximal exponents), [`classify`]
//! (certificates and empirical classification), [`floquet`] (exact
//! profiles on periodic backgrounds), [`shapes2d`] (half-space velocities and
//! polar shapes in two dimensions).

pub mod classify;
pub mod dynamics;
pub mod floquet;
pub mod jsonf64;
pub mod profiles;
pub mod rules;
pub mod shapes2d;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
