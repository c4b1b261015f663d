//! Structure-preserving finite differences for a two-species
//! chemotaxis-consumption system and its saturated regularization.
//!
//! * [`grid`]: cell-centered rectangles and discrete calculus
//! * [`regularization`]: the `F_ε` family
//! * [`model`]: parameters, states, initial data
//! * [`solver`]: conservative forward-Euler stepping
//! * [`diagnostics`]: functionals, identities and inequalities on snapshots

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod grid;
pub mod model;
pub mod regularization;
pub mod solver;

pub use diagnostics::{
    DiagnosticsConfig, DiagnosticsContext, DiagnosticsRecord, Guard, IdentityTracker,
    WeakFormAccumulator, WeightedExponents,
};
pub use grid::{Field, Grid};
pub use model::{make_initial, InitialData, Means, Params, ProblemSpec, Profile, State};
pub use regularization::Regularization;
pub use solver::{advance, reference_solve, stable_dt, step, Simulation, StepPolicy};
