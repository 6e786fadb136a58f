//! Pseudospectral solvers for the periodic cubic Schrödinger equation with
//! rough potentials,
//!
//! ```text
//! i ∂_t u + ∂_x² u + ξ(x) u = λ |u|² u,   x ∈ (-π, π),
//! ```
//!
//! together with the diagnostics and experiment harness used to study them.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod integrators;
pub mod linalg;
pub mod potentials;
pub mod spectral;

pub use analysis::{
    convergence_order, decay_slope, energy, mass, norm_inflation_curve, relative_l2_error, second_iterate_a2,
    ConvergenceFit, DecayFit, IllposedFamily, IllposedSpec, InflationPoint,
};
pub use error::{Error, Result};
pub use harness::{preset, run_experiment, ExperimentKind, ExperimentSpec, Overrides, ResultRecord};
pub use integrators::{evolve, SchemeId, Stepper, StepperConfig};
pub use potentials::{Interval, Potential, PotentialKind, RoughInitSpec};
pub use spectral::{make_grid, Grid, SpectralField};
