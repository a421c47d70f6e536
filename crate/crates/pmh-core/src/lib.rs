//! Numerical homogenization of porous-medium type diffusion with random
//! coefficients.
//!
//! The equation under study is `du/dt = Laplacian(f(y, u))` on a line, where
//! the flux `f(y, u) = a(y) * u * |u|^gamma(y) + b(y)` oscillates on a small
//! spatial scale through stationary random coefficient fields. The crate
//! provides:
//!
//! * ensembles of coefficient fields (periodic, almost periodic, random
//!   Fourier, finite-atom) with exact shift stationarity ([`medium`]),
//! * the pointwise flux, its monotone inverse, and the effective flux
//!   obtained by averaging the inverse over the ensemble ([`flux`]),
//! * an implicit finite-volume solver for the degenerate diffusion, with
//!   periodic or stationary Dirichlet boundaries ([`solver`]),
//! * kinetic-formulation diagnostics: defect measure histograms, bounds,
//!   weak-form residuals, entropy identities and layer-cake reconstruction
//!   ([`kinetic`]),
//! * convergence experiments that sweep the oscillation scale and compare
//!   oscillatory solutions against the homogenized limit and its corrector
//!   ([`experiment`]).

pub mod error;
pub mod experiment;
pub mod flux;
pub mod grid;
pub mod interp;
pub mod kinetic;
pub mod medium;
pub mod solver;

pub use error::{Error, Result};
pub use experiment::{ConvergenceReport, HomogenizationConfig, InitialProfile};
pub use flux::{CoefficientTriple, EffectiveFlux, ScalarFlux};
pub use grid::{Field, Grid1D, Trajectory};
pub use kinetic::{DefectBoundReport, KineticDefect, SmoothBump};
pub use medium::{Atom, MediumKind, MediumRealization, MediumSpec};
pub use solver::{BoundaryCondition, CoefficientField, FluxField, SolverConfig};
