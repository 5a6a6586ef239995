//! Centralized tolerance constants.
//!
//! Every numeric threshold used by the library and its test suites lives
//! here so that no module carries ad-hoc magic numbers.

/// Relative tolerance for exact algebraic identities evaluated in f64
/// (unit construction, stiffness round-trips).
pub const EXACT_REL: f64 = 1e-12;

/// Absolute tolerance for quantities that should vanish identically
/// (gradients at analytic minima, antisymmetric sums).
pub const EXACT_ABS: f64 = 1e-10;

/// Relative tolerance for central finite-difference gradient checks.
pub const FD_GRADIENT_REL: f64 = 1e-6;

/// Relative tolerance for finite-difference checks of glue energies.
pub const FD_GLUE_REL: f64 = 1e-5;

/// Central-difference step is `FD_STEP_SCALE * max(1, |x|)`.
pub const FD_STEP_SCALE: f64 = 1e-5;

/// Tolerance for rotation recovery and rigid-motion invariance checks.
pub const ROTATION_ABS: f64 = 1e-9;

/// Periodicity defect allowed for angle-periodic potentials.
pub const PERIODIC_ABS: f64 = 1e-12;

/// Sup-norm slack factor for declared drift-perturbation bounds.
pub const PERTURBATION_SLACK: f64 = 1e-9;

/// Eigenvalue floor for positive-semidefiniteness checks.
pub const PSD_FLOOR: f64 = -1e-10;

/// Default stabilizer added to radial glue distances.
pub const RADIAL_GLUE_EPS: f64 = 1e-9;
