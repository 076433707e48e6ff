//! Generalized forgetting recursive least squares (GF-RLS).
//!
//! One parametric recursive estimator whose per-step forgetting matrix
//! `F_k` selects among the classical RLS forgetting schemes, together with
//! the machinery to check its stability and robustness conditions on a
//! recorded trajectory:
//!
//! - [`linalg`]: small dense symmetric / SPD matrix kernel.
//! - [`estimator`]: the information-form update, step diagnostics and the
//!   batch least-squares oracle.
//! - [`forgetting`]: the ten published forgetting laws behind one trait.
//! - [`excitation`]: weighted regressors and persistent-excitation certificates.
//! - [`guarantees`]: condition profiling, stability tiers, ultimate bounds and
//!   Lyapunov-decrement checks.
//! - [`simulation`]: bounded-noise scenario generator and run analysis.
//!
//! Data-parallel loops (scenario grids, window scans, per-step checks) run on
//! rayon when the default `parallel` feature is enabled and fall back to plain
//! iterators otherwise. Results are identical either way.

// Comparisons are written as `!(x > t)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod excitation;
pub mod forgetting;
pub mod guarantees;
pub mod linalg;
pub mod par;
pub mod simulation;
pub mod trajectory;

pub use error::{Error, Result};
pub use estimator::{BatchAccumulator, EstimatorState, Sample, StepDiagnostics};
pub use excitation::ExcitationReport;
pub use forgetting::{Forgetting, ForgettingDirective, StrategyContext, StrategySpec, StrategyTag};
pub use guarantees::{ConditionProfile, NoiseProfile, RobustnessBound, StabilityTier};
pub use linalg::{RectMatrix, SpdMatrix, SymMatrix, Vector};
pub use trajectory::Trajectory;
