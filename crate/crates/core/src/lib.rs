//! Hybrid simulation and necessary-condition certification for single-input
//! control-affine systems whose optimal inputs are bang-ride: at almost every
//! time either an input bound or a path constraint is active.
//!
//! The typical pipeline is
//!
//! 1. build an [`OCProblem`] (by hand, from the [`problems`] registry, or from a
//!    JSON scenario),
//! 2. simulate the maximum-feasible-input policy with [`hybrid_simulate`],
//! 3. integrate the costate backwards and check the monotonicity assumptions
//!    with [`certify_necessary_optimality`],
//! 4. optionally compare against the brute-force [`oracle`].

pub mod battery;
pub mod certify;
pub mod cli;
pub mod costate;
pub mod error;
pub mod hybridsim;
pub mod integrate;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod trajectory;

pub use certify::{certify_necessary_optimality, Certificate, Route, Verdict};
pub use costate::{costate_integrate, CostateTrajectory};
pub use error::{Error, Result};
pub use hybridsim::hybrid_simulate;
pub use integrate::{simulate, Policy, SimOptions};
pub use model::{
    max_feasible_input, Constraint, ConstraintKind, OCProblem, ScalarField, SystemModel, Vector,
};
pub use trajectory::{Event, EventKind, Trajectory};
